"""memctl-bench: generate, replay and summarize the benchmark suite."""
from __future__ import annotations

import argparse
from functools import partial
import logging
from pathlib import Path
import sys
import tempfile
from typing import Optional, Sequence

import anyio
from jinja2 import Environment, FileSystemLoader, select_autoescape

from app.main import configure_logging
from bench.cases import read_cases, write_cases
from bench.generator import generate_cases
from bench.metrics import RunReport, summary_rows
from bench.replay import load_config, replay, resolve_mode
from orchestrator.exceptions import MemctlError
from services.codec import canonical_loads, canonical_text

logger = logging.getLogger(__name__)

DEFAULT_SEED = 20240601
TEMPLATES_DIR = Path(__file__).resolve().parent / "templates"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="memctl-bench", description="memctl benchmark harness")
    parser.add_argument("--log-level", default="INFO")
    commands = parser.add_subparsers(dest="command", required=True)

    generate = commands.add_parser("generate", help="write a deterministic case file")
    generate.add_argument("--seed", type=int, default=DEFAULT_SEED)
    generate.add_argument("--out", type=Path, required=True)

    run = commands.add_parser("replay", help="replay a case file in one mode")
    run.add_argument("--cases", type=Path, required=True)
    run.add_argument("--mode", default="offline_full")
    run.add_argument("--config", type=Path, default=None, help="server config JSON (defaults to the bench profile)")
    run.add_argument("--report", type=Path, required=True)
    run.add_argument("--workdir", type=Path, default=None, help="keep the run's event store here")

    summarize = commands.add_parser("summarize", help="render a Markdown summary of a report")
    summarize.add_argument("--report", type=Path, required=True)
    summarize.add_argument("--out", type=Path, default=None)
    return parser


def render_summary(report: RunReport) -> str:
    env = Environment(
        loader=FileSystemLoader(TEMPLATES_DIR),
        autoescape=select_autoescape(["html", "j2"]),
    )
    template = env.get_template("summary.md.j2")
    misses = [verdict for verdict in report.verdicts if not verdict.correct]
    return template.render(report=report, rows=summary_rows(report), misses=misses)


async def _replay(args: argparse.Namespace) -> RunReport:
    _, cases = read_cases(args.cases)
    mode = resolve_mode(args.mode)
    config = load_config(args.config)
    if args.workdir:
        args.workdir.mkdir(parents=True, exist_ok=True)
        return await replay(cases, mode, config, args.workdir)
    with tempfile.TemporaryDirectory(prefix="memctl-bench-") as tmp:
        return await replay(cases, mode, config, Path(tmp))


def run(args: argparse.Namespace) -> int:
    if args.command == "generate":
        header, cases = generate_cases(args.seed)
        path = write_cases(args.out, header, cases)
        logger.info("wrote %s cases to %s", len(cases), path)
        return 0
    if args.command == "replay":
        report = anyio.run(partial(_replay, args))
        args.report.parent.mkdir(parents=True, exist_ok=True)
        args.report.write_text(canonical_text(report) + "\n", encoding="utf-8")
        return 0
    report = RunReport.model_validate(canonical_loads(args.report.read_text(encoding="utf-8")))
    text = render_summary(report)
    if args.out:
        args.out.write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    try:
        return run(args)
    except (MemctlError, ValueError) as exc:
        logger.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
