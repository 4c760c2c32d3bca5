"""Operator CLI: review tokens, lifecycle transitions, anchors, audits and snapshots."""
from __future__ import annotations

import argparse
import logging
from pathlib import Path
import sys
from typing import Any, Optional, Sequence

from app.config import load_settings
from app.main import configure_logging
from app.schemas import EventKind, IdempotenceKey, LifecycleState
from orchestrator.exceptions import MemctlError
from services.codec import canonical_text
from services.container import AppContainer
from services.state import StoreState, apply_event

logger = logging.getLogger(__name__)


def audit_log(container: AppContainer) -> dict[str, Any]:
    """Full-log scan for link idempotence plus a from-scratch replay comparison."""

    store = container.store
    replayed = StoreState.empty(store.initial_bandit)
    link_tokens: dict[str, int] = {}
    kinds: dict[str, int] = {}
    for record in store.iter_records():
        kinds[record.kind.value] = kinds.get(record.kind.value, 0) + 1
        if record.kind is EventKind.DELAYED_LINK:
            token = IdempotenceKey.model_validate(record.payload["key"]).token()
            link_tokens[token] = link_tokens.get(token, 0) + 1
        apply_event(replayed, record)
    duplicates = sorted(token for token, count in link_tokens.items() if count > 1)
    replay_equal = replayed.model_dump(mode="json") == store.state.model_dump(mode="json")
    return {
        "events": sum(kinds.values()),
        "kinds": dict(sorted(kinds.items())),
        "duplicate_links": duplicates,
        "replay_equal": replay_equal,
        "ok": not duplicates and replay_equal,
    }


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="memctl-admin", description="memctl operator commands")
    parser.add_argument("--config", help="JSON config file (defaults to $MEMCTL_CONFIG)")
    commands = parser.add_subparsers(dest="command", required=True)

    token = commands.add_parser("issue-token", help="sign a review token for one memory")
    token.add_argument("--reviewer", required=True)
    token.add_argument("--memory-id", required=True)

    transition = commands.add_parser("transition", help="move a memory to another lifecycle state")
    transition.add_argument("--memory-id", required=True)
    transition.add_argument("--state", required=True, choices=[state.value for state in LifecycleState])
    transition.add_argument("--token", default=None)
    transition.add_argument("--actor", default="admin")

    anchors = commands.add_parser("anchors", help="theory anchor registry")
    anchor_commands = anchors.add_subparsers(dest="anchor_command", required=True)
    export = anchor_commands.add_parser("export")
    export.add_argument("--out", type=Path, default=None)
    imported = anchor_commands.add_parser("import")
    imported.add_argument("path", type=Path)
    imported.add_argument("--actor", default="admin")
    anchor_commands.add_parser("list")

    commands.add_parser("audit", help="check link idempotence and replay equality")
    commands.add_parser("snapshot", help="write snapshot.json for the current log")
    return parser


def run(args: argparse.Namespace, container: AppContainer) -> int:
    if args.command == "issue-token":
        print(container.governance.tokens.issue(args.reviewer, args.memory_id))
        return 0

    container.store.open()
    try:
        if args.command == "transition":
            state = container.governance.transition_lifecycle(
                args.memory_id, LifecycleState(args.state), args.actor, args.token
            )
            print(canonical_text({"memory_id": args.memory_id, "lifecycle": state}))
        elif args.command == "anchors":
            if args.anchor_command == "export":
                data = container.anchors.export()
                if args.out:
                    args.out.write_bytes(data + b"\n")
                else:
                    sys.stdout.write(data.decode("utf-8") + "\n")
            elif args.anchor_command == "import":
                entries = container.governance.import_anchors(args.path, args.actor)
                print(canonical_text({"imported": [entry.obligation_id for entry in entries]}))
            else:
                for entry in container.anchors.entries().values():
                    print(f"{entry.obligation_id}\t{entry.obligation.objective}\t{len(entry.anchors)} anchors")
        elif args.command == "audit":
            report = audit_log(container)
            print(canonical_text(report))
            return 0 if report["ok"] else 1
        elif args.command == "snapshot":
            print(container.store.write_snapshot())
    finally:
        container.store.close()
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    settings = load_settings(args.config)
    configure_logging(settings.log_level)
    try:
        return run(args, AppContainer(settings))
    except MemctlError as exc:
        logger.error("%s (%s)", exc, exc.reason)
        return 2


if __name__ == "__main__":
    sys.exit(main())
