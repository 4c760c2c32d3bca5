"""Canonical JSON encoding tests."""

import math

import numpy as np
import pytest

from app.schemas import DecisionKind, SessionInfo
from services.codec import canonical_dumps, canonical_loads, canonical_text


def test_keys_are_sorted_without_whitespace():
    """Nested dict keys come out sorted with no spaces."""

    assert canonical_text({"b": 1, "a": {"d": [1, 2], "c": None}}) == '{"a":{"c":null,"d":[1,2]},"b":1}'


def test_reals_keep_a_decimal_point():
    """Integral floats stay distinguishable from integers."""

    assert canonical_text(1.0) == "1.0"
    assert canonical_text(1) == "1"
    assert canonical_text(0.1) == "0.10000000000000001"


def test_non_finite_reals_are_rejected():
    """NaN and infinities have no canonical form."""

    with pytest.raises(ValueError):
        canonical_text(math.nan)
    with pytest.raises(ValueError):
        canonical_text({"x": math.inf})


def test_models_enums_and_numpy_values_encode():
    """Pydantic models, enums and numpy scalars go through their JSON form."""

    assert canonical_text(SessionInfo(session_id="s", user_id="u")) == '{"session_id":"s","user_id":"u"}'
    assert canonical_text(DecisionKind.MATCH) == '"match"'
    assert canonical_text(np.float64(0.5)) == "0.5"
    assert canonical_text(np.array([1, 2])) == "[1,2]"


def test_equal_values_give_equal_bytes():
    """Key insertion order never leaks into the encoding."""

    left = {"x": 1, "y": [True, False], "z": "ü"}
    right = {"z": "ü", "y": [True, False], "x": 1}
    assert canonical_dumps(left) == canonical_dumps(right)
    assert canonical_loads(canonical_dumps(left)) == left


def test_unknown_types_raise():
    """Arbitrary objects are refused instead of stringified."""

    with pytest.raises(TypeError):
        canonical_text(object())
