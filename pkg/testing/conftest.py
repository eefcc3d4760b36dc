"""Pytest configuration for module path setup and shared fixtures."""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

ROOT_DIR = Path(__file__).resolve().parents[1]
if str(ROOT_DIR) not in sys.path:
    sys.path.insert(0, str(ROOT_DIR))

from src.services.network import DataRecord, builtin_case, simulate  # noqa: E402


@pytest.fixture
def case1():
    return builtin_case("case1")


@pytest.fixture
def case2():
    return builtin_case("case2")


@pytest.fixture
def case1_data(case1):
    return simulate(case1, 200, seed=7)


@pytest.fixture
def random_record():
    """Three white-noise node signals, no references."""
    rng = np.random.default_rng(11)
    w = rng.standard_normal((40, 3))
    return DataRecord(w=w, r=np.zeros_like(w), seed=11)
