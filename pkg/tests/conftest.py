"""Test Configuration."""

from __future__ import annotations

import json
import typing as t
from pathlib import Path

import numpy as np
import pytest

from amv_lab.heisenberg import generate_constants, write_constants
from amv_lab.spaces import euclidean_lebesgue, weighted_lebesgue

SAMPLES = Path(__file__).parent / "samples"


def data_file(file_name: str) -> Path:
    """Path of a config in ``tests/samples``."""
    return SAMPLES / file_name


def load_data_file(file_name: str) -> dict[str, t.Any]:
    """Parsed JSON config from ``tests/samples``."""
    return json.loads(data_file(file_name).read_text(encoding="utf-8"))


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def plane():
    return euclidean_lebesgue(2)


@pytest.fixture(scope="session")
def line():
    return euclidean_lebesgue(1)


@pytest.fixture(scope="session")
def bose_space():
    return weighted_lebesgue(2, "bose_weight")


@pytest.fixture(scope="session")
def constants_file(tmp_path_factory) -> Path:
    """A small Heisenberg constants file (2·10^5 draws)."""
    path = tmp_path_factory.mktemp("constants") / "heisenberg_constants.json"
    write_constants(generate_constants(200_000, seed=7), path)
    return path


@pytest.fixture()
def eval_config() -> dict[str, t.Any]:
    return load_data_file("eval_euclid.json")
