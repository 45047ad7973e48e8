from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from staircase_lab import (
    LatticeSpec,
    SpectrumModel,
    build_fermi_hubbard,
    build_synthetic_spectrum,
    diagonalize,
)

FH22 = LatticeSpec(lx=2, ly=2, n_up=2, n_down=2, t_hop=1.0, u=2.0, mu=0.0)
FH23 = LatticeSpec(lx=2, ly=3, n_up=3, n_down=3, t_hop=1.0, u=2.0, mu=0.0)


@pytest.fixture(scope="session")
def fh22() -> SpectrumModel:
    """2x2 half-filled Hubbard sector (D = 36), trace mode."""
    return diagonalize(build_fermi_hubbard(FH22))


@pytest.fixture(scope="session")
def fh23() -> SpectrumModel:
    """2x3 half-filled Hubbard sector (D = 400), trace mode."""
    return diagonalize(build_fermi_hubbard(FH23))


def two_level(gap: float = 1.0, e0: float = 0.0, g0: int = 1, g1: int = 1) -> SpectrumModel:
    return build_synthetic_spectrum([(e0, g0), (e0 + gap, g1)])


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240817)
