"""Shared fixtures for conefrac tests."""

from pathlib import Path
from typing import Callable

import numpy as np
import pytest

from conefrac.domain.models import CohesiveBlock, MaterialBlock, RunConfig
from conefrac.services.material import CohesiveParams
from conefrac.services.mesh import FracturedMesh, Mesh, insert_interfaces, load_mesh

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


@pytest.fixture
def strip_mesh() -> Mesh:
    return load_mesh(FIXTURES / "strip.mesh")


@pytest.fixture
def strip_fmesh(strip_mesh: Mesh) -> FracturedMesh:
    return insert_interfaces(strip_mesh)


@pytest.fixture
def single_fmesh() -> FracturedMesh:
    return insert_interfaces(load_mesh(FIXTURES / "single_tri6.mesh"))


@pytest.fixture
def steel() -> MaterialBlock:
    return MaterialBlock(name="steel", E=2.0e11, nu=0.3, rho=7800.0)


@pytest.fixture
def soft() -> MaterialBlock:
    return MaterialBlock(name="soft", E=1.0e3, nu=0.25, rho=1.0)


@pytest.fixture
def pmma() -> CohesiveParams:
    return CohesiveParams.from_block(CohesiveBlock(sigma_c=105.0e6, G_c=352.0))


@pytest.fixture
def patch_config() -> RunConfig:
    return RunConfig.from_toml(FIXTURES / "patch.toml")


@pytest.fixture
def impact_config() -> RunConfig:
    return RunConfig.from_toml(FIXTURES / "impact.toml")


def central_gradient(f: Callable[[np.ndarray], float], x: np.ndarray, h: float) -> np.ndarray:
    """Central finite-difference gradient of a scalar function."""
    g = np.zeros_like(x)
    for k in range(len(x)):
        e = np.zeros_like(x)
        e[k] = h
        g[k] = (f(x + e) - f(x - e)) / (2.0 * h)
    return g


def assert_close_relative(actual: np.ndarray, expected: np.ndarray, rtol: float) -> None:
    """|actual - expected| <= rtol * max(|expected|, tiny) in the infinity norm."""
    scale = max(float(np.max(np.abs(expected))), 1e-30)
    assert float(np.max(np.abs(np.asarray(actual) - np.asarray(expected)))) <= rtol * scale


@pytest.fixture
def fd_gradient() -> Callable[..., np.ndarray]:
    return central_gradient


@pytest.fixture
def assert_relative() -> Callable[..., None]:
    return assert_close_relative
