"""
Pytest configuration and shared fixtures.

Solved comb maps are expensive, so they are session-scoped; everything else is
rebuilt per test.
"""

import tempfile
from collections.abc import Callable, Generator
from pathlib import Path

import pytest

from escapedim.acceptance import power_law_atlas
from escapedim.comb_conformal import (
    ConformalMapHandle,
    build_comb_from_sector,
    build_conformal_map,
    build_uniform_comb,
)
from escapedim.config import MapOptions
from escapedim.elliptic_core import EllipticConfig
from escapedim.speiser_constructions import PoleAtlas


@pytest.fixture(autouse=True)
def clean_environment(monkeypatch: pytest.MonkeyPatch) -> None:
    """Keep ESCAPEDIM_* variables from the shell out of every test."""
    for name in ("ESCAPEDIM_WORKERS", "ESCAPEDIM_M", "ESCAPEDIM_RHO", "ESCAPEDIM_RADIUS"):
        monkeypatch.delenv(name, raising=False)


@pytest.fixture
def temp_dir() -> Generator[Path, None, None]:
    """
    Create a temporary directory for testing.

    Yields:
        Path: Path to temporary directory
    """
    with tempfile.TemporaryDirectory() as tmpdir:
        yield Path(tmpdir)


@pytest.fixture
def elliptic_config() -> EllipticConfig:
    return EllipticConfig(M=1)


@pytest.fixture
def synthetic_atlas() -> Callable[..., PoleAtlas]:
    """
    Factory for power-law atlases |a_j| = j, |b_j| = j^gamma.

    Examples:
        >>> def test_half(synthetic_atlas):
        ...     atlas = synthetic_atlas(1 << 12, gamma=0.0)
    """

    def make(count: int = 1 << 14, gamma: float = 0.0, M: int = 1) -> PoleAtlas:
        return power_law_atlas(count, gamma, M)

    return make


@pytest.fixture(scope="session")
def sector_map() -> ConformalMapHandle:
    """Comb map of order 1/2 from the sector construction."""
    return build_conformal_map(build_comb_from_sector(0.5), MapOptions())


@pytest.fixture(scope="session")
def uniform_map() -> ConformalMapHandle:
    """Comb map with all teeth at length zero; g is a cosine."""
    return build_conformal_map(build_uniform_comb(), MapOptions())
