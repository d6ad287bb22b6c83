"""Tests for utility functions."""

import numpy as np
import pytest

from escapedim.utils import (
    PlatformInfo,
    canonical_order,
    chunked,
    chunked_map,
    dedup_sorted,
    resolve_workers,
)


class TestPlatformInfo:
    def test_fields(self) -> None:
        info = PlatformInfo()
        assert info.cpu_count >= 1
        assert set(info.as_dict()) == {"system", "machine", "python", "cpus", "numpy"}
        assert "PlatformInfo(" in repr(info)


class TestResolveWorkers:
    """Explicit request, then ESCAPEDIM_WORKERS, then 1."""

    def test_explicit(self) -> None:
        assert resolve_workers(4) == 4

    def test_default(self) -> None:
        assert resolve_workers() == 1

    def test_environment(self, monkeypatch: pytest.MonkeyPatch) -> None:
        monkeypatch.setenv("ESCAPEDIM_WORKERS", "3")
        assert resolve_workers() == 3
        assert resolve_workers(2) == 2

    def test_rejects_zero(self) -> None:
        with pytest.raises(ValueError, match="positive"):
            resolve_workers(0)


class TestChunking:
    def test_chunked(self) -> None:
        assert chunked([1, 2, 3, 4, 5], 2) == [[1, 2], [3, 4], [5]]

    def test_chunked_rejects_zero(self) -> None:
        with pytest.raises(ValueError):
            chunked([1], 0)

    def test_order_independent_of_workers(self) -> None:
        chunks = chunked(list(range(100)), 7)
        serial = chunked_map(sum, chunks, workers=1)
        parallel = chunked_map(sum, chunks, workers=4)
        assert serial == parallel
        assert sum(serial) == sum(range(100))


class TestCanonicalOrder:
    def test_modulus_then_argument(self) -> None:
        points = np.array([2.0 + 0j, -1.0 + 0j, 1.0j, 1.0 + 0j, -1.0j])
        ordered = points[canonical_order(points)]
        np.testing.assert_array_equal(ordered, [-1.0j, 1.0, 1.0j, -1.0, 2.0])


class TestDedupSorted:
    def test_drops_near_duplicates(self) -> None:
        points = np.array([1.0 + 0j, 1.0 + 1e-12j, 2.0 + 0j, 3.0j])
        points = points[canonical_order(points)]
        keep = dedup_sorted(points, 1e-8)
        assert int(np.sum(keep)) == 3

    def test_keeps_distinct(self) -> None:
        points = np.exp(2j * np.pi * np.arange(8) / 8)
        points = points[canonical_order(points)]
        assert dedup_sorted(points, 1e-8).all()

    def test_small_inputs(self) -> None:
        assert dedup_sorted(np.array([], dtype=np.complex128), 1e-8).size == 0
        assert dedup_sorted(np.array([1.0 + 0j]), 1e-8).all()
