"""
Shared helpers: worker resolution, chunked parallel maps and canonical ordering.
"""

import os
import platform
import sys
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from typing import Any, TypeVar

import numpy as np
import numpy.typing as npt

from .config import WorkerSettings
from .logging_config import get_logger

logger = get_logger(__name__)

T = TypeVar("T")
R = TypeVar("R")


class PlatformInfo:
    """Information about the interpreter and numerical stack in use."""

    def __init__(self) -> None:
        self.system = platform.system()
        self.machine = platform.machine()
        self.python_version = sys.version.split()[0]
        self.cpu_count = os.cpu_count() or 1
        self.numpy_version = np.__version__

    def __repr__(self) -> str:
        return (
            f"PlatformInfo(system={self.system}, machine={self.machine}, "
            f"python={self.python_version}, cpus={self.cpu_count})"
        )

    def as_dict(self) -> dict[str, Any]:
        return {
            "system": self.system,
            "machine": self.machine,
            "python": self.python_version,
            "cpus": self.cpu_count,
            "numpy": self.numpy_version,
        }


def resolve_workers(requested: int | None = None) -> int:
    """
    Decide how many worker threads to use.

    An explicit request wins; otherwise ESCAPEDIM_WORKERS; otherwise 1.

    Examples:
        >>> resolve_workers(4)
        4
    """
    if requested is not None:
        if requested < 1:
            raise ValueError(f"worker count must be positive, got {requested}")
        return requested
    return WorkerSettings().workers


def chunked(items: Sequence[T], chunk_size: int) -> list[Sequence[T]]:
    """Split a sequence into consecutive chunks of at most chunk_size items."""
    if chunk_size < 1:
        raise ValueError("chunk_size must be positive")
    return [items[i : i + chunk_size] for i in range(0, len(items), chunk_size)]


def chunked_map(
    fn: Callable[[T], R],
    chunks: Sequence[T],
    workers: int | None = None,
) -> list[R]:
    """
    Apply fn to every chunk, in parallel when more than one worker is available.

    Results come back in chunk order whatever the schedule, so reductions over the
    returned list are deterministic.
    """
    n_workers = min(resolve_workers(workers), max(1, len(chunks)))
    if n_workers == 1:
        return [fn(chunk) for chunk in chunks]
    logger.debug(f"Mapping {len(chunks)} chunks over {n_workers} threads")
    with ThreadPoolExecutor(max_workers=n_workers) as pool:
        return list(pool.map(fn, chunks))


def canonical_order(locations: npt.NDArray[np.complex128]) -> npt.NDArray[np.intp]:
    """Indices sorting points by modulus, ties broken by argument in (-pi, pi]."""
    return np.lexsort((np.angle(locations), np.abs(locations)))


def dedup_sorted(
    locations: npt.NDArray[np.complex128], relative_distance: float
) -> npt.NDArray[np.bool_]:
    """
    Mask keeping the first of any cluster of canonically sorted points closer than
    relative_distance * |a|.

    Points that coincide have equal modulus up to the threshold, so only a window of
    neighbours with nearly equal modulus has to be compared.
    """
    n = len(locations)
    keep = np.ones(n, dtype=bool)
    if n < 2:
        return keep
    moduli = np.abs(locations)
    scale = relative_distance * np.maximum(moduli, 1.0)
    for i in range(1, n):
        j = i - 1
        while j >= 0 and moduli[i] - moduli[j] <= scale[i]:
            if keep[j] and abs(locations[i] - locations[j]) <= scale[i]:
                keep[i] = False
                break
            j -= 1
    return keep
