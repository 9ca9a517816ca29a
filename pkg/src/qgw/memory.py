"""Peak-allocation tracking used by the scaling benchmark."""

from __future__ import annotations

import tracemalloc
from contextlib import contextmanager
from dataclasses import dataclass


@dataclass
class AllocationStats:
    peak_bytes: int = 0

    @property
    def peak_values(self) -> int:
        """Peak traced bytes expressed as float64 values."""
        return self.peak_bytes // 8

    def could_hold_square(self, n_x: int, n_y: int) -> bool:
        """Whether the peak is large enough for any ``n_x x n_y`` array.

        One byte per entry is the smallest numpy element, so a peak below
        ``n_x * n_y`` bytes proves no such array (of any dtype) was alive.
        """
        return self.peak_bytes >= n_x * n_y


@contextmanager
def track_allocations():
    """Record the peak traced heap growth inside the ``with`` block."""
    started = not tracemalloc.is_tracing()
    if started:
        tracemalloc.start()
    tracemalloc.reset_peak()
    base = tracemalloc.get_traced_memory()[0]
    stats = AllocationStats()
    try:
        yield stats
    finally:
        stats.peak_bytes = max(0, tracemalloc.get_traced_memory()[1] - base)
        if started:
            tracemalloc.stop()
