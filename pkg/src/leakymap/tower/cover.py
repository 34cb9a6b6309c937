"""Reference tiles covering the surviving part of the dynamical range."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..intervals import OpenIntervalSet, QuadMap


class CoverError(ValueError):
    """The hole geometry is too fine for the requested tile size."""


@dataclass(frozen=True)
class ReferenceCover:
    """Closed tiles ``[lo[i], hi[i]]`` in increasing order, each of width in [eps, 2 eps]."""

    lo: np.ndarray
    hi: np.ndarray
    eps: float
    delta: float

    def __len__(self) -> int:
        return int(self.lo.size)

    @property
    def widths(self) -> np.ndarray:
        return self.hi - self.lo

    @property
    def total(self) -> float:
        return float(self.widths.sum())

    @property
    def near_critical(self) -> np.ndarray:
        """True for tiles inside (-delta, delta)."""
        mid = 0.5 * (self.lo + self.hi)
        return np.abs(mid) < self.delta

    def tile(self, i: int) -> tuple[float, float]:
        return float(self.lo[i]), float(self.hi[i])


def build_reference_cover(
    qmap: QuadMap, hole: OpenIntervalSet, eps: float, delta: float
) -> ReferenceCover:
    """Tile ``[1-a, 1]`` minus the hole, cutting at 0 and +-delta.

    Each maximal segment of length L is split into ``floor(L/eps)`` equal
    tiles, so every tile width lies in [eps, 2 eps).
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    lo0, hi0 = qmap.invariant_range
    cuts = sorted({c for c in (-delta, 0.0, delta) if lo0 < c < hi0})
    los, his = [], []
    for a, b in hole.gaps(lo0, hi0):
        pts = [a] + [c for c in cuts if a < c < b] + [b]
        for s, e in zip(pts[:-1], pts[1:]):
            L = e - s
            m = int(math.floor(L / eps * (1 + 1e-12)))
            if m < 1:
                raise CoverError(
                    f"segment [{s}, {e}] of length {L:.3g} is shorter than eps={eps:.3g}"
                )
            edges = np.linspace(s, e, m + 1)
            edges[0], edges[-1] = s, e
            los.append(edges[:-1])
            his.append(edges[1:])
    return ReferenceCover(np.concatenate(los), np.concatenate(his), float(eps), float(delta))


def location_matched_seeds(cover: ReferenceCover, n: int, lo: float = -1.0, hi: float = 1.0) -> np.ndarray:
    """Tiles under ``n`` evenly spaced points of ``(lo, hi)``, deduplicated.

    Two covers of the same interval sampled this way see seeds at the same
    positions, which keeps comparisons between nearby holes paired.
    """
    if n < 1:
        raise ValueError("n must be positive")
    xs = np.linspace(lo, hi, n + 2)[1:-1]
    idx = np.clip(np.searchsorted(cover.lo, xs, side="right") - 1, 0, len(cover) - 1)
    return np.unique(idx)
