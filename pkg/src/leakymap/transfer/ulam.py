"""Ulam discretisation of the transfer operator with a hole, and power iteration."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .. import kernels
from ..intervals import OpenIntervalSet, QuadMap


@dataclass(frozen=True)
class UlamGrid:
    """Uniform grid on ``[lo, hi]`` with the cells not swallowed by the hole."""

    n_cells: int
    lo: float = -1.0
    hi: float = 1.0

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.n_cells + 1)

    @property
    def width(self) -> float:
        return (self.hi - self.lo) / self.n_cells

    @property
    def centers(self) -> np.ndarray:
        e = self.edges
        return 0.5 * (e[:-1] + e[1:])

    def alive_fraction(self, hole: OpenIntervalSet) -> np.ndarray:
        """Fraction of each cell outside the hole (exact overlap)."""
        e = self.edges
        frac = np.ones(self.n_cells)
        for l, r in hole:
            ov = np.clip(np.minimum(e[1:], r) - np.maximum(e[:-1], l), 0.0, None)
            frac -= ov / self.width
        return np.clip(frac, 0.0, 1.0)

    def alive(self, hole: OpenIntervalSet) -> np.ndarray:
        return self.alive_fraction(hole) > 0.0


@dataclass
class SparseOperator:
    """Cell-to-cell transition fractions ``P[i, j]`` (row = source cell)."""

    grid: UlamGrid
    matrix: sp.csr_matrix
    alive: np.ndarray

    @property
    def row_sums(self) -> np.ndarray:
        return np.asarray(self.matrix.sum(axis=1)).ravel()

    @property
    def transpose(self) -> sp.csr_matrix:
        return self._pt

    def __post_init__(self):
        self._pt = self.matrix.T.tocsr()


@dataclass
class SpectralResult:
    lam: float
    density: np.ndarray  # per cell, integrates to 1 against the cell width
    iterations: int
    residual: float
    converged: bool
    total_escape: bool = False

    def mass(self, width: float) -> np.ndarray:
        return self.density * width


def _alive_pieces(edges: np.ndarray, hole: OpenIntervalSet, split: float | None):
    """Sub-intervals of grid cells outside the hole, optionally split at ``split``."""
    lo, hi, cell = [], [], []
    n = edges.size - 1
    cuts = sorted({c for comp in hole for c in comp} | ({split} if split is not None else set()))
    cuts_arr = np.array(cuts) if cuts else np.empty(0)
    for i in range(n):
        a, b = edges[i], edges[i + 1]
        inner = cuts_arr[(cuts_arr > a) & (cuts_arr < b)] if cuts_arr.size else cuts_arr
        pts = [a, *inner.tolist(), b]
        for x0, x1 in zip(pts[:-1], pts[1:]):
            if x1 <= x0:
                continue
            mid = 0.5 * (x0 + x1)
            if hole and hole.contains(mid):
                continue
            lo.append(x0)
            hi.append(x1)
            cell.append(i)
    return np.array(lo), np.array(hi), np.array(cell, dtype=np.int64)


def _assemble(kind: int, a: float, grid: UlamGrid, hole: OpenIntervalSet, fold: float) -> SparseOperator:
    e = grid.edges
    # source pieces are split at the fold so each maps monotonically
    s_lo, s_hi, s_cell = _alive_pieces(e, hole, fold)
    t_lo, t_hi, t_cell = _alive_pieces(e, hole, None)
    widths = np.full(grid.n_cells, grid.width)
    rows, cols, vals = kernels.ulam_entries(kind, a, s_lo, s_hi, s_cell, t_lo, t_hi, t_cell, widths)
    mat = sp.coo_matrix((vals, (rows, cols)), shape=(grid.n_cells, grid.n_cells)).tocsr()
    mat.sum_duplicates()
    mat.eliminate_zeros()
    return SparseOperator(grid, mat, grid.alive(hole))


def build_ulam(qmap: QuadMap, hole: OpenIntervalSet, n_cells: int) -> SparseOperator:
    """Exact Ulam matrix of ``f_a`` on [-1, 1] with the hole removed.

    ``P[i, j]`` is the Lebesgue fraction of cell i (outside H) that lands in
    cell j (outside H), computed from closed-form preimages.
    """
    if n_cells < 64:
        raise ValueError("n_cells must be >= 64")
    return _assemble(kernels.QUADRATIC, qmap.a, UlamGrid(n_cells), hole, 0.0)


def build_ulam_tent(hole: OpenIntervalSet, n_cells: int) -> SparseOperator:
    """Same construction for the full tent map on [0, 1] (conjugacy cross-check)."""
    if n_cells < 64:
        raise ValueError("n_cells must be >= 64")
    return _assemble(kernels.TENT, 2.0, UlamGrid(n_cells, 0.0, 1.0), hole, 0.5)


def tent_hole(hole: OpenIntervalSet) -> OpenIntervalSet:
    """Pull a hole back through ``x = -cos(pi u)`` into tent coordinates."""
    comps = [(math.acos(-l) / math.pi, math.acos(-r) / math.pi) for l, r in hole]
    return OpenIntervalSet(tuple(comps))


def power_iterate(
    op: SparseOperator,
    tol: float = 1e-10,
    max_iter: int = 100_000,
    start: np.ndarray | None = None,
) -> SpectralResult:
    """Iterate ``f <- P^T f / |P^T f|_1`` from the uniform density on live cells."""
    grid = op.grid
    pt = op.transpose
    if start is None:
        m = op.alive.astype(float)
    else:
        m = np.asarray(start, dtype=float) * grid.width
    total = m.sum()
    if total <= 0 or pt.nnz == 0:
        return SpectralResult(0.0, np.zeros(grid.n_cells), 0, 0.0, True, True)
    m /= total
    lam, res = 0.0, math.inf
    for it in range(1, max_iter + 1):
        nxt = pt @ m
        lam = float(nxt.sum())
        if lam <= 0.0:
            return SpectralResult(0.0, np.zeros(grid.n_cells), it, 0.0, True, True)
        nxt /= lam
        res = float(np.abs(nxt - m).sum())
        m = nxt
        if res < tol:
            return SpectralResult(lam, m / grid.width, it, res, True)
    return SpectralResult(lam, m / grid.width, max_iter, res, False)


def l1_distance(p: np.ndarray, q: np.ndarray, width: float, mask: np.ndarray | None = None) -> float:
    """L1 distance between two grid densities, optionally restricted to ``mask``."""
    d = np.abs(p - q) * width
    if mask is not None:
        d = d[mask]
    return float(d.sum())
