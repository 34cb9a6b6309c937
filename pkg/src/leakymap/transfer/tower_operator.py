"""Transfer operator on the tower, projected onto (base tile, sub-bin, level) cells.

Each reference tile is identified with a unit interval and split into
``bins`` equal sub-bins. A tower function is a density that is constant on
the surviving part of each (sub-bin, level) cell. Climbing leaves the
density unchanged; returning cells carry their mass to the target tile and
spread it over its sub-bins in proportion to ``1/|F'|``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from ..intervals import OpenIntervalSet
from ..tower.audits import LogLinearFit, fit_log_linear
from ..tower.construction import TowerBuild
from .ulam import UlamGrid

DEFECT_WARNING = 0.01


@dataclass
class TowerKernel:
    """Mass bookkeeping of a full tower build in unit-tile coordinates.

    ``alive[l, s]`` is the measure of sub-bin ``s`` still in the tower at
    level ``l``; ``returns[l]`` maps sub-bin mass at level ``l`` that returns
    at time ``l+1`` onto base sub-bins; ``hole_loss`` and ``residual_loss``
    are indexed by exit time.
    """

    n_tiles: int
    bins: int
    levels: int
    tile_width: np.ndarray
    alive: np.ndarray
    returns: list
    hole_loss: np.ndarray
    residual_loss: np.ndarray
    min_log_fprime: np.ndarray  # per level l: min log|F'| over cells returning at time l+1
    eps: float

    @property
    def n_states(self) -> int:
        return self.n_tiles * self.bins

    @property
    def base_measure(self) -> float:
        return float(self.n_tiles)

    @property
    def level_measure(self) -> np.ndarray:
        """``m(Delta_l)`` including cells that will fall into the hole at the next step."""
        return self.alive.sum(axis=1)

    @property
    def hole_levels(self) -> np.ndarray:
        """``m(H_l)``: tower hole measure at level ``l`` (exit time ``l``)."""
        return self.hole_loss.sum(axis=1)

    @property
    def defect(self) -> float:
        """Residual measure relative to the base."""
        return float(self.residual_loss.sum()) / self.base_measure


def _split_over_bins(t0: np.ndarray, t1: np.ndarray, bins: int) -> np.ndarray:
    """Fractions of [t0, t1] (in sub-bin units) falling in each sub-bin; shape (bins, n)."""
    span = np.maximum(t1 - t0, 1e-300)
    out = np.empty((bins, t0.size))
    for b in range(bins):
        lo = np.maximum(t0, b if b > 0 else -np.inf)
        hi = np.minimum(t1, b + 1 if b < bins - 1 else np.inf)
        out[b] = np.clip(hi - lo, 0.0, None) / span
    zero = t1 <= t0
    if zero.any():
        idx = np.clip(np.floor(t0[zero]).astype(int), 0, bins - 1)
        out[:, zero] = 0.0
        out[idx, np.nonzero(zero)[0]] = 1.0
    return out


def build_tower_kernel(build: TowerBuild, bins: int = 3) -> TowerKernel:
    """Aggregate every returned, hole and residual cell of a full build.

    The build must cover every reference tile and keep its cells.
    """
    cover = build.cover
    N = len(cover)
    if not build.config.keep_cells:
        raise ValueError("the tower kernel needs a build with keep_cells=True")
    if build.seeds.size != N or np.any(np.sort(build.seeds) != np.arange(N)):
        raise ValueError("the tower kernel needs every reference tile as a seed")
    if bins < 1:
        raise ValueError("bins must be >= 1")
    L = build.config.time_cap
    widths = cover.widths
    S = N * bins

    def source_fractions(seed, u0, u1):
        t0 = (u0 - cover.lo[seed]) / widths[seed] * bins
        t1 = (u1 - cover.lo[seed]) / widths[seed] * bins
        return _split_over_bins(t0, t1, bins)

    exits = np.zeros((L + 2, S))
    hole = np.zeros((L + 2, S))
    resid = np.zeros((L + 2, S))

    # returned cells, flattened
    seed_l, u0_l, u1_l, R_l, tgt_l, ldlo_l, ldhi_l = ([] for _ in range(7))
    for b in build.blocks():
        ue = b.u_edges
        lo, hi = np.minimum(ue[:-1], ue[1:]), np.maximum(ue[:-1], ue[1:])
        k = b.count
        seed_l.append(np.full(k, b.seed))
        u0_l.append(lo)
        u1_l.append(hi)
        R_l.append(np.full(k, b.R))
        tgt_l.append(np.arange(b.first, b.first + k))
        ldlo_l.append(b.logder[:-1])
        ldhi_l.append(b.logder[1:])
    seed_a = np.concatenate(seed_l)
    u0_a, u1_a = np.concatenate(u0_l), np.concatenate(u1_l)
    R_a, tgt_a = np.concatenate(R_l), np.concatenate(tgt_l)
    ldlo_a, ldhi_a = np.concatenate(ldlo_l), np.concatenate(ldhi_l)
    del seed_l, u0_l, u1_l, R_l, tgt_l, ldlo_l, ldhi_l

    unit_mass = (u1_a - u0_a) / widths[seed_a]
    frac = source_fractions(seed_a, u0_a, u1_a)
    # density on the target ~ 1/|F'|, interpolated linearly across the tile
    wlo = np.exp(np.minimum(ldhi_a - ldlo_a, 50.0))
    whi = np.ones_like(wlo)
    tw = np.empty((bins, wlo.size))
    for c in range(bins):
        tw[c] = wlo / bins + (whi - wlo) * (2 * c + 1) / (2.0 * bins * bins)
    tw /= tw.sum(axis=0)

    for s in range(bins):
        np.add.at(exits, (R_a, seed_a * bins + s), unit_mass * frac[s])

    # |F'| = |(T^R)'| |tile_i| / |tile_j| in unit-tile coordinates
    log_fp = np.minimum(ldlo_a, ldhi_a) + np.log(widths[seed_a] / widths[tgt_a])
    min_lfp = np.full(L + 1, np.inf)
    np.minimum.at(min_lfp, R_a - 1, log_fp)

    returns = []
    order = np.argsort(R_a, kind="stable")
    bounds = np.searchsorted(R_a[order], np.arange(1, L + 2))
    for R in range(1, L + 1):
        sel = order[bounds[R - 1] : bounds[R]]
        if sel.size == 0:
            returns.append(sp.csr_matrix((S, S)))
            continue
        rows, cols, vals = [], [], []
        for s in range(bins):
            f = frac[s, sel]
            nz = f > 0
            if not nz.any():
                continue
            ss = sel[nz]
            for c in range(bins):
                rows.append(seed_a[ss] * bins + s)
                cols.append(tgt_a[ss] * bins + c)
                vals.append(unit_mass[ss] * f[nz] * tw[c, ss])
        m = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(S, S)
        ).tocsr()
        m.sum_duplicates()
        returns.append(m)
    del frac, tw, unit_mass

    for h in build.hole_cells():
        f = source_fractions(np.array([h.seed]), np.array([h.u0]), np.array([h.u1]))[:, 0]
        m = (h.u1 - h.u0) / widths[h.seed]
        t = min(h.R, L + 1)
        hole[t, h.seed * bins : (h.seed + 1) * bins] += m * f
    for r in build.residuals():
        if r.u1 <= r.u0:
            continue
        f = source_fractions(np.array([r.seed]), np.array([r.u0]), np.array([r.u1]))[:, 0]
        m = (r.u1 - r.u0) / widths[r.seed]
        t = min(r.time, L + 1)
        resid[t, r.seed * bins : (r.seed + 1) * bins] += m * f
    exits += hole + resid
    base = np.full(S, 1.0 / bins)
    alive = base[None, :] - np.cumsum(exits, axis=0)[:L]
    alive = np.where(alive > 1e-15, alive, 0.0)
    return TowerKernel(N, bins, L, widths.copy(), alive, returns, hole, resid, min_lfp[:L], cover.eps)


# ----------------------------------------------------------------------------
# functions and norms


@dataclass
class TowerFunction:
    """Density on each (level, sub-bin) cell; rows are levels."""

    values: np.ndarray

    def integral(self, kernel: TowerKernel) -> float:
        return float(np.sum(self.values * kernel.alive))

    @classmethod
    def constant(cls, kernel: TowerKernel, c: float = 1.0) -> "TowerFunction":
        return cls(np.where(kernel.alive > 0, c, 0.0))

    def normalized(self, kernel: TowerKernel) -> "TowerFunction":
        return TowerFunction(self.values / self.integral(kernel))


@dataclass(frozen=True)
class NormParams:
    theta: float
    xi: float
    gamma: float
    beta: float
    C: float
    a0: float
    b: float
    M: float
    applicable: bool

    @property
    def xi_admissible(self) -> bool:
        """``e^{-xi} > max(theta, e^{-beta})``."""
        return math.exp(-self.xi) > max(self.theta, math.exp(-self.beta))


@dataclass(frozen=True)
class FunctionalNorms:
    sup: float
    reg: float
    ignored_cells: int
    nonnegative: bool
    integral: float

    @property
    def norm(self) -> float:
        return max(self.sup, self.reg)

    def in_XM(self, M: float, tol: float = 1e-9) -> bool:
        return self.nonnegative and abs(self.integral - 1.0) <= tol and self.norm <= M


def norm_params(kernel: TowerKernel, theta: float, C_tilde: float, gamma: float = 2.0) -> NormParams:
    """Functional-space constants from measured tower data.

    ``xi = -log(theta)/2``, ``C = 2 C~ eps``, ``b = 1 + C``,
    ``a0 = max(e^{-xi}, 1/gamma)``, ``M = b/(1-a0)``; ``beta`` is the
    largest rate with ``|F'| >= gamma e^{beta l}`` on every returning cell.
    """
    applicable = 0.0 < theta < 1.0
    lf = kernel.min_log_fprime
    lv = np.arange(lf.size)
    ok = np.isfinite(lf) & (lv >= 1)
    beta = float(np.min((lf[ok] - math.log(gamma)) / lv[ok])) if ok.any() else math.inf
    beta = max(beta, 0.0)
    xi = -0.5 * math.log(theta) if applicable else math.nan
    C = 2.0 * C_tilde * kernel.eps
    a0 = max(math.exp(-xi), 1.0 / gamma) if applicable else math.nan
    b = 1.0 + C
    M = b / (1.0 - a0) if applicable else math.nan
    return NormParams(theta, xi, gamma, beta, C, a0, b, M, applicable)


def functional_norms(kernel: TowerKernel, f: TowerFunction, xi: float) -> FunctionalNorms:
    """Weighted sup and regularity norms; ``f'/f`` by finite differences across sub-bins.

    A (tile, level) cell is skipped unless all its sub-bins are alive and
    there are at least three of them.
    """
    L, S = f.values.shape
    w = np.exp(-xi * np.arange(L))[:, None]
    sup = float(np.max(np.abs(f.values) * w))
    B = kernel.bins
    v = f.values.reshape(L, kernel.n_tiles, B)
    a = kernel.alive.reshape(L, kernel.n_tiles, B)
    full = np.all(a > 0, axis=2)
    if B < 3:
        ignored = int(np.count_nonzero(a.sum(axis=2) > 0))
        reg = 0.0
    else:
        ignored = int(np.count_nonzero((a.sum(axis=2) > 0) & ~full))
        dv = np.diff(v, axis=2) * B  # unit-tile coordinates
        mid = 0.5 * (v[:, :, 1:] + v[:, :, :-1])
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(mid != 0, np.abs(dv / mid), 0.0)
        r = np.where(full[:, :, None], r, 0.0)
        reg = float(np.max(r.max(axis=(1, 2)) * w[:, 0]))
    return FunctionalNorms(sup, reg, ignored, bool(np.all(f.values >= 0)), f.integral(kernel))


def tower_pf_apply(kernel: TowerKernel, f: TowerFunction) -> TowerFunction:
    """One step of the transfer operator; mass reaching the hole or the level cap is dropped."""
    v = f.values
    out = np.zeros_like(v)
    out[1:] = np.where(kernel.alive[1:] > 0, v[:-1], 0.0)
    dep = np.zeros(v.shape[1])
    for l in range(kernel.levels):
        if kernel.returns[l].nnz:
            dep += kernel.returns[l].T @ v[l]
    base = kernel.alive[0]
    out[0] = np.where(base > 0, dep / np.where(base > 0, base, 1.0), 0.0)
    return TowerFunction(out)


def escaped_mass(kernel: TowerKernel, f: TowerFunction) -> float:
    """Mass lost in one step: cells whose next level is the hole or the cap."""
    v = f.values
    L = kernel.levels
    return float(np.sum(v * (kernel.hole_loss[1 : L + 1] + kernel.residual_loss[1 : L + 1])))


@dataclass
class TowerSpectral:
    lam: float
    phi: TowerFunction
    iterations: int
    residual: float
    converged: bool
    norms: FunctionalNorms | None = None


def tower_power_iterate(
    kernel: TowerKernel, tol: float = 1e-10, max_iter: int = 20000, xi: float | None = None
) -> TowerSpectral:
    """Iterate ``f <- P f / |P f|`` from the constant density."""
    if kernel.defect > DEFECT_WARNING:
        warnings.warn(f"tower defect {kernel.defect:.3g} exceeds 1%; mass accounting is approximate")
    f = TowerFunction.constant(kernel).normalized(kernel)
    lam, res = 0.0, math.inf
    it = 0
    for it in range(1, max_iter + 1):
        g = tower_pf_apply(kernel, f)
        lam = g.integral(kernel)
        if lam <= 0:
            return TowerSpectral(0.0, g, it, math.inf, True)
        g = TowerFunction(g.values / lam)
        res = float(np.sum(np.abs(g.values - f.values) * kernel.alive))
        f = g
        if res < tol:
            break
    norms = functional_norms(kernel, f, xi) if xi is not None and math.isfinite(xi) else None
    return TowerSpectral(lam, f, it, res, res < tol, norms)


# ----------------------------------------------------------------------------
# (H1), (H2) and the eigenvalue bounds


@dataclass(frozen=True)
class H1H2Report:
    envelope: LogLinearFit
    A: float
    h1_holds: bool
    h2_lhs: float
    h2_rhs: float
    h2_holds: bool
    hole_bound: float  # sufficient m(H) for (H2) from the hole-fall envelope
    params: NormParams
    applicable: bool

    @property
    def h2_slack(self) -> float:
        return self.h2_rhs - self.h2_lhs


def level_envelope(kernel: TowerKernel, floor: float = 1e-6) -> tuple[LogLinearFit, float]:
    """Fit ``m(Delta_l) <= A theta^l``; ``A`` is the smallest prefactor valid at every level."""
    m = kernel.level_measure + kernel.hole_levels[: kernel.levels]
    n = np.arange(m.size)
    fit = fit_log_linear(n, m / kernel.base_measure, floor)
    if not math.isfinite(fit.theta):
        return fit, math.nan
    pos = m > 0
    A = float(np.max(m[pos] / fit.theta ** n[pos]))
    return fit, A


def check_H1_H2(
    kernel: TowerKernel,
    C_tilde: float,
    *,
    hole_measure: float = 0.0,
    D: float = math.nan,
    gamma: float = 2.0,
) -> H1H2Report:
    fit, A = level_envelope(kernel)
    theta = fit.theta
    params = norm_params(kernel, theta, C_tilde, gamma)
    mH = kernel.hole_levels
    if not params.applicable:
        return H1H2Report(fit, A, False, math.nan, math.nan, False, math.nan, params, False)
    l = np.arange(mH.size)
    lhs = float(np.sum(np.exp(params.xi * (l[1:] - 1)) * mH[1:]))
    rhs = (1.0 - params.a0) ** 2 / params.b
    sq = math.sqrt(theta)
    if math.isfinite(D) and D > 0:
        bound = (1 - sq) ** 2 / (1 + params.C) * kernel.eps * (1 - sq) / (kernel.n_tiles * D * theta)
    else:
        bound = math.nan
    return H1H2Report(fit, A, True, lhs, rhs, lhs <= rhs, bound, params, True)


@dataclass(frozen=True)
class EigenvalueBounds:
    lam: float
    tower_bound: float  # 1 - M sum e^{xi(l-1)} m(H_l)
    hole_bound: float  # 1 - N D theta m(H) / (eps (1 - sqrt theta))
    sqrt_theta: float

    @property
    def tower_ok(self) -> bool:
        return self.lam >= self.tower_bound

    @property
    def hole_ok(self) -> bool:
        return self.lam >= self.hole_bound

    @property
    def sqrt_theta_ok(self) -> bool:
        return self.lam >= self.sqrt_theta

    @property
    def slack(self) -> float:
        return self.lam - self.tower_bound


def eigenvalue_bound_check(
    lam: float, report: H1H2Report, kernel: TowerKernel, hole: OpenIntervalSet, D: float
) -> EigenvalueBounds:
    p = report.params
    theta = p.theta
    if not report.applicable:
        return EigenvalueBounds(lam, math.nan, math.nan, math.nan)
    tb = 1.0 - p.M * report.h2_lhs
    sq = math.sqrt(theta)
    hb = 1.0 - kernel.n_tiles * D * theta * hole.measure / (kernel.eps * (1.0 - sq))
    return EigenvalueBounds(lam, tb, hb, sq)


# ----------------------------------------------------------------------------
# projection to the interval


def _deposit_uniform(edges: np.ndarray, a: np.ndarray, b: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Spread mass ``w`` uniformly over ``[a, b]``; returns mass per grid cell."""
    n = edges.size - 1
    width = edges[1] - edges[0]
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    i0 = np.clip(((lo - edges[0]) // width).astype(np.int64), 0, n - 1)
    i1 = np.clip(((hi - edges[0]) // width).astype(np.int64), 0, n - 1)
    out = np.zeros(n)
    same = i0 == i1
    out += np.bincount(i0[same], weights=w[same], minlength=n)
    d = ~same
    if d.any():
        lo, hi, w, i0, i1 = lo[d], hi[d], w[d], i0[d], i1[d]
        s = w / (hi - lo)
        out += np.bincount(i0, weights=s * (edges[i0 + 1] - lo), minlength=n)
        out += np.bincount(i1, weights=s * (hi - edges[i1]), minlength=n)
        mid = i1 > i0 + 1
        if mid.any():
            diff = np.zeros(n + 1)
            np.add.at(diff, i0[mid] + 1, s[mid] * width)
            np.add.at(diff, i1[mid], -s[mid] * width)
            out += np.cumsum(diff)[:n]
    return out


@dataclass
class ProjectedDensity:
    density: np.ndarray  # per grid cell, integrates to 1
    subgrid_cells: int  # tower cells whose image is narrower than a grid cell


def project_density(
    kernel: TowerKernel, build: TowerBuild, phi: TowerFunction, grid: UlamGrid
) -> ProjectedDensity:
    """Push the tower density down to the interval along the tower map.

    Every cell is followed level by level; at level ``l`` its image is
    ``T^l`` of the cell and its mass ``phi * m(cell)`` is spread over it.
    """
    cover = build.cover
    B = kernel.bins
    widths = cover.widths
    edges = grid.edges
    hist = np.zeros(grid.n_cells)
    small = 0
    a = build.qmap.a

    cells = []
    for blk in build.blocks():
        ue = blk.u_edges
        cells.append((np.full(blk.count, blk.seed), np.minimum(ue[:-1], ue[1:]), np.maximum(ue[:-1], ue[1:]), np.full(blk.count, blk.R)))
    hs = list(build.hole_cells())
    if hs:
        cells.append(tuple(np.array(x) for x in zip(*[(h.seed, h.u0, h.u1, h.R) for h in hs])))
    rs = [r for r in build.residuals() if r.u1 > r.u0]
    if rs:
        cells.append(tuple(np.array(x) for x in zip(*[(r.seed, r.u0, r.u1, r.time) for r in rs])))
    seed = np.concatenate([c[0] for c in cells]).astype(np.int64)
    x0 = np.concatenate([c[1] for c in cells])
    x1 = np.concatenate([c[2] for c in cells])
    R = np.minimum(np.concatenate([c[3] for c in cells]).astype(np.int64), kernel.levels)
    t0 = (x0 - cover.lo[seed]) / widths[seed] * B
    t1 = (x1 - cover.lo[seed]) / widths[seed] * B
    frac = _split_over_bins(t0, t1, B)
    unit = (x1 - x0) / widths[seed]
    gw = grid.width
    for l in range(kernel.levels):
        live = R > l
        if not live.any():
            break
        if not live.all():
            seed, x0, x1, R, frac, unit = seed[live], x0[live], x1[live], R[live], frac[:, live], unit[live]
        dens = np.zeros(seed.size)
        for s in range(B):
            dens += phi.values[l, seed * B + s] * frac[s]
        w = dens * unit
        small += int(np.count_nonzero(np.abs(x1 - x0) < gw))
        hist += _deposit_uniform(edges, x0, x1, w)
        x0 = 1.0 - a * x0 * x0
        x1 = 1.0 - a * x1 * x1
    total = hist.sum()
    return ProjectedDensity(hist / (total * gw) if total > 0 else hist, small)
