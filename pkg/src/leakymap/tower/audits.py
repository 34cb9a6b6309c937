"""Empirical audits of a tower build: tails, hole falls, distortion, piece counts."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .. import kernels
from ..intervals import (
    BoundRecoveryTables,
    NeighborhoodPartition,
    QuadMap,
    critical_orbit,
    p1_audit,
)
from .construction import TowerBuild, critical_table


@dataclass(frozen=True)
class LogLinearFit:
    """``log m_n ~ log C + n log theta`` fitted over ``n`` in ``levels``."""

    theta: float
    C: float
    r2: float
    slope: float
    levels: tuple[int, int]
    points: int

    @property
    def decays(self) -> bool:
        return self.slope < 0


def fit_log_linear(n: np.ndarray, m: np.ndarray, floor: float = 1e-6) -> LogLinearFit:
    """Least-squares line through ``log m`` on levels where ``m >= floor`` and ``m > 0``."""
    n = np.asarray(n, dtype=float)
    m = np.asarray(m, dtype=float)
    sel = (m >= floor) & (m > 0)
    if sel.sum() < 3:
        return LogLinearFit(math.nan, math.nan, math.nan, math.nan, (0, 0), int(sel.sum()))
    x, y = n[sel], np.log(m[sel])
    A = np.column_stack([np.ones_like(x), x])
    (c, s), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - (c + s * x)
    sst = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float(resid @ resid) / sst if sst > 0 else 1.0
    return LogLinearFit(math.exp(s), math.exp(c), r2, float(s), (int(x.min()), int(x.max())), int(sel.sum()))


# ----------------------------------------------------------------------------
# tails


@dataclass
class TailSeries:
    n: np.ndarray
    mass: np.ndarray  # m{X > n} / total seed mass
    fit: LogLinearFit  # every level with mass >= floor
    onset: int  # first level where half the mass has gone
    post_onset: LogLinearFit  # diagnostic fit from ``onset`` on


def _tail_from_events(times: np.ndarray, masses: np.ndarray, total: float, cap: int) -> np.ndarray:
    acc = np.bincount(np.clip(times, 0, cap), weights=masses, minlength=cap + 1)[: cap + 1]
    return np.clip(1.0 - np.cumsum(acc) / total, 0.0, 1.0)


def _tail(times, masses, total, cap, floor) -> TailSeries:
    tail = _tail_from_events(np.asarray(times, dtype=int), np.asarray(masses), total, cap)
    n = np.arange(cap + 1)
    below = np.nonzero(tail < 0.5)[0]
    onset = int(below[0]) if below.size else cap
    fit = fit_log_linear(n, tail, floor)
    post = fit_log_linear(n[onset:], tail[onset:], floor)
    return TailSeries(n, tail, fit, onset, post)


def stopping_tail(build: TowerBuild, floor: float = 1e-6) -> TailSeries:
    """``m{S > n}`` for the first growth run on each seed tile, pooled over seeds."""
    cells = [c for c in build.stopped() if c.start == 0]
    return _tail([c.S for c in cells], [c.mass for c in cells], build.seed_mass, build.config.time_cap, floor)


def return_tail(build: TowerBuild, floor: float = 1e-6) -> TailSeries:
    """``m{R > n}``, pooled over seeds; residual mass never counts as returned."""
    times = [b.R for b in build.blocks()] + [h.R for h in build.hole_cells()]
    masses = [b.mass for b in build.blocks()] + [h.mass for h in build.hole_cells()]
    return _tail(times, masses, build.seed_mass, build.config.time_cap, floor)


# ----------------------------------------------------------------------------
# mass accounting


@dataclass(frozen=True)
class MassAccount:
    seed_mass: float
    returned: float
    hole: float
    residual: float
    residual_by_reason: dict

    @property
    def relative_defect(self) -> float:
        return abs(self.returned + self.hole + self.residual - self.seed_mass) / self.seed_mass


def mass_account(build: TowerBuild) -> MassAccount:
    ret = math.fsum(b.mass for b in build.blocks())
    hol = math.fsum(h.mass for h in build.hole_cells())
    by = {}
    for r in build.residuals():
        by[r.reason] = by.get(r.reason, 0.0) + r.mass
    res = math.fsum(by.values())
    seed = math.fsum(r.mass for r in build.results)
    return MassAccount(seed, ret, hol, res, by)


# ----------------------------------------------------------------------------
# hole falls


@dataclass
class HoleFallStats:
    n: np.ndarray
    mass: np.ndarray  # m{R = n, fell in hole} / total seed mass
    total: float
    fit: LogLinearFit
    D_hat: float  # envelope prefactor: mass_n <= D_hat m(H) theta_hat^n
    D_prime: float  # least-squares prefactor against m(H) e^{-n/21}
    hole_measure: float


def hole_fall_stats(build: TowerBuild, window: tuple[int, int] | None = None) -> HoleFallStats:
    """Per-level hole-fall mass with the envelope ``D m(H) theta^n`` fitted on ``window``.

    The default window is the level range of the return-tail fit, so both
    decay rates are measured on the same levels.
    """
    cap = build.config.time_cap
    n = np.arange(cap + 1)
    series = np.zeros(cap + 1)
    for h in build.hole_cells():
        series[min(h.R, cap)] += h.mass
    series /= build.seed_mass
    mH = build.hole.measure
    total = float(series.sum())
    nanfit = LogLinearFit(math.nan, math.nan, math.nan, math.nan, (0, 0), 0)
    if total == 0.0 or mH == 0.0:
        return HoleFallStats(n, series, total, nanfit, 0.0, 0.0, mH)
    if window is None:
        window = return_tail(build).fit.levels
    sel = (series > 0) & (n >= window[0]) & (n <= window[1])
    fit = fit_log_linear(n[sel], series[sel], floor=0.0) if sel.sum() >= 3 else nanfit
    if math.isfinite(fit.theta) and fit.theta > 0:
        D_hat = float(np.max(series[sel] / (mH * fit.theta ** n[sel])))
    else:
        D_hat = math.nan
    shape = mH * np.exp(-n / 21.0)
    D_prime = float(series @ shape / (shape @ shape))
    return HoleFallStats(n, series, total, fit, D_hat, D_prime, mH)


# ----------------------------------------------------------------------------
# distortion


@dataclass(frozen=True)
class DistortionReport:
    C_tilde: float  # sup |D(x)/D(y) - 1| / |T^S x - T^S y| over stopped cells
    C_tilde_half: float  # same with half the samples (stability check)
    c1: float  # sup |log (T^j)'(x)/(T^j)'(y)| over x, y in I_k, j <= q(k)
    c2: float  # sup |(T^q)'(x)/(T^q)'(y) - 1| / |T^q x - T^q y|
    weak: float  # sup |D(x)/D(y) - 1| over stopped cells (the weaker bound)
    d0: float
    c0_prime: float
    min_return_expansion: float  # min |(T^R)'| over sampled boundaries of returned cells
    min_stretch: float  # min |tile| / |cell| over kept cells (nan if not kept)
    cells: int
    samples: int
    sanity_cap: float = 1e12

    @property
    def stable(self) -> bool:
        return abs(self.C_tilde / self.C_tilde_half - 1.0) <= 0.2 if self.C_tilde_half > 0 else False

    @property
    def flagged(self) -> bool:
        return not (self.C_tilde < self.sanity_cap)


def _lobatto(lo: float, hi: float, n: int) -> np.ndarray:
    """Cosine-spaced nodes on [lo, hi]; they cluster at the ends, where the log-derivative moves fastest."""
    t = 0.5 * (1.0 - np.cos(np.pi * np.arange(n) / (n - 1)))
    return lo + (hi - lo) * t


def _pair_ratio(ys: np.ndarray, ld: np.ndarray) -> tuple[float, float]:
    i, j = np.triu_indices(ys.size, 1)
    dy = np.abs(ys[i] - ys[j])
    r = np.abs(np.expm1(ld[i] - ld[j]))
    ok = dy > 0
    if not ok.any():
        return 0.0, 0.0
    return float(np.max(r[ok] / dy[ok])), float(np.max(r))


def stopped_cell_distortion(build: TowerBuild, samples: int, limit: int | None = None) -> tuple[float, float, int]:
    """Sup of the distortion ratio over sampled pairs in each first-run stopped cell's image.

    Only cells whose run starts at the seed time are used, so the pulled-back
    derivative is exactly that of ``T^S`` on the cell.
    """
    crit = critical_table(build.qmap, build.tables)
    a = build.qmap.a
    best = weak = 0.0
    count = 0
    for c in build.stopped():
        if limit is not None and count >= limit:
            break
        if c.start != 0:
            continue
        lo, hi = c.image
        if not hi > lo:
            continue
        ys = _lobatto(lo, hi, samples)
        _, ld = kernels.pullback(a, ys, c.stop, c.codes, crit)
        r, w = _pair_ratio(ys, ld)
        best, weak = max(best, r), max(weak, w)
        count += 1
    return best, weak, count


def recovery_distortion(
    qmap: QuadMap, tables: BoundRecoveryTables, ks, samples: int = 33
) -> tuple[float, float]:
    """``c1`` and ``c2`` measured on the critical cells along their recovery windows."""
    c1 = c2 = 0.0
    for k in ks:
        q = tables.qk(k)
        crit = critical_orbit(qmap, q + 1)
        lo, hi = math.exp(-(abs(k) + 1)), math.exp(-abs(k))
        d = np.linspace(lo, hi, samples)
        logd = np.zeros_like(d)
        for j in range(q):
            logd += np.log(np.abs(2.0 * qmap.a * (crit[j] + d)))
            d = -qmap.a * d * (2.0 * crit[j] + d)
            c1 = max(c1, float(np.ptp(logd)))
        pos = crit[q] + d
        i, jj = np.triu_indices(samples, 1)
        dy = np.abs(pos[i] - pos[jj])
        r = np.abs(np.expm1(logd[i] - logd[jj]))
        ok = dy > 0
        c2 = max(c2, float(np.max(r[ok] / dy[ok])))
    return c1, c2


def free_excursion_constant(
    qmap: QuadMap, delta: float, lambda0: float, horizon: int = 100, samples: int = 4001
) -> float:
    """Smallest ``c0'`` with ``|(T^n)'(x)| >= c0' delta e^{lambda0 n/3}`` while the orbit avoids (-delta, delta)."""
    x = np.linspace(-1.0, 1.0, samples)
    x = x[np.abs(x) >= delta]
    logd = np.zeros_like(x)
    live = np.ones(x.size, dtype=bool)
    best = math.inf
    for n in range(1, horizon + 1):
        logd = logd + np.log(np.abs(2.0 * qmap.a * x))
        x = 1.0 - qmap.a * x * x
        val = logd - math.log(delta) - lambda0 * n / 3.0
        if live.any():
            best = min(best, float(np.min(val[live])))
        live &= np.abs(x) >= delta
        if not live.any():
            break
    return math.exp(best)


def distortion_audit(
    build: TowerBuild,
    samples: int = 8,
    *,
    lambda0: float = math.log(1.9),
    cell_limit: int | None = None,
) -> DistortionReport:
    """Measure the distortion and expansion constants used by the construction."""
    C, weak, cells = stopped_cell_distortion(build, 2 * samples, cell_limit)
    C_half, _, _ = stopped_cell_distortion(build, samples, cell_limit)
    part: NeighborhoodPartition = build.tables.partition
    ks = range(part.k0, min(part.k0 + 8, part.kmax) + 1)
    c1, c2 = recovery_distortion(build.qmap, build.tables, ks)
    p1 = p1_audit(build.qmap, part, ks, tables=build.tables)
    c0p = free_excursion_constant(build.qmap, part.delta, lambda0)
    blocks = list(build.blocks())
    min_exp = math.exp(min((b.min_logder for b in blocks), default=math.nan))
    stretch = [b.min_log_stretch for b in blocks if not math.isnan(b.min_log_stretch)]
    min_stretch = math.exp(min(stretch)) if stretch else math.nan
    return DistortionReport(C, C_half, c1, c2, weak, p1.d0, c0p, min_exp, min_stretch, cells, 2 * samples)


# ----------------------------------------------------------------------------
# piece counts


@dataclass
class PieceCountAudit:
    n: np.ndarray
    max_count: np.ndarray  # max over seeds of coexisting pieces at level n
    bound: np.ndarray  # 8 n 2^{53 n / 200}
    max_ratio: float
    level0: np.ndarray  # pieces per seed at level 0


def piece_count_audit(build: TowerBuild) -> PieceCountAudit:
    L = max(len(r.live_counts) for r in build.results)
    counts = np.zeros((len(build.results), L), dtype=np.int64)
    for s, r in enumerate(build.results):
        counts[s, : r.live_counts.size] = r.live_counts
    n = np.arange(L)
    mx = counts.max(axis=0)
    bound = 8.0 * n * 2.0 ** (53.0 * n / 200.0)
    ratio = np.where(n >= 1, mx / np.where(bound > 0, bound, 1.0), 0.0)
    return PieceCountAudit(n, mx, bound, float(ratio[1:].max(initial=0.0)), counts[:, 0])


# ----------------------------------------------------------------------------
# Markov returns


def markov_return_errors(build: TowerBuild, max_cells: int = 200, digits: int = 60) -> np.ndarray:
    """Forward-iterate kept cell endpoints in high precision and compare with the tile endpoints.

    Returns, per checked boundary, ``|T^R(u) - target|`` and the rounding
    allowance ``|(T^R)'(u)| * ulp(u)`` as two columns.
    """
    import mpmath

    mp = mpmath.mp.clone() if hasattr(mpmath.mp, "clone") else mpmath.mp
    mp.dps = digits
    a = mp.mpf(build.qmap.a)
    lo, hi = build.cover.lo, build.cover.hi
    out = []
    for b in build.blocks():
        if b.u_edges is None:
            continue
        targets = np.concatenate([lo[b.first : b.first + b.count], hi[b.first + b.count - 1 : b.first + b.count]])
        for u, tgt, ld in zip(b.u_edges, targets, b.logder):
            x = mp.mpf(float(u))
            for _ in range(b.R):
                x = 1 - a * x * x
            err = abs(float(x - mp.mpf(float(tgt))))
            allow = math.exp(ld) * math.ulp(float(u)) if math.isfinite(ld) else math.inf
            out.append((err, allow))
            if len(out) >= max_cells:
                return np.array(out)
    return np.array(out).reshape(-1, 2)


@dataclass(frozen=True)
class MarkovCheck:
    checked: int
    max_error: float
    within_abs: int  # boundaries landing within ``abs_tol`` of their tile edge
    within_scaled: int  # boundaries within ``scale`` times the float rounding allowance
    abs_tol: float

    @property
    def ok(self) -> bool:
        return self.checked > 0 and self.within_scaled == self.checked


def markov_check(build: TowerBuild, max_points: int = 200, abs_tol: float = 1e-8, scale: float = 8.0) -> MarkovCheck:
    errs = markov_return_errors(build, max_points)
    if errs.size == 0:
        return MarkovCheck(0, math.nan, 0, 0, abs_tol)
    err, allow = errs[:, 0], errs[:, 1]
    return MarkovCheck(
        len(err),
        float(err.max()),
        int(np.count_nonzero(err <= abs_tol)),
        int(np.count_nonzero(err <= np.maximum(abs_tol, scale * allow))),
        abs_tol,
    )


# ----------------------------------------------------------------------------
# growth lemma


@dataclass(frozen=True)
class GrowthCheck:
    trials: int
    failures: int  # neither grown nor swallowed by the time cap
    swallowed: int  # followed branch fell wholly inside the hole (the other stopping outcome)
    grown: int
    max_steps: int
    target: float


def growth_lemma_check(
    qmap: QuadMap,
    hole,
    eps: float,
    growth: int,
    trials: int = 100,
    time_cap: int = 400,
    seed: int = 0,
) -> GrowthCheck:
    """Follow the larger half of random length-``eps`` intervals until one reaches ``growth * eps``.

    At each step the image is cut at 0 and at the hole, and the longest
    surviving part is kept. Intervals are drawn from ``[1-a, 1]`` minus the
    hole; a branch swallowed whole by the hole has stopped, so only branches
    still unresolved at the time cap count as failures.
    """
    from ..intervals import interval_image

    rng = np.random.default_rng(seed)
    lo0, hi0 = qmap.invariant_range
    target = growth * eps
    failures = swallowed = grown = 0
    worst = 0
    for _ in range(trials):
        while True:
            a = rng.uniform(lo0, hi0 - eps)
            if not (hole and hole.intersects(a, a + eps)):
                break
        lo, hi = a, a + eps
        ok = False
        for n in range(time_cap + 1):
            parts = [(lo, min(hi, 0.0)), (max(lo, 0.0), hi)] if lo < 0.0 < hi else [(lo, hi)]
            keep = []
            for l, r in parts:
                keep.extend(hole.gaps(l, r) if hole else [(l, r)])
            if not keep:
                swallowed += 1
                ok = True
                break
            lo, hi = max(keep, key=lambda p: p[1] - p[0])
            if hi - lo >= target:
                ok = True
                grown += 1
                worst = max(worst, n)
                break
            lo, hi = interval_image(qmap, lo, hi)
        failures += not ok
    return GrowthCheck(trials, failures, swallowed, grown, worst, target)


# ----------------------------------------------------------------------------
# assembly


@dataclass
class TowerModel:
    """Level masses of the tower over the built seeds (absolute Lebesgue units)."""

    level_mass: np.ndarray  # m(Delta_l): mass of points with R > l that have not fallen in
    hole_mass: np.ndarray  # m(H_l): mass falling in the hole at level l
    return_mass: np.ndarray  # mass returning to the base at level l
    base_mass: float
    defect: float  # residual mass (time cap, width floor, core)
    envelope: LogLinearFit  # m(Delta_l) <= A theta^l fitted on levels with mass >= 1e-6 of base
    A: float  # smallest prefactor making the envelope hold on the fitted levels

    @property
    def conservation_error(self) -> float:
        total = self.return_mass.sum() + self.hole_mass.sum() + self.defect
        return abs(total - self.base_mass) / self.base_mass


def assemble_tower(build: TowerBuild) -> TowerModel:
    cap = build.config.time_cap
    ret = np.zeros(cap + 2)
    hol = np.zeros(cap + 2)
    for b in build.blocks():
        ret[b.R] += b.mass
    for h in build.hole_cells():
        hol[h.R] += h.mass
    defect = math.fsum(r.mass for r in build.residuals())
    base = build.seed_mass
    gone = np.cumsum(ret + hol)
    level = base - np.concatenate([[0.0], gone[:-1]])
    level = np.clip(level, 0.0, None)
    n = np.arange(level.size)
    fit = fit_log_linear(n, level / base, 1e-6)
    if math.isfinite(fit.theta):
        sel = (n >= fit.levels[0]) & (n <= fit.levels[1]) & (level > 0)
        A = float(np.max(level[sel] / base / fit.theta ** n[sel]))
    else:
        A = math.nan
    return TowerModel(level, hol, ret, base, defect, fit, A)
