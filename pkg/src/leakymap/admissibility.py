"""Finite-horizon checkers for the class-M conditions and the hole assumptions.

Every "for all n" clause is truncated at an explicit horizon which is carried
in the returned report.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .intervals import (
    BoundRecoveryTables,
    CapExceeded,
    OpenIntervalSet,
    QuadMap,
    critical_orbit,
    critical_orbit_stats,
    deviations,
    interval_image,
)

LAMBDA0_TARGET = math.log(1.9)
DEFAULT_M0 = 10
GROWTH = 4**8


# ----------------------------------------------------------------------------
# class M


@dataclass(frozen=True)
class ClassMConstants:
    delta0: float
    lambda0: float
    M0: int
    c0: float
    horizon: int


@dataclass
class ClassMReport:
    constants: ClassMConstants
    clauses: dict[str, bool]
    orbit_distance: float
    excursion_horizon: int
    lambda0_target: float
    c0_upper: float  # largest c0 allowed by clause (b)(ii)
    s0_samples: list[tuple[float, int]] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(self.clauses.values())

    @property
    def failures(self) -> list[str]:
        return [k for k, ok in self.clauses.items() if not ok]


def _excursions(qmap: QuadMap, xs: np.ndarray, delta0: float, horizon: int):
    """Cumulative log-derivatives along free prefixes of the orbits of ``xs``.

    Returns ``logd`` of shape (horizon, len(xs)) where row n-1 holds log|(f^n)'(x)|,
    ``free_len`` (number of leading orbit points outside (-delta0, delta0), capped at
    horizon) and ``enters`` (True when the orbit enters before the horizon).
    """
    x = xs.copy()
    logd = np.zeros((horizon, xs.size))
    acc = np.zeros(xs.size)
    free_len = np.full(xs.size, horizon, dtype=np.int64)
    live = np.abs(x) >= delta0
    free_len[~live] = 0
    for n in range(horizon):
        acc = acc + np.log(np.abs(2.0 * qmap.a * x))
        logd[n] = acc
        x = qmap(x)
        inside = live & (np.abs(x) < delta0)
        free_len[inside] = n + 1
        live &= ~inside
    enters = free_len < horizon
    return logd, free_len, enters


def check_class_M(
    qmap: QuadMap,
    delta0: float,
    horizon: int = 1000,
    *,
    excursion_horizon: int = 100,
    lambda0_target: float = LAMBDA0_TARGET,
    samples: int = 2001,
    recovery_samples: int = 200,
) -> ClassMReport:
    """Measure (delta0, lambda0, M0, c0) and report each clause of class M.

    (b) scans a grid of starting points with |x| >= delta0; lambda0 is the worst
    sampled rate over excursions of length >= M0, where M0 is the smallest value
    for which that rate reaches ``lambda0_target``.  c0 is the smallest value
    clause (c) needs; (b)(ii) caps it from above.
    """
    if not (0.0 < delta0 < 1.0):
        raise ValueError("delta0 must lie in (0, 1)")
    if horizon < 10:
        raise ValueError("horizon must be >= 10")
    clauses: dict[str, bool] = {}

    stats = critical_orbit_stats(qmap, horizon)
    clauses["a"] = stats.min_dist_zero > 2.0 * delta0

    half = np.linspace(delta0, 1.0, samples)
    xs = np.concatenate([-half[::-1], half])
    logd, free_len, enters = _excursions(qmap, xs, delta0, excursion_horizon)

    # worst rate over excursions of each exact length n
    n_idx = np.arange(1, excursion_horizon + 1)[:, None]
    valid = n_idx <= free_len[None, :]
    rates = np.where(valid, logd / n_idx, np.inf)
    worst_by_n = rates.min(axis=1)
    # suffix minimum: worst rate over all n >= M
    suffix = np.minimum.accumulate(worst_by_n[::-1])[::-1]
    ok_m = np.nonzero(suffix >= lambda0_target)[0]
    if ok_m.size:
        M0 = int(ok_m[0]) + 1
        lam = float(suffix[M0 - 1])
        clauses["b(i)"] = True
    else:
        M0 = excursion_horizon
        lam = float(suffix[-1])
        clauses["b(i)"] = False

    # (b)(ii): orbits entering (-delta0, delta0) after a free stretch of length n
    ent = enters & (free_len >= 1)
    if ent.any():
        nn = free_len[ent]
        ld = logd[nn - 1, np.nonzero(ent)[0]]
        c0_upper = float(min(1.0, np.exp(np.min(ld - lam * nn))))
    else:
        c0_upper = 1.0
    clauses["b(ii)"] = c0_upper > 0.0

    # (c): recovery for points inside (-delta0, delta0)
    mags = np.geomspace(1e-12, delta0, recovery_samples, endpoint=False)
    crit = critical_orbit(qmap, excursion_horizon)
    dev = deviations(qmap, mags, excursion_horizon, crit)
    pos = crit[:, None] + dev
    logfac = np.log(np.abs(2.0 * qmap.a * pos))
    cum = np.cumsum(logfac[:-1], axis=0)  # row s-1 -> log|(f^s)'(x)|
    need = 0.0
    s0_samples: list[tuple[float, int]] = []
    recovered = True
    for col, x in enumerate(mags):
        back = np.nonzero(np.abs(pos[1:, col]) < delta0)[0]
        s_max = int(back[0]) + 1 if back.size else excursion_horizon
        s = np.arange(1, s_max + 1)
        req = np.exp(lam * s / 3.0 - cum[:s_max, col])
        best = int(np.argmin(req))
        need = max(need, float(req[best]))
        s0_samples.append((float(x), best + 1))
        recovered &= bool(back.size) or s_max == excursion_horizon
    c0 = need
    clauses["c"] = recovered and c0 <= c0_upper
    consts = ClassMConstants(delta0, lam, M0, float(min(c0, 1.0)), horizon)
    return ClassMReport(
        consts, clauses, stats.min_dist_zero, excursion_horizon, lambda0_target, c0_upper, s0_samples
    )


# ----------------------------------------------------------------------------
# (A1) - (A4)


@dataclass(frozen=True)
class A1Result:
    r: float
    passed: bool
    orbit_distance: float
    horizon: int


def check_A1(qmap: QuadMap, hole: OpenIntervalSet, delta0: float, horizon: int = 1000) -> A1Result:
    """``r = min(dist(critical orbit, H), delta0)``; passes iff ``r > 0``."""
    stats = critical_orbit_stats(qmap, horizon, hole)
    dist = stats.min_dist_hole
    r = min(dist, delta0)
    return A1Result(r, r > 0.0, dist, horizon)


def _merge(intervals: list[tuple[float, float]]) -> list[tuple[float, float]]:
    out: list[tuple[float, float]] = []
    for lo, hi in sorted(intervals):
        if out and lo <= out[-1][1]:
            out[-1] = (out[-1][0], max(out[-1][1], hi))
        else:
            out.append((lo, hi))
    return out


def hole_images(qmap: QuadMap, hole: OpenIntervalSet, n: int, per_component: bool = False):
    """Forward images of the hole under the closed map for i = 0..n.

    Each image of one component is an interval (the fold at 0 sends it to 1).
    With ``per_component`` the result is indexed ``[i][j]``; otherwise the
    components of each time are merged.
    """
    comps = [tuple(c) for c in hole]
    out = [list(comps)]
    cur = list(comps)
    for _ in range(n):
        cur = [interval_image(qmap, lo, hi) for lo, hi in cur]
        out.append(list(cur))
    if per_component:
        return out
    return [_merge(level) for level in out]


def _set_distance(A: list[tuple[float, float]], B: list[tuple[float, float]]) -> float:
    best = math.inf
    for a0, a1 in A:
        for b0, b1 in B:
            if a1 > b0 and b1 > a0:
                return 0.0
            best = min(best, abs(b0 - a1), abs(a0 - b1))
    return best


@dataclass(frozen=True)
class A2Result:
    passed: bool
    eps0_max: float
    m0: int
    closest_pair: tuple[int, int] | None


def check_A2(
    qmap: QuadMap, hole: OpenIntervalSet, m0: int = DEFAULT_M0, eps0_candidate: float | None = None
) -> A2Result:
    """Separation of the images ``f^i H`` for ``0 <= i <= m0``.

    The eps0-neighbourhoods of two closed sets are disjoint exactly when the sets
    are at distance >= 2 eps0, so the largest admissible eps0 is half the
    smallest pairwise distance.  Passes iff that value is positive (and at least
    ``eps0_candidate`` when one is given).
    """
    if m0 < 1:
        raise ValueError("m0 must be >= 1")
    if not hole:
        return A2Result(True, math.inf, m0, None)
    imgs = hole_images(qmap, hole, m0)
    best, pair = math.inf, None
    for i in range(m0 + 1):
        for j in range(i + 1, m0 + 1):
            d = _set_distance(imgs[i], imgs[j])
            if d < best:
                best, pair = d, (i, j)
    eps_max = 0.5 * best
    ok = eps_max > 0.0
    if eps0_candidate is not None:
        ok = ok and eps0_candidate <= eps_max
    return A2Result(ok, eps_max, m0, pair)


def a2_predicate(qmap: QuadMap, hole: OpenIntervalSet, m0: int, eps0: float) -> bool:
    """Direct neighbourhood-disjointness test at a given eps0 (no closed form)."""
    imgs = hole_images(qmap, hole, m0)
    for i in range(m0 + 1):
        for j in range(i + 1, m0 + 1):
            for a0, a1 in imgs[i]:
                for b0, b1 in imgs[j]:
                    if a0 - eps0 < b1 + eps0 and b0 - eps0 < a1 + eps0:
                        return False
    return True


def covering_family(eps0: float, lo: float = -1.0, hi: float = 1.0) -> np.ndarray:
    """Windows such that every interval of length eps0/2 in [lo, hi] contains one."""
    width = 7.0 * eps0 / 16.0
    step = eps0 / 16.0
    starts = np.arange(lo, hi - width, step)
    starts = np.append(starts, hi - width)
    return np.stack([starts, starts + width], axis=1)


def covering_times(qmap: QuadMap, windows: np.ndarray, cap: int = 500) -> np.ndarray:
    """First n with ``f^n(J)`` containing [1-a, 1], per window."""
    lo = windows[:, 0].copy()
    hi = windows[:, 1].copy()
    target_lo, target_hi = qmap.invariant_range
    out = np.full(lo.size, -1, dtype=np.int64)
    done = (lo <= target_lo) & (hi >= target_hi)
    out[done] = 0
    for n in range(1, cap + 1):
        flo, fhi = qmap(lo), qmap(hi)
        fold = (lo < 0.0) & (hi > 0.0)
        lo = np.minimum(flo, fhi)
        hi = np.where(fold, 1.0, np.maximum(flo, fhi))
        newly = ~done & (lo <= target_lo) & (hi >= target_hi)
        out[newly] = n
        done |= newly
        if done.all():
            return out
    raise CapExceeded(f"some interval fails to cover [1-a, 1] within {cap} steps")


def derive_n0(qmap: QuadMap, eps0: float, cap: int = 500) -> int:
    """Least n with ``f^n J`` covering [1-a, 1] for every J with ``|J| >= eps0/2``."""
    if not eps0 > 0:
        raise ValueError("eps0 must be positive")
    eps0 = min(eps0, 2.0)
    return int(covering_times(qmap, covering_family(eps0), cap).max())


@dataclass(frozen=True)
class A4Result:
    passed: bool
    n0: int
    first_violation: tuple[str, int, int, int] | None  # (clause, i, j, k)


def check_A4(qmap: QuadMap, hole: OpenIntervalSet, n0: int) -> A4Result:
    """(a) ``f^i H_j`` misses every reflected component for 0 <= i <= n0;
    (b) ``f^i H_j`` misses every hole component for 1 <= i <= n0."""
    if not hole:
        return A4Result(True, n0, None)
    refl = hole.reflect()
    imgs = hole_images(qmap, hole, n0, per_component=True)
    for i in range(n0 + 1):
        for j, (lo, hi) in enumerate(imgs[i]):
            for k, (gl, gr) in enumerate(refl):
                if hi > gl and lo < gr:
                    return A4Result(False, n0, ("a", i, j, len(refl) - 1 - k))
            if i >= 1:
                for k, (hl, hr) in enumerate(hole):
                    if hi > hl and lo < hr:
                        return A4Result(False, n0, ("b", i, j, k))
    return A4Result(True, n0, None)


# ----------------------------------------------------------------------------
# length scales and the hole-size conditions


@dataclass
class LengthScales:
    eps_prime: float
    eps0: float
    eps: float
    C_tilde: float
    theta_target: float
    D_measured: float
    limiting: str


@dataclass
class HoleSizeVerdict:
    scales: LengthScales
    a3_rhs: float
    a3_slack: float
    a3_pass: bool
    eq1_rhs: float
    eq1_slack: float
    eq1_pass: bool
    guard_ok: bool

    @property
    def max_hole_measure(self) -> float:
        return self.a3_rhs


def eps_from_rule(eps_prime: float, eps0: float, C_tilde: float) -> tuple[float, str]:
    """Reference length: ``4^8 eps = min(eps', eps0, 1/(4 C~))``."""
    cands = {"eps_prime": eps_prime, "eps0": eps0, "distortion": 1.0 / (4.0 * C_tilde)}
    name = min(cands, key=cands.get)
    return cands[name] / GROWTH, name


def a3_bound(theta: float, eps: float, D: float) -> float:
    """Right side of the hole-size condition ``(1-sqrt theta)^3/3 * eps^2/(D theta)``."""
    if D <= 0:
        return math.inf
    return (1.0 - math.sqrt(theta)) ** 3 / 3.0 * eps * eps / (D * theta)


def eq1_bound(eps: float, lambda0: float, m0: int, c0_prime: float, delta: float) -> float:
    """Right side of ``m(H) <= eps/2 (e^{l0 m0/3} - 2)/e^{l0 (m0-1)/3} c0' delta``."""
    return (
        0.5 * eps * (math.exp(lambda0 * m0 / 3.0) - 2.0) / math.exp(lambda0 * (m0 - 1) / 3.0)
        * c0_prime * delta
    )


def derive_length_scales(
    qmap: QuadMap,
    hole: OpenIntervalSet,
    tables: BoundRecoveryTables,
    eps0: float,
    *,
    C_tilde: float,
    theta: float,
    D: float,
    c0_prime: float,
    lambda0: float = LAMBDA0_TARGET,
    m0: int = DEFAULT_M0,
    eps: float | None = None,
) -> HoleSizeVerdict:
    """Derive eps from the growth rule and evaluate the two hole-size conditions.

    ``eps`` may be forced (desk-scale runs); the rule value is then only used
    for the guard check ``eps <= 1/(4^9 C~)``.
    """
    rule_eps, limiting = eps_from_rule(tables.eps_prime, eps0, C_tilde)
    if eps is None:
        eps = rule_eps
    else:
        limiting = "override"
    scales = LengthScales(tables.eps_prime, eps0, eps, C_tilde, theta, D, limiting)
    m = hole.measure
    a3 = a3_bound(theta, eps, D) if 0 < theta < 1 else 0.0
    e1 = eq1_bound(eps, lambda0, m0, c0_prime, tables.partition.delta)
    guard = eps <= 1.0 / (4**9 * C_tilde)
    return HoleSizeVerdict(scales, a3, a3 - m, m < a3, e1, e1 - m, m <= e1, guard)


# ----------------------------------------------------------------------------
# covering property


@dataclass(frozen=True)
class CoveringResult:
    trials: int
    failures: int
    steps: int  # the union runs over 0..steps
    length: float
    worst_gap: float  # largest uncovered measure over the trials

    @property
    def passed(self) -> bool:
        return self.failures == 0


def open_image(qmap: QuadMap, parts: list[tuple[float, float]], hole: OpenIntervalSet) -> list[tuple[float, float]]:
    """One step of the open map on a union of intervals: drop the hole, then map."""
    out = []
    for lo, hi in parts:
        for l, r in (hole.gaps(lo, hi) if hole else [(lo, hi)]):
            out.append(interval_image(qmap, l, r))
    return _merge(out)


def covering_check(
    qmap: QuadMap,
    hole: OpenIntervalSet,
    eps0: float,
    n0: int,
    trials: int = 100,
    seed: int = 0,
    tol: float = 1e-12,
) -> CoveringResult:
    """Random intervals of length ``eps0/2``: does the union of their first ``2 n0`` open images cover the survivor set?"""
    rng = np.random.default_rng(seed)
    lo0, hi0 = qmap.invariant_range
    L = 0.5 * eps0
    target = hole.gaps(lo0, hi0) if hole else [(lo0, hi0)]
    failures = 0
    worst = 0.0
    for _ in range(trials):
        a = rng.uniform(-1.0, 1.0 - L)
        cur = [(a, a + L)]
        union = list(cur)
        for _ in range(2 * n0):
            cur = open_image(qmap, cur, hole)
            if not cur:
                break
            union = _merge(union + cur)
        gap = 0.0
        for t0, t1 in target:
            covered = sum(max(0.0, min(r, t1) - max(l, t0)) for l, r in union)
            gap += max(0.0, (t1 - t0) - covered)
        worst = max(worst, gap)
        failures += gap > tol
    return CoveringResult(trials, failures, 2 * n0, L, worst)
