"""The quadratic family ``f_a(x) = 1 - a x**2`` on [-1, 1] and its geometry.

Points near the critical orbit are handled through *deviations*: for a start
point ``x`` we track ``d_j = f^j(x) - f^j(0)`` with the exact recurrence

    d_{j+1} = -a * d_j * (2 c_j + d_j),   c_j = f^j(0),

which keeps full relative precision for ``x`` as small as 1e-300.  Direct
iteration would round ``1 - a x**2`` to 1 as soon as ``x < 1e-8``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np


class DomainError(ValueError):
    """Raised when a point lies outside [-1, 1]."""


class CellIndexError(ValueError):
    """Raised for a critical-neighbourhood index with |k| < k0."""


class CapExceeded(RuntimeError):
    """An iteration ran past its configured cap."""


# ----------------------------------------------------------------------------
# The map


@dataclass(frozen=True)
class QuadMap:
    """Parameters of ``f_a(x) = 1 - a x**2``."""

    a: float

    def __post_init__(self):
        if not (0.0 <= self.a <= 2.0) or math.isnan(self.a):
            raise ValueError(f"a must lie in [0, 2], got {self.a}")

    @property
    def invariant_range(self) -> tuple[float, float]:
        return (1.0 - self.a, 1.0)

    def __call__(self, x):
        return 1.0 - self.a * x * x

    def deriv(self, x):
        return -2.0 * self.a * x

    def inverse_branch(self, y, sign):
        """Preimage of ``y`` on the branch of the given sign (+1 or -1)."""
        return sign * np.sqrt(np.maximum(0.0, (1.0 - y) / self.a))


def evaluate(qmap: QuadMap, x: float) -> float:
    """Evaluate the map with a domain check."""
    if not abs(x) <= 1.0:
        raise DomainError(f"x={x!r} lies outside [-1, 1]")
    return 1.0 - qmap.a * x * x


def orbit_deriv(qmap: QuadMap, x: float, n: int) -> tuple[np.ndarray, float]:
    """Return ``(x, f(x), ..., f^n(x))`` and ``prod_{i<n} f'(f^i(x))``."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    if not abs(x) <= 1.0:
        raise DomainError(f"x={x!r} lies outside [-1, 1]")
    pts = np.empty(n + 1)
    pts[0] = x
    der = 1.0
    for i in range(n):
        der *= -2.0 * qmap.a * pts[i]
        pts[i + 1] = 1.0 - qmap.a * pts[i] * pts[i]
    return pts, der


def critical_orbit(qmap: QuadMap, n: int) -> np.ndarray:
    """``c_j = f^j(0)`` for ``0 <= j <= n``."""
    c = np.empty(n + 1)
    c[0] = 0.0
    for j in range(n):
        c[j + 1] = 1.0 - qmap.a * c[j] * c[j]
    return c


# ----------------------------------------------------------------------------
# Holes


@dataclass(frozen=True)
class OpenIntervalSet:
    """A finite union of disjoint open intervals inside (-1, 1)."""

    components: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        comps = tuple((float(l), float(r)) for l, r in self.components)
        object.__setattr__(self, "components", comps)
        prev_r = -math.inf
        for l, r in comps:
            if not (-1.0 <= l < r <= 1.0):
                raise ValueError(f"bad hole component ({l}, {r})")
            if l < prev_r:
                raise ValueError("hole components must be sorted and disjoint")
            prev_r = r

    @classmethod
    def from_pairs(cls, pairs: Iterable[Sequence[float]]) -> "OpenIntervalSet":
        return cls(tuple(sorted((float(p[0]), float(p[1])) for p in pairs)))

    @classmethod
    def empty(cls) -> "OpenIntervalSet":
        return cls(())

    def __len__(self) -> int:
        return len(self.components)

    def __iter__(self) -> Iterator[tuple[float, float]]:
        return iter(self.components)

    def __bool__(self) -> bool:
        return bool(self.components)

    @property
    def lefts(self) -> np.ndarray:
        return np.array([c[0] for c in self.components], dtype=float)

    @property
    def rights(self) -> np.ndarray:
        return np.array([c[1] for c in self.components], dtype=float)

    @property
    def measure(self) -> float:
        return float(sum(r - l for l, r in self.components))

    def contains(self, x):
        """Strict interior test, vectorised over ``x``."""
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape, dtype=bool)
        for l, r in self.components:
            out |= (x > l) & (x < r)
        return out

    def distance(self, x: float) -> float:
        """Distance from ``x`` to the nearest component (0 inside or on an endpoint)."""
        best = math.inf
        for l, r in self.components:
            if l < x < r:
                return 0.0
            best = min(best, abs(x - l), abs(x - r))
        return best

    def component_of(self, x: float) -> int:
        """Index of the component strictly containing ``x``, or -1."""
        for j, (l, r) in enumerate(self.components):
            if l < x < r:
                return j
        return -1

    def reflect(self) -> "OpenIntervalSet":
        return OpenIntervalSet(tuple((-r, -l) for l, r in reversed(self.components)))

    def intersects(self, lo: float, hi: float) -> bool:
        """Does the closed interval [lo, hi] meet the open set?"""
        return any(hi > l and lo < r for l, r in self.components)

    def overlaps(self, lo: float, hi: float) -> list[tuple[int, float, float]]:
        """Components meeting [lo, hi], clipped: ``(index, left, right)``."""
        out = []
        for j, (l, r) in enumerate(self.components):
            if hi > l and lo < r:
                out.append((j, max(lo, l), min(hi, r)))
        return out

    def gaps(self, lo: float, hi: float) -> list[tuple[float, float]]:
        """Maximal closed subintervals of [lo, hi] outside the set (zero-width ones dropped)."""
        out = []
        cur = lo
        for l, r in self.components:
            if r <= cur:
                continue
            if l >= hi:
                break
            if l > cur:
                out.append((cur, min(l, hi)))
            cur = max(cur, r)
        if cur < hi:
            out.append((cur, hi))
        return out

    def scaled(self, factor: float) -> "OpenIntervalSet":
        """Shrink or stretch every component about its midpoint."""
        out = []
        for l, r in self.components:
            m, h = 0.5 * (l + r), 0.5 * (r - l) * factor
            out.append((m - h, m + h))
        return OpenIntervalSet(tuple(out))

    def as_list(self) -> list[list[float]]:
        return [[l, r] for l, r in self.components]


def hole_reflection(hole: OpenIntervalSet) -> OpenIntervalSet:
    """The reflected set ``G_j = -H_j``."""
    return hole.reflect()


@dataclass(frozen=True)
class CriticalOrbitStats:
    points: np.ndarray
    min_dist_zero: float
    min_dist_hole: float


def critical_orbit_stats(
    qmap: QuadMap, horizon: int, hole: OpenIntervalSet | None = None
) -> CriticalOrbitStats:
    """Orbit ``f^k(0)`` for ``1 <= k <= horizon`` with its distances to 0 and to ``hole``."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    pts = critical_orbit(qmap, horizon)[1:]
    dz = float(np.min(np.abs(pts)))
    dh = math.inf
    if hole:
        dh = min(hole.distance(float(p)) for p in pts)
    return CriticalOrbitStats(pts, dz, dh)


# ----------------------------------------------------------------------------
# Intervals under the map


def interval_image(qmap: QuadMap, lo: float, hi: float) -> tuple[float, float]:
    """Image of the closed interval [lo, hi]; the fold at 0 maps to the top value 1."""
    flo, fhi = qmap(lo), qmap(hi)
    if lo < 0.0 < hi:
        return (min(flo, fhi), 1.0)
    return (min(flo, fhi), max(flo, fhi))


def deviations(qmap: QuadMap, x, n: int, crit: np.ndarray | None = None) -> np.ndarray:
    """Deviation table ``d[j] = f^j(x) - f^j(0)`` for ``0 <= j <= n``.

    ``x`` may be an array; the result then has shape ``(n + 1,) + x.shape``.
    """
    c = critical_orbit(qmap, n) if crit is None else crit
    x = np.asarray(x, dtype=float)
    out = np.empty((n + 1,) + x.shape)
    d = x.copy()
    out[0] = d
    a = qmap.a
    for j in range(n):
        d = -a * d * (2.0 * c[j] + d)
        out[j + 1] = d
    return out


# ----------------------------------------------------------------------------
# The critical neighbourhood


@dataclass(frozen=True)
class NeighborhoodPartition:
    """Cells ``I_k = (e^{-(k+1)}, e^{-k})`` of (-delta, delta), mirrored for k < 0."""

    k0: int
    kmax: int = 40

    def __post_init__(self):
        if self.k0 < 1:
            raise ValueError("k0 must be a positive integer")
        if self.kmax < self.k0:
            raise ValueError("kmax must be >= k0")

    @property
    def delta(self) -> float:
        return math.exp(-self.k0)

    @property
    def core(self) -> float:
        """Half-width of the unresolved residual around 0."""
        return math.exp(-(self.kmax + 1))

    def indices(self) -> list[int]:
        ks = list(range(self.k0, self.kmax + 1))
        return [-k for k in reversed(ks)] + ks

    def cell(self, k: int) -> tuple[float, float]:
        if abs(k) < self.k0 or abs(k) > self.kmax:
            raise CellIndexError(f"cell index {k} outside k0={self.k0}..kmax={self.kmax}")
        lo, hi = math.exp(-(abs(k) + 1)), math.exp(-abs(k))
        return (lo, hi) if k > 0 else (-hi, -lo)

    def index_of(self, x: float) -> int | None:
        """Cell index of ``x``; ``None`` outside (-delta, delta), 0 in the core or at 0."""
        ax = abs(x)
        if ax >= self.delta:
            return None
        if ax <= self.core:
            return 0
        k = int(math.floor(-math.log(ax)))
        # guard against log rounding at cell boundaries
        while k < self.kmax and ax <= math.exp(-(k + 1)):
            k += 1
        while k > self.k0 and ax >= math.exp(-k):
            k -= 1
        k = min(max(k, self.k0), self.kmax)
        return k if x > 0 else -k

    def boundaries(self) -> np.ndarray:
        """Sorted cut points inside [-delta, delta], including 0 and the core edges."""
        pos = [math.exp(-k) for k in range(self.k0, self.kmax + 2)]
        neg = [-p for p in pos]
        return np.array(sorted(neg + [0.0] + pos))


# ----------------------------------------------------------------------------
# Bound periods and recovery times


def _ptilde(qmap: QuadMap, y: np.ndarray, crit: np.ndarray, jmax: int) -> np.ndarray:
    """Vectorised ``p~(y)``: the first j >= 1 with ``|f^j y - f^j 0| >= 1/j^2``."""
    a = qmap.a
    d = np.array(y, dtype=float)
    out = np.zeros(d.shape, dtype=np.int64)
    live = np.ones(d.shape, dtype=bool)
    for j in range(1, jmax + 1):
        d = -a * d * (2.0 * crit[j - 1] + d)
        hit = live & (np.abs(d) >= 1.0 / (j * j))
        out[hit] = j
        live &= ~hit
        if not live.any():
            return out
    raise CapExceeded(f"bound period exceeds cap {jmax}")


def bound_period(
    qmap: QuadMap,
    part: NeighborhoodPartition,
    k: int,
    grid: int = 33,
    *,
    max_grid: int = 1 << 16,
    cap: int = 2000,
) -> int:
    """``p(k) = min over I_k of p~``, sampling ``grid`` points (endpoints included).

    The grid is doubled until two successive values agree.
    """
    if abs(k) < part.k0:
        raise CellIndexError(f"|k|={abs(k)} is below k0={part.k0}")
    if grid < 2:
        raise ValueError("grid must be >= 2")
    lo, hi = math.exp(-(abs(k) + 1)), math.exp(-abs(k))
    crit = critical_orbit(qmap, cap)
    prev = None
    g = grid
    while True:
        y = np.linspace(lo, hi, g)
        val = int(_ptilde(qmap, y, crit, cap).min())
        if prev is not None and val == prev:
            return val
        if g >= max_grid:
            return val
        prev = val
        g = 2 * g - 1  # keeps the previous nodes


def ptilde(qmap: QuadMap, y: float, cap: int = 2000) -> int:
    crit = critical_orbit(qmap, cap)
    return int(_ptilde(qmap, np.array([y]), crit, cap)[0])


def _image_lengths(qmap: QuadMap, lo: float, hi: float, nmax: int, crit: np.ndarray):
    """Lengths of the images of [lo, hi] (|lo|, |hi| small) for j = 0..nmax.

    Deviation arithmetic is used while the image stays on one side of 0; once
    it straddles 0 the fold is applied in absolute coordinates.
    """
    a = qmap.a
    lengths = np.empty(nmax + 1)
    dlo, dhi = lo, hi
    anchored = True
    alo = ahi = 0.0
    for j in range(nmax + 1):
        if anchored:
            lengths[j] = abs(dhi - dlo)
            ylo, yhi = crit[j] + dlo, crit[j] + dhi
            if min(ylo, yhi) < 0.0 < max(ylo, yhi):
                anchored = False
                alo, ahi = min(ylo, yhi), max(ylo, yhi)
            else:
                dlo = -a * dlo * (2.0 * crit[j] + dlo)
                dhi = -a * dhi * (2.0 * crit[j] + dhi)
                continue
        else:
            lengths[j] = ahi - alo
        alo, ahi = interval_image(qmap, alo, ahi)
    return lengths


def recovery_time(
    qmap: QuadMap, part: NeighborhoodPartition, k: int, r: float, cap: int = 2000
) -> int:
    """``q(k)``: last n with every image of (0, e^{-|k|}) up to time n of length <= r/2.

    The mirrored cell has the same value because ``f`` is even.
    """
    if r <= 0:
        raise ValueError("r must be positive")
    if abs(k) < part.k0:
        raise CellIndexError(f"|k|={abs(k)} is below k0={part.k0}")
    crit = critical_orbit(qmap, cap + 1)
    lengths = _image_lengths(qmap, 0.0, math.exp(-abs(k)), cap + 1, crit)
    over = np.nonzero(lengths > 0.5 * r)[0]
    if over.size == 0:
        raise CapExceeded(f"recovery time for k={k} exceeds cap {cap}")
    return int(over[0]) - 1


def cell_growth_length(qmap: QuadMap, k: int, n: int) -> float:
    """``|f^n(I_k)|`` computed in deviation arithmetic."""
    crit = critical_orbit(qmap, n + 1)
    lo, hi = math.exp(-(abs(k) + 1)), math.exp(-abs(k))
    return float(_image_lengths(qmap, lo, hi, n, crit)[n])


@dataclass
class BoundRecoveryTables:
    """Tabulated ``p(k)`` and ``q(k)`` for ``k0 <= k <= kmax`` (mirrored cells share values)."""

    partition: NeighborhoodPartition
    p: dict[int, int]
    q: dict[int, int]
    r: float
    eps_prime: float
    growth: dict[int, float] = field(default_factory=dict)

    def qk(self, k: int) -> int:
        return self.q[abs(k)]

    def pk(self, k: int) -> int:
        return self.p[abs(k)]

    def violations(self) -> list[int]:
        """Indices where the ordering q(k) >= p(k) fails."""
        return [k for k in self.p if self.q[k] < self.p[k]]


def build_tables(
    qmap: QuadMap, part: NeighborhoodPartition, r: float, grid: int = 33, cap: int = 2000
) -> BoundRecoveryTables:
    if r <= 0:
        raise ValueError("r must be positive")
    p, q, growth = {}, {}, {}
    for k in range(part.k0, part.kmax + 1):
        p[k] = bound_period(qmap, part, k, grid, cap=cap)
        q[k] = recovery_time(qmap, part, k, r, cap=cap)
        growth[k] = cell_growth_length(qmap, k, q[k])
    return BoundRecoveryTables(part, p, q, r, min(growth.values()), growth)


# ----------------------------------------------------------------------------
# (P1) audits


@dataclass(frozen=True)
class P1Audit:
    d0: float
    expansion_ratio_min: float  # min over samples of |(f^p)'(x)| / e^{p/5}
    p_bounds_ok: bool
    samples: int


def p1_audit(
    qmap: QuadMap,
    part: NeighborhoodPartition,
    ks: Iterable[int],
    samples: int = 64,
    tables: BoundRecoveryTables | None = None,
) -> P1Audit:
    """Measure the smallest ``d0`` with ``d0^-1 1.9^j <= |(f^j)'(f x)| <= d0 1.9^j`` for j < p,
    and the worst ratio ``|(f^p)'(x)| e^{-p/5}`` over sampled ``x`` in the cells."""
    log19 = math.log(1.9)
    d0 = 1.0
    worst = math.inf
    ok = True
    count = 0
    for k in ks:
        pk = tables.pk(k) if tables is not None else bound_period(qmap, part, k)
        ok &= 0.5 * abs(k) <= pk <= 4 * abs(k)
        crit = critical_orbit(qmap, pk + 1)
        lo, hi = math.exp(-(abs(k) + 1)), math.exp(-abs(k))
        xs = np.linspace(lo, hi, samples)
        dev = deviations(qmap, xs, pk, crit)
        pos = crit[: pk + 1, None] + dev  # orbit points
        fac = np.abs(-2.0 * qmap.a * pos)  # |f'| along the orbit
        # |(f^j)'(f x)| for j = 0..pk-1 uses factors at times 1..j
        logd = np.concatenate([np.zeros((1, xs.size)), np.cumsum(np.log(fac[1:pk]), axis=0)])
        jj = np.arange(pk)[:, None]
        excess = np.abs(logd - jj * log19)
        d0 = max(d0, float(np.exp(excess.max())))
        full = np.log(fac[0]) + (np.sum(np.log(fac[1:pk]), axis=0) if pk > 1 else 0.0)
        worst = min(worst, float(np.exp(np.min(full - pk / 5.0))))
        count += xs.size
    return P1Audit(d0, worst, bool(ok), count)
