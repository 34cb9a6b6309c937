"""Monte Carlo of the open system and the small-hole study."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .intervals import OpenIntervalSet, QuadMap
from .transfer.ulam import UlamGrid, build_ulam, l1_distance, power_iterate


class InsufficientMass(ValueError):
    """Too few surviving samples to fit an escape rate."""


class FamilyError(ValueError):
    """A hole family violates the nesting conditions of the small-hole limit."""


@dataclass(frozen=True)
class InitDensity:
    """Piecewise-constant initial density on [-1, 1]."""

    edges: tuple[float, ...] = (-1.0, 1.0)
    weights: tuple[float, ...] = (1.0,)
    name: str = "uniform"

    def __post_init__(self):
        if len(self.edges) != len(self.weights) + 1:
            raise ValueError("need one weight per piece")
        if any(w < 0 for w in self.weights) or sum(self.weights) <= 0:
            raise ValueError("weights must be nonnegative with positive sum")
        if any(b <= a for a, b in zip(self.edges[:-1], self.edges[1:])):
            raise ValueError("edges must increase")
        if self.edges[0] < -1.0 or self.edges[-1] > 1.0:
            raise ValueError("initial density must live on [-1, 1]")

    @classmethod
    def uniform(cls) -> "InitDensity":
        return cls()

    @classmethod
    def center_bump(cls, half_width: float = 0.5, steps: int = 16) -> "InitDensity":
        """Piecewise-constant tent bump supported on [-half_width, half_width]."""
        e = np.linspace(-half_width, half_width, steps + 1)
        mid = 0.5 * (e[:-1] + e[1:])
        w = 1.0 - np.abs(mid) / half_width
        return cls(tuple(e.tolist()), tuple(w.tolist()), "center_bump")

    def sample(self, u: np.ndarray) -> np.ndarray:
        """Inverse-CDF transform of uniforms ``u`` in [0, 1)."""
        e = np.asarray(self.edges)
        w = np.asarray(self.weights)
        mass = w * np.diff(e)
        cum = np.concatenate([[0.0], np.cumsum(mass)])
        t = u * cum[-1]
        j = np.clip(np.searchsorted(cum, t, side="right") - 1, 0, w.size - 1)
        # skip zero-mass pieces that searchsorted may land on at their left edge
        frac = np.where(mass[j] > 0, (t - cum[j]) / np.where(mass[j] > 0, mass[j], 1.0), 0.0)
        return e[j] + np.clip(frac, 0.0, 1.0) * (e[j + 1] - e[j])

    def on_grid(self, grid: UlamGrid) -> np.ndarray:
        """Cell averages of the normalised density."""
        e = np.asarray(self.edges)
        w = np.asarray(self.weights)
        w = w / np.sum(w * np.diff(e))
        ge = grid.edges
        out = np.zeros(grid.n_cells)
        for k in range(w.size):
            ov = np.clip(np.minimum(ge[1:], e[k + 1]) - np.maximum(ge[:-1], e[k]), 0, None)
            out += w[k] * ov
        return out / grid.width


@dataclass
class SurvivalSeries:
    p: np.ndarray
    samples: int
    seed: int
    n_max: int
    truncated: bool
    generator: str = kernels.GENERATOR_NAME
    histograms: dict[int, np.ndarray] = field(default_factory=dict)
    bins: int = 0

    def survivors(self, n: int) -> int:
        return int(round(self.p[n] * self.samples))


def survival_mc(
    qmap: QuadMap,
    hole: OpenIntervalSet,
    init: InitDensity | None = None,
    n_max: int = 200,
    samples: int = 1_000_000,
    seed: int = 0,
    *,
    hist_steps: Sequence[int] = (),
    bins: int = 8192,
    chunk: int = 1 << 18,
) -> SurvivalSeries:
    """Kill-on-entry Monte Carlo; ``p[n]`` is the surviving fraction after n steps.

    Samples that land strictly inside a hole component at step n are removed
    and never replaced.  Histograms (normalised over survivors, as densities on
    ``bins`` equal cells of [-1, 1]) are collected at ``hist_steps``.
    """
    if samples < 10_000:
        raise ValueError("samples must be >= 1e4")
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    init = init or InitDensity.uniform()
    steps = np.array(sorted(set(int(s) for s in hist_steps if 0 <= s <= n_max)), dtype=np.int64)
    deaths_count = np.zeros(n_max + 2, dtype=np.int64)
    hist = np.zeros((steps.size, bins), dtype=np.int64)
    for start in range(0, samples, chunk):
        cnt = min(chunk, samples - start)
        x0 = init.sample(kernels.uniforms(seed, start, cnt))
        deaths, h = kernels.survival(qmap.a, hole.lefts, hole.rights, x0, n_max, steps, bins)
        deaths_count += np.bincount(deaths, minlength=n_max + 2)
        hist += h
    alive = samples - np.cumsum(deaths_count[: n_max + 1])
    p = alive / samples
    width = 2.0 / bins
    hists = {}
    for k, s in enumerate(steps):
        tot = hist[k].sum()
        hists[int(s)] = hist[k] / (tot * width) if tot else np.zeros(bins)
    return SurvivalSeries(p, samples, seed, n_max, bool(alive[-1] == 0), histograms=hists, bins=bins)


def survival_scalar(qmap: QuadMap, hole: OpenIntervalSet, x: float, n_max: int) -> int:
    """Reference kill step of one trajectory (``n_max + 1`` if it survives)."""
    for step in range(n_max + 1):
        if step:
            x = 1.0 - qmap.a * x * x
        if any(l < x < r for l, r in hole):
            return step
    return n_max + 1


@dataclass(frozen=True)
class EscapeFit:
    lam: float
    stderr: float
    window: tuple[int, int]
    r2: float


def escape_rate_fit(
    p: np.ndarray, samples: int, window: tuple[int, int] | None = None
) -> EscapeFit:
    """Least-squares slope of ``log p_n`` over a tail window; ``lambda = e^slope``.

    ``window`` is an inclusive range of n.  By default the upper half of the
    usable range (``p_n >= 100/samples``) is used, widened to five points.
    """
    p = np.asarray(p, dtype=float)
    usable = np.nonzero(p >= 100.0 / samples)[0]
    hi_ok = int(usable.max()) if usable.size else -1
    if window is None:
        if hi_ok < 4:
            raise InsufficientMass(f"usable window is n=0..{hi_ok}; need at least 5 points")
        lo = max(0, min(hi_ok // 2, hi_ok - 4))
        window = (max(1, lo) if hi_ok - max(1, lo) >= 4 else lo, hi_ok)
    lo, hi = window
    n = np.arange(lo, hi + 1)
    if n.size < 5 or np.any(p[n] < 100.0 / samples):
        raise InsufficientMass(
            f"window n={lo}..{hi} has fewer than 5 points with p_n >= 100/samples "
            f"(usable window is n=0..{hi_ok})"
        )
    y = np.log(p[n])
    x = n - n.mean()
    sxx = float(x @ x)
    slope = float(x @ (y - y.mean())) / sxx
    resid = y - y.mean() - slope * x
    dof = n.size - 2
    se = math.sqrt(float(resid @ resid) / dof / sxx) if dof > 0 else 0.0
    sst = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float(resid @ resid) / sst if sst > 0 else 1.0
    lam = math.exp(slope)
    return EscapeFit(lam, lam * se, (int(lo), int(hi)), r2)


def srb_closed_form(grid: UlamGrid) -> np.ndarray:
    """Cell averages of ``1/(pi sqrt(1-x^2))``, the a=2 invariant density."""
    e = np.clip(grid.edges, -1.0, 1.0)
    return (np.arcsin(e[1:]) - np.arcsin(e[:-1])) / math.pi / grid.width


def srb_reference(
    qmap: QuadMap,
    grid: UlamGrid,
    mode: str = "closed_form_a2",
    *,
    steps: int = 100_000_000,
    burn: int = 1000,
    chains: int = 256,
    seed: int = 0,
) -> np.ndarray:
    """Reference invariant density of the closed map on ``grid``.

    ``closed_form_a2`` is exact (a = 2 only); ``orbit_histogram`` bins
    ``steps`` orbit points split over ``chains`` independent chains.
    """
    if mode == "closed_form_a2":
        if qmap.a != 2.0:
            raise ValueError("closed_form_a2 is only valid at a = 2")
        return srb_closed_form(grid)
    if mode != "orbit_histogram":
        raise ValueError(f"unknown mode {mode!r}")
    per = max(1, steps // chains)
    hist, _ = kernels.orbit_histogram(qmap.a, seed, chains, per, burn, grid.n_cells, grid.lo, grid.hi)
    return hist / (hist.sum() * grid.width)


@dataclass(frozen=True)
class ConditionalLimit:
    distance: float
    n_star: int
    bins: int
    survivors: tuple[int, int]
    noise_scale: float  # rough L1 noise of two independent histograms


def conditional_limit_test(
    qmap: QuadMap,
    hole: OpenIntervalSet,
    init1: InitDensity,
    init2: InitDensity,
    n_star: int,
    samples: int = 1_000_000,
    seed: int = 0,
    bins: int = 64,
) -> ConditionalLimit:
    """L1 distance between the survivor distributions of two initial densities."""
    s1 = survival_mc(qmap, hole, init1, n_star, samples, seed, hist_steps=[n_star], bins=bins)
    s2 = survival_mc(qmap, hole, init2, n_star, samples, seed + 1, hist_steps=[n_star], bins=bins)
    w = 2.0 / bins
    h1, h2 = s1.histograms[n_star], s2.histograms[n_star]
    k1, k2 = s1.survivors(n_star), s2.survivors(n_star)
    if k1 == 0 or k2 == 0:
        return ConditionalLimit(math.inf, n_star, bins, (k1, k2), math.inf)
    # E|X - Y| for two multinomial estimates, summed over bins
    pm = 0.5 * (h1 + h2) * w
    noise = float(np.sum(np.sqrt(2.0 / math.pi * pm * (1 / k1 + 1 / k2))))
    return ConditionalLimit(float(np.abs(h1 - h2).sum() * w), n_star, bins, (k1, k2), noise)


@dataclass
class ShrinkRecord:
    measure: float
    lam: float
    l1_to_srb: float
    iterations: int


@dataclass
class ShrinkStudyResult:
    records: list[ShrinkRecord]
    holes: list[OpenIntervalSet]
    n_cells: int

    @property
    def lam_increasing(self) -> bool:
        lam = [r.lam for r in self.records]
        return all(b > a for a, b in zip(lam[:-1], lam[1:]))

    @property
    def l1_decreasing(self) -> bool:
        d = [r.l1_to_srb for r in self.records]
        return all(b < a for a, b in zip(d[:-1], d[1:]))


def validate_family(
    holes: Sequence[OpenIntervalSet], delta: float, labels: Sequence[float] | None = None
) -> None:
    """Check nesting and the critical-point condition for a hole family (largest first)."""
    if labels is not None:
        for s, h in zip(labels, holes):
            if h.measure > s * (1 + 1e-12):
                raise FamilyError(f"condition (1): m(H_s)={h.measure} exceeds s={s}")
    for big, small in zip(holes[:-1], holes[1:]):
        used = [0] * len(big)
        for l, r in small:
            host = [j for j, (bl, br) in enumerate(big) if bl <= l and r <= br]
            if not host:
                raise FamilyError(f"condition (1): component ({l}, {r}) is not inside the larger hole")
            used[host[0]] += 1
        if max(used, default=0) > 1:
            raise FamilyError("condition (1): a component of H_t contains two components of H_s")
    pts = (0.0, delta, -delta)
    none_in = all(not h.contains(np.array(pts)).any() for h in holes)
    all_in = all(h.contains(np.array(pts)).all() for h in holes)
    if not (none_in or all_in):
        raise FamilyError("condition (2): 0, +-delta must avoid every H_t or lie in every H_s")


def shrink_study(
    qmap: QuadMap,
    holes: Sequence[OpenIntervalSet],
    n_cells: int = 8192,
    *,
    delta: float = math.exp(-6),
    labels: Sequence[float] | None = None,
    srb: np.ndarray | None = None,
) -> ShrinkStudyResult:
    """Ulam eigenpair along a nested family of shrinking holes."""
    holes = sorted(holes, key=lambda h: -h.measure)
    validate_family(holes, delta, labels)
    grid = UlamGrid(n_cells)
    if srb is None:
        mode = "closed_form_a2" if qmap.a == 2.0 else "orbit_histogram"
        srb = srb_reference(qmap, grid, mode)
    recs = []
    for h in holes:
        res = power_iterate(build_ulam(qmap, h, n_cells))
        recs.append(ShrinkRecord(h.measure, res.lam, l1_distance(res.density, srb, grid.width), res.iterations))
    return ShrinkStudyResult(recs, list(holes), n_cells)
