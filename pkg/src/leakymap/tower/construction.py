"""Growth-and-return construction on reference tiles.

A seed tile is followed forward as a family of pieces.  Each piece keeps its
seed interval, its current image and a per-step code array from which any
image point can be pulled back to seed coordinates (see
``kernels.pullback``).  While a piece is bound after a close approach to 0
its image is carried as a deviation from the critical orbit.

Pieces stop when their image has grown to ``growth * eps`` or when they fall
into the hole.  Grown pieces return the reference tiles they cover; at most
two end pieces re-enter the growth procedure.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .. import kernels
from ..intervals import (
    BoundRecoveryTables,
    NeighborhoodPartition,
    OpenIntervalSet,
    QuadMap,
    critical_orbit,
)
from .cover import ReferenceCover

GROWTH = 4**8


@dataclass(eq=False)
class Piece:
    """A subinterval of a seed tile in flight."""

    u0: float
    u1: float
    y0: float  # image of u0 (a deviation while bound)
    y1: float  # image of u1
    codes: np.ndarray
    start: int  # absolute time at which the current growth run began
    chain: tuple[int, ...] = ()
    itinerary: tuple[tuple[int, int], ...] = ()
    bound: bool = False
    t: int = -1
    deadline: int = 0
    k: int = 0
    fresh: bool = False
    inner: "Piece | None" = None
    origin: str = "seed"
    alive: bool = True

    @property
    def width(self) -> float:
        return self.u1 - self.u0


@dataclass
class StoppedCell:
    """A piece at its stopping time ``stop`` (absolute) for the run begun at ``start``."""

    seed: int
    u0: float
    u1: float
    start: int
    stop: int
    outcome: str  # "grown" or "hole"
    hole: int
    case: str
    image: tuple[float, float]
    codes: np.ndarray
    chain: tuple[int, ...]

    @property
    def S(self) -> int:
        return self.stop - self.start

    @property
    def mass(self) -> float:
        return self.u1 - self.u0


@dataclass
class ReturnBlock:
    """Consecutive returned cells of one stopped piece; cell m maps onto tile ``first + m``.

    ``u_edges`` and ``logder`` (seed coordinates of the tile boundaries and
    ``log|(T^R)'|`` there) are kept only when the construction is asked to.
    """

    seed: int
    R: int
    first: int
    count: int
    u_lo: float
    u_hi: float
    min_logder: float  # over the sampled tile boundaries
    min_log_stretch: float  # min over cells of log(|tile| / |cell|), when cells are kept
    u_edges: np.ndarray | None = None
    logder: np.ndarray | None = None
    codes: np.ndarray | None = None
    increasing: bool = True

    @property
    def mass(self) -> float:
        return self.u_hi - self.u_lo

    @property
    def masses(self) -> np.ndarray:
        return np.abs(np.diff(self.u_edges))

    @property
    def targets(self) -> np.ndarray:
        return np.arange(self.first, self.first + self.count)


@dataclass
class HoleCell:
    seed: int
    R: int
    u0: float
    u1: float
    hole: int

    @property
    def mass(self) -> float:
        return self.u1 - self.u0


@dataclass
class Residual:
    seed: int
    u0: float
    u1: float
    reason: str  # "time cap", "width floor" or "core"
    time: int

    @property
    def mass(self) -> float:
        return self.u1 - self.u0


@dataclass
class TowerConfig:
    k0: int = 6
    kmax: int = 40
    eps: float = 1e-3
    growth: int = GROWTH
    time_cap: int = 400
    width_floor: float = 1e-12  # relative to the seed width
    keep_cells: bool = False  # store every returned cell (needed by the tower operator)
    derivative_stride: int = 1  # sample every n-th tile boundary for the expansion audit

    def __post_init__(self):
        if self.growth < 16:
            raise ValueError("growth must be >= 16 so every stopped image covers whole tiles")
        if self.time_cap < 1:
            raise ValueError("time_cap must be positive")
        if not self.eps > 0:
            raise ValueError("eps must be positive")


@dataclass
class SeedResult:
    seed: int
    mass: float
    stopped: list[StoppedCell] = field(default_factory=list)
    blocks: list[ReturnBlock] = field(default_factory=list)
    holes: list[HoleCell] = field(default_factory=list)
    residual: list[Residual] = field(default_factory=list)
    live_counts: np.ndarray | None = None
    flags: Counter = field(default_factory=Counter)


class _SeedRun:
    def __init__(self, qmap, hole, part, tables, cover, cfg, crit, edges, seed):
        self.q = qmap
        self.a = qmap.a
        self.hole = hole
        self.part = part
        self.tables = tables
        self.cover = cover
        self.cfg = cfg
        self.crit = crit
        self.edges = edges
        self.grow_len = cfg.growth * cover.eps
        self.delta = part.delta
        self.cell0 = part.delta * (1.0 - math.exp(-1.0))
        self.bounds = part.boundaries()
        lo, hi = cover.tile(seed)
        self.floor = cfg.width_floor * (hi - lo)
        self.res = SeedResult(seed, hi - lo)
        self.live: list[Piece] = []

    # ------------------------------------------------------------------ helpers
    def absolute(self, p: Piece, n: int) -> tuple[float, float]:
        if p.bound:
            c = self.crit[n - p.t]
            return c + p.y0, c + p.y1
        return p.y0, p.y1

    def pull(self, p: Piece, ys, n: int):
        return kernels.pullback(self.a, ys, n, p.codes, self.crit)

    def split(self, p: Piece, cuts: list[float], n: int) -> list[Piece]:
        """Cut ``p`` at absolute image values ``cuts``; children come back in image order."""
        A, B = p.y0, p.y1
        inc = B > A
        cuts = sorted(cuts)
        us, _ = self.pull(p, np.array(cuts), n)
        lo_u, hi_u = (p.u0, p.u1) if inc else (p.u1, p.u0)
        pts_u = [lo_u, *us.tolist(), hi_u]
        pts_y = [min(A, B), *cuts, max(A, B)]
        # rounding must not reorder the seed points
        arr = np.array(pts_u)
        arr = np.clip(arr, p.u0, p.u1)
        arr = np.maximum.accumulate(arr) if inc else np.minimum.accumulate(arr)
        kids = []
        for m in range(len(pts_y) - 1):
            ua, ub = float(arr[m]), float(arr[m + 1])
            ya, yb = pts_y[m], pts_y[m + 1]
            if inc:
                kid = self.child(p, ua, ub, ya, yb)
            else:
                kid = self.child(p, ub, ua, yb, ya)
            kids.append(kid)
        return kids

    def child(self, p: Piece, u0, u1, y0, y1) -> Piece:
        return Piece(
            u0, u1, y0, y1, p.codes.copy(), p.start, p.chain, p.itinerary, origin="cut"
        )

    def retire(self, p: Piece, reason: str, n: int):
        p.alive = False
        self.res.residual.append(Residual(self.res.seed, p.u0, p.u1, reason, n))

    # ------------------------------------------------------------------ events
    def capture(self, p: Piece, n: int, j: int):
        p.alive = False
        lo, hi = sorted((p.y0, p.y1))
        self.res.stopped.append(
            StoppedCell(self.res.seed, p.u0, p.u1, p.start, n, "hole", j, "hole", (lo, hi), p.codes, p.chain)
        )
        self.res.holes.append(HoleCell(self.res.seed, n, p.u0, p.u1, j))

    def stop_grown(self, p: Piece, n: int, case: str):
        p.alive = False
        lo, hi = sorted((p.y0, p.y1))
        self.res.stopped.append(
            StoppedCell(self.res.seed, p.u0, p.u1, p.start, n, "grown", -1, case, (lo, hi), p.codes, p.chain)
        )
        self.return_step(p, n)

    def return_step(self, p: Piece, n: int):
        T_lo, T_hi = self.cover.lo, self.cover.hi
        eps = self.cover.eps
        lo, hi = sorted((p.y0, p.y1))
        i1 = int(np.searchsorted(T_lo, lo, side="left"))
        i2 = int(np.searchsorted(T_hi, hi, side="right")) - 1
        if i1 > i2:
            self.res.flags["no covered tile"] += 1
            self.restart(p, n, p.u0, p.u1, p.y0, p.y1)
            return
        inner = np.concatenate([T_lo[i1 : i2 + 1], T_hi[i2 : i2 + 1]])
        inner = inner[(inner > lo) & (inner < hi)]
        ys = np.concatenate([[lo], inner, [hi]])
        nseg = ys.size - 1
        Ll, Lr = T_lo[i1] - lo, hi - T_hi[i2]
        # returned tiles are segments sa..sb; end pieces are (first, last) segment pairs
        sa, sb = 0, nseg - 1
        left = right = None
        if Ll > 0.0:
            if Ll < eps and i2 > i1:
                left, sa = (0, 1), 2
            else:
                left, sa = (0, 0), 1
        if Lr > 0.0:
            if Lr < eps and sb - 1 >= sa:
                right, sb = (nseg - 2, nseg - 1), nseg - 3
            else:
                if Lr < eps:
                    self.res.flags["short end piece"] += 1
                right, sb = (nseg - 1, nseg - 1), nseg - 2
        inc = p.y1 > p.y0
        cfg = self.cfg
        # which boundary points must be pulled back
        want = np.zeros(ys.size, dtype=bool)
        for m in (sa, sb + 1, *(left or ()), *(x + 1 for x in (left or ())), *(right or ()), *(x + 1 for x in (right or ()))):
            if 0 <= m < ys.size:
                want[m] = True
        if sa <= sb:
            if cfg.keep_cells:
                want[sa : sb + 2] = True
            else:
                want[sa : sb + 2 : cfg.derivative_stride] = True
        idx = np.nonzero(want)[0]
        us_w, ld_w = self.pull(p, ys[idx], n)
        us = np.full(ys.size, np.nan)
        ld = np.full(ys.size, np.nan)
        us[idx], ld[idx] = us_w, ld_w
        ends = (p.u0, p.u1) if inc else (p.u1, p.u0)
        us[0], us[-1] = ends
        sel = ~np.isnan(us)
        v = np.clip(us[sel], p.u0, p.u1)
        us[sel] = np.maximum.accumulate(v) if inc else np.minimum.accumulate(v)
        if sa <= sb:
            first = i1 + sa - (1 if Ll > 0.0 else 0)
            ua, ub = us[sa], us[sb + 1]
            seg_ld = ld[sa : sb + 2]
            block = ReturnBlock(
                self.res.seed,
                n,
                first,
                sb - sa + 1,
                float(min(ua, ub)),
                float(max(ua, ub)),
                float(np.nanmin(seg_ld)),
                math.nan,
                increasing=bool(inc),
            )
            if cfg.keep_cells:
                ue = us[sa : sb + 2].copy()
                block.u_edges = ue
                block.logder = seg_ld.copy()
                block.codes = p.codes.copy()
                tiles = T_hi[first : first + block.count] - T_lo[first : first + block.count]
                cells = np.abs(np.diff(ue))
                with np.errstate(divide="ignore"):
                    block.min_log_stretch = float(np.min(np.log(tiles) - np.log(cells)))
            self.res.blocks.append(block)
        for end in (left, right):
            if end is None:
                continue
            m0, m1 = end[0], end[1] + 1
            ya, yb, ua, ub = ys[m0], ys[m1], us[m0], us[m1]
            if inc:
                self.restart(p, n, float(ua), float(ub), float(ya), float(yb))
            else:
                self.restart(p, n, float(ub), float(ua), float(yb), float(ya))

    def restart(self, p: Piece, n: int, u0, u1, y0, y1):
        kid = Piece(u0, u1, y0, y1, p.codes.copy(), n, p.chain + (n,), p.itinerary, origin="end")
        if kid.width <= self.floor:
            self.retire(kid, "width floor", n)
            return
        self.q_cut(kid, n, was_cut=False)

    # ------------------------------------------------------------------ steps
    def q_cut(self, p: Piece, n: int, was_cut: bool):
        """Partition by the critical-neighbourhood cells; pieces landing there become bound."""
        lo, hi = sorted((p.y0, p.y1))
        d = self.delta
        if hi <= -d or lo >= d:
            self.live.append(p)
            return
        b = self.bounds
        cuts = b[(b > lo) & (b < hi)].tolist()
        # append a short outside sliver to the outermost cell instead of cutting at +-delta
        if d in cuts and hi - d <= self.cell0:
            cuts.remove(d)
        if -d in cuts and -d - lo <= self.cell0:
            cuts.remove(-d)
        kids = self.split(p, cuts, n) if cuts else [p]
        fresh = was_cut or len(kids) > 1
        labels = []
        for kid in kids:
            klo, khi = sorted((kid.y0, kid.y1))
            a_, b_ = max(klo, -d), min(khi, d)
            if a_ >= b_:
                labels.append(None)
            else:
                labels.append(self.part.index_of(0.5 * (a_ + b_)))
        for m, (kid, lab) in enumerate(zip(kids, labels)):
            if kid.width <= self.floor:
                self.retire(kid, "width floor", n)
                labels[m] = "dead"
                continue
            if lab is None:
                self.live.append(kid)
                continue
            if lab == 0:
                self.retire(kid, "core", n)
                labels[m] = "dead"
                continue
            kid.bound = True
            kid.t = n
            kid.k = lab
            kid.deadline = n + self.tables.qk(lab)
            kid.fresh = fresh
            kid.itinerary = kid.itinerary + ((n, lab),)
            self.live.append(kid)
        for m, (kid, lab) in enumerate(zip(kids, labels)):
            if not isinstance(lab, int) or lab == 0:
                continue
            nb = m - 1 if lab > 0 else m + 1
            if 0 <= nb < len(kids) and labels[nb] == (lab + 1 if lab > 0 else lab - 1):
                kid.inner = kids[nb]

    def free_step(self, p: Piece, n: int):
        lo, hi = sorted((p.y0, p.y1))
        hits = self.hole.overlaps(lo, hi)
        if not hits:
            self.after_hole(p, n, False)
            return
        cuts = sorted({v for _, l, r in hits for v in (l, r) if lo < v < hi})
        kids = self.split(p, cuts, n) if cuts else [p]
        for kid in kids:
            klo, khi = sorted((kid.y0, kid.y1))
            j = self.hole.component_of(0.5 * (klo + khi))
            if j >= 0:
                self.capture(kid, n, j)
            else:
                self.after_hole(kid, n, True)

    def after_hole(self, p: Piece, n: int, was_cut: bool):
        if abs(p.y1 - p.y0) >= self.grow_len:
            self.stop_grown(p, n, "free")
        else:
            self.q_cut(p, n, was_cut)

    def deadline_step(self, p: Piece, n: int):
        y0, y1 = self.absolute(p, n)
        p.y0, p.y1 = y0, y1
        p.bound = False
        if abs(y1 - y0) < self.grow_len:
            self.live.append(p)
            return
        g = p.inner
        if not (p.fresh and g is not None and g.alive and g.bound and g.t == p.t):
            self.stop_grown(p, n, "deadline")
            return
        if p.u0 == g.u1:
            ys, yo, side = y0, y1, 0
        elif p.u1 == g.u0:
            ys, yo, side = y1, y0, 1
        else:
            self.res.flags["adjoin without shared endpoint"] += 1
            self.stop_grown(p, n, "deadline")
            return
        E = self.edges
        if ys < yo:
            idx = int(np.searchsorted(E, ys, side="right"))
            b = float(E[idx]) if idx < E.size else math.inf
            ok = b < yo
        else:
            idx = int(np.searchsorted(E, ys, side="left")) - 1
            b = float(E[idx]) if idx >= 0 else -math.inf
            ok = b > yo
        on_edge = E[min(int(np.searchsorted(E, ys)), E.size - 1)] == ys
        if not ok or on_edge:
            self.stop_grown(p, n, "deadline")
            return
        ub = float(self.pull(p, np.array([b]), n)[0][0])
        ub = min(max(ub, p.u0), p.u1)
        dev = b - self.crit[n - g.t]
        if side == 0:
            g.u1, g.y1 = ub, dev
            p.u0, p.y0 = ub, b
        else:
            g.u0, g.y0 = ub, dev
            p.u1, p.y1 = ub, b
        self.res.flags["adjoined"] += 1
        self.stop_grown(p, n, "adjoin")

    def advance(self, p: Piece, n: int) -> None:
        """Move ``p`` from time n-1 to n, recording the step code."""
        a = self.a
        if p.bound:
            j = n - 1 - p.t
            p.codes[n - 1] = (2 if p.k > 0 else -2) if j == 0 else 0
            c = self.crit[j]
            p.y0 = -a * p.y0 * (2.0 * c + p.y0)
            p.y1 = -a * p.y1 * (2.0 * c + p.y1)
        else:
            p.codes[n - 1] = 1 if (p.y0 + p.y1) > 0 else -1
            p.y0 = 1.0 - a * p.y0 * p.y0
            p.y1 = 1.0 - a * p.y1 * p.y1

    # ------------------------------------------------------------------ driver
    def run(self) -> SeedResult:
        cfg = self.cfg
        lo, hi = self.cover.tile(self.res.seed)
        codes = np.zeros(cfg.time_cap + 1, dtype=np.int8)
        self.q_cut(Piece(lo, hi, lo, hi, codes, 0), 0, was_cut=False)
        counts = [len(self.live)]
        for n in range(1, cfg.time_cap + 1):
            if not self.live:
                break
            current, self.live = self.live, []
            for p in current:
                if p.alive:
                    self.advance(p, n)
            deadline = []
            for p in current:
                if not p.alive:
                    continue
                if p.bound and n < p.deadline:
                    y0, y1 = self.absolute(p, n)
                    glo, ghi = min(y0, y1), max(y0, y1)
                    if (glo < 0.0 < ghi) or self.hole.intersects(glo, ghi):
                        self.res.flags["bound guard"] += 1
                        p.y0, p.y1, p.bound = y0, y1, False
                        self.free_step(p, n)
                    else:
                        self.live.append(p)
                elif p.bound:
                    deadline.append(p)
                else:
                    self.free_step(p, n)
            deadline.sort(key=lambda p: abs(p.k))
            for p in deadline:
                if p.alive:
                    self.deadline_step(p, n)
            self.live = [p for p in self.live if p.alive]
            counts.append(len(self.live))
        for p in self.live:
            self.retire(p, "time cap", cfg.time_cap)
        self.live = []
        self.res.live_counts = np.array(counts)
        return self.res


@dataclass
class TowerBuild:
    """All cells produced for a set of seed tiles."""

    qmap: QuadMap
    hole: OpenIntervalSet
    cover: ReferenceCover
    tables: BoundRecoveryTables
    config: TowerConfig
    seeds: np.ndarray
    results: list[SeedResult]

    @property
    def seed_mass(self) -> float:
        return float(sum(r.mass for r in self.results))

    def stopped(self):
        for r in self.results:
            yield from r.stopped

    def blocks(self):
        for r in self.results:
            yield from r.blocks

    def hole_cells(self):
        for r in self.results:
            yield from r.holes

    def residuals(self):
        for r in self.results:
            yield from r.residual

    @property
    def flags(self) -> Counter:
        out = Counter()
        for r in self.results:
            out.update(r.flags)
        return out


def critical_table(qmap: QuadMap, tables: BoundRecoveryTables) -> np.ndarray:
    qmax = max(tables.q.values())
    return critical_orbit(qmap, qmax + 2)


def grow_and_return(
    qmap: QuadMap,
    hole: OpenIntervalSet,
    cover: ReferenceCover,
    tables: BoundRecoveryTables,
    config: TowerConfig,
    seeds=None,
) -> TowerBuild:
    """Run the construction on the given seed tiles (all tiles by default)."""
    part = tables.partition
    if abs(part.delta - cover.delta) > 1e-15:
        raise ValueError("cover and tables use different delta")
    crit = critical_table(qmap, tables)
    edges = np.union1d(cover.lo, cover.hi)
    seeds = np.arange(len(cover)) if seeds is None else np.asarray(seeds, dtype=int)
    out = []
    for s in seeds:
        out.append(_SeedRun(qmap, hole, part, tables, cover, config, crit, edges, int(s)).run())
    return TowerBuild(qmap, hole, cover, tables, config, seeds, out)
