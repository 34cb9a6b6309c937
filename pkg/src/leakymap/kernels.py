"""Hot loops, each in a numba flavour and a vectorised numpy flavour.

The public functions at the bottom dispatch on ``_backend.USE_NUMBA``.  Both
flavours produce identical integers (counts, histograms) and agree on floats
to rounding.

Random numbers come from a counter-based SplitMix64 stream: the k-th draw of
sample ``i`` under ``seed`` is a pure function of ``(seed, i, k)``, so results
do not depend on chunking or scheduling.
"""

from __future__ import annotations

import numpy as np

from . import _backend
from ._backend import njit

GENERATOR_NAME = "splitmix64-counter"

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0

# kinds of map understood by the Ulam kernel
QUADRATIC = 0
TENT = 1


# ----------------------------------------------------------------------------
# random streams


@njit(cache=True)
def _mix64(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(cache=True)
def _uniforms_nb(seed, start, count, draw):
    out = np.empty(count)
    base = _mix64(np.uint64(seed) + _GOLDEN * np.uint64(draw + 1))
    for k in range(count):
        z = _mix64(base + _GOLDEN * np.uint64(start + k))
        out[k] = np.float64(z >> _S11) * _INV53
    return out


def _uniforms_np(seed, start, count, draw):
    with np.errstate(over="ignore"):
        base = _mix64_np(np.uint64(seed) + _GOLDEN * np.uint64(draw + 1))
        idx = np.arange(start, start + count, dtype=np.uint64)
        z = _mix64_np(base + _GOLDEN * idx)
    return (z >> _S11).astype(np.float64) * _INV53


def _mix64_np(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


# ----------------------------------------------------------------------------
# Ulam assembly


@njit(cache=True, inline="always")
def _fwd(kind, a, x):
    if kind == QUADRATIC:
        return 1.0 - a * x * x
    if x <= 0.5:
        return 2.0 * x
    return 2.0 - 2.0 * x


@njit(cache=True, inline="always")
def _preimage_gap(kind, a, y1, y2):
    """Length of one monotone-branch preimage of [y1, y2] (y1 <= y2)."""
    if kind == QUADRATIC:
        u1 = max(0.0, (1.0 - y1) / a)
        u2 = max(0.0, (1.0 - y2) / a)
        s = np.sqrt(u1) + np.sqrt(u2)
        if s == 0.0:
            return 0.0
        return (u1 - u2) / s
    return 0.5 * (y2 - y1)


@njit(cache=True)
def _ulam_nb(kind, a, src_lo, src_hi, src_cell, tgt_lo, tgt_hi, tgt_cell, widths):
    n_src = src_lo.size
    jlo = np.empty(n_src, dtype=np.int64)
    jhi = np.empty(n_src, dtype=np.int64)
    ylo = np.empty(n_src)
    yhi = np.empty(n_src)
    total = 0
    for s in range(n_src):
        f1 = _fwd(kind, a, src_lo[s])
        f2 = _fwd(kind, a, src_hi[s])
        y1 = min(f1, f2)
        y2 = max(f1, f2)
        ylo[s] = y1
        yhi[s] = y2
        lo = np.searchsorted(tgt_hi, y1, side="right")
        hi = np.searchsorted(tgt_lo, y2, side="left")
        jlo[s] = lo
        jhi[s] = hi
        if hi > lo:
            total += hi - lo
    rows = np.empty(total, dtype=np.int64)
    cols = np.empty(total, dtype=np.int64)
    vals = np.empty(total)
    m = 0
    for s in range(n_src):
        for t in range(jlo[s], jhi[s]):
            o1 = max(ylo[s], tgt_lo[t])
            o2 = min(yhi[s], tgt_hi[t])
            rows[m] = src_cell[s]
            cols[m] = tgt_cell[t]
            if o2 > o1:
                vals[m] = _preimage_gap(kind, a, o1, o2) / widths[src_cell[s]]
            else:
                vals[m] = 0.0
            m += 1
    return rows, cols, vals


def _ulam_np(kind, a, src_lo, src_hi, src_cell, tgt_lo, tgt_hi, tgt_cell, widths):
    if kind == QUADRATIC:
        f1, f2 = 1.0 - a * src_lo**2, 1.0 - a * src_hi**2
    else:
        f1 = np.where(src_lo <= 0.5, 2.0 * src_lo, 2.0 - 2.0 * src_lo)
        f2 = np.where(src_hi <= 0.5, 2.0 * src_hi, 2.0 - 2.0 * src_hi)
    ylo, yhi = np.minimum(f1, f2), np.maximum(f1, f2)
    jlo = np.searchsorted(tgt_hi, ylo, side="right")
    jhi = np.searchsorted(tgt_lo, yhi, side="left")
    cnt = np.maximum(jhi - jlo, 0)
    s_idx = np.repeat(np.arange(src_lo.size), cnt)
    offs = np.arange(cnt.sum()) - np.repeat(np.cumsum(cnt) - cnt, cnt)
    t_idx = jlo[s_idx] + offs
    o1 = np.maximum(ylo[s_idx], tgt_lo[t_idx])
    o2 = np.minimum(yhi[s_idx], tgt_hi[t_idx])
    if kind == QUADRATIC:
        u1 = np.maximum(0.0, (1.0 - o1) / a)
        u2 = np.maximum(0.0, (1.0 - o2) / a)
        den = np.sqrt(u1) + np.sqrt(u2)
        with np.errstate(invalid="ignore", divide="ignore"):
            gap = np.where(den > 0, (u1 - u2) / den, 0.0)
    else:
        gap = 0.5 * (o2 - o1)
    gap = np.where(o2 > o1, gap, 0.0)
    rows = src_cell[s_idx]
    return rows, tgt_cell[t_idx], gap / widths[rows]


# ----------------------------------------------------------------------------
# Monte Carlo survival


@njit(cache=True)
def _survival_nb(a, hole_l, hole_r, x0, n_max, hist_steps, bins, lo, hi):
    n = x0.size
    nh = hist_steps.size
    deaths = np.empty(n, dtype=np.int64)
    hist = np.zeros((nh, bins), dtype=np.int64)
    scale = bins / (hi - lo)
    nhole = hole_l.size
    for i in range(n):
        x = x0[i]
        died = n_max + 1
        h = 0
        for step in range(n_max + 1):
            if step > 0:
                x = 1.0 - a * x * x
            dead = False
            for c in range(nhole):
                if x > hole_l[c] and x < hole_r[c]:
                    dead = True
                    break
            if dead:
                died = step
                break
            while h < nh and hist_steps[h] < step:
                h += 1
            if h < nh and hist_steps[h] == step:
                b = int((x - lo) * scale)
                if b < 0:
                    b = 0
                elif b >= bins:
                    b = bins - 1
                hist[h, b] += 1
        deaths[i] = died
    return deaths, hist


def _survival_np(a, hole_l, hole_r, x0, n_max, hist_steps, bins, lo, hi):
    n = x0.size
    deaths = np.full(n, n_max + 1, dtype=np.int64)
    hist = np.zeros((hist_steps.size, bins), dtype=np.int64)
    want = {int(s): k for k, s in enumerate(hist_steps)}
    idx = np.arange(n)
    x = x0.copy()
    scale = bins / (hi - lo)
    for step in range(n_max + 1):
        if step > 0:
            x = 1.0 - a * x * x
        dead = np.zeros(x.size, dtype=bool)
        for l, r in zip(hole_l, hole_r):
            dead |= (x > l) & (x < r)
        if dead.any():
            deaths[idx[dead]] = step
            keep = ~dead
            x, idx = x[keep], idx[keep]
        if step in want:
            b = np.clip(((x - lo) * scale).astype(np.int64), 0, bins - 1)
            hist[want[step]] += np.bincount(b, minlength=bins)
        if x.size == 0:
            break
    return deaths, hist


# ----------------------------------------------------------------------------
# long-orbit histogram


@njit(cache=True)
def _orbit_hist_nb(a, seed, chains, steps, burn, bins, lo, hi):
    hist = np.zeros(bins, dtype=np.int64)
    scale = bins / (hi - lo)
    restarts = 0
    for c in range(chains):
        draw = 0
        x = lo + (hi - lo) * _uniforms_nb(seed, c, 1, draw)[0]
        for t in range(burn + steps):
            y = 1.0 - a * x * x
            if y == x:
                # stuck on a fixed point after rounding: restart the chain
                draw += 1
                restarts += 1
                y = lo + (hi - lo) * _uniforms_nb(seed, c, 1, draw)[0]
            x = y
            if t >= burn:
                b = int((x - lo) * scale)
                if b < 0:
                    b = 0
                elif b >= bins:
                    b = bins - 1
                hist[b] += 1
    return hist, restarts


def _orbit_hist_np(a, seed, chains, steps, burn, bins, lo, hi):
    hist = np.zeros(bins, dtype=np.int64)
    scale = bins / (hi - lo)
    x = lo + (hi - lo) * _uniforms_np(seed, 0, chains, 0)
    draws = np.zeros(chains, dtype=np.int64)
    restarts = 0
    block = []
    for t in range(burn + steps):
        y = 1.0 - a * x * x
        stuck = np.nonzero(y == x)[0]
        for c in stuck:
            draws[c] += 1
            restarts += 1
            y[c] = lo + (hi - lo) * _uniforms_np(seed, int(c), 1, int(draws[c]))[0]
        x = y
        if t >= burn:
            block.append(np.clip(((x - lo) * scale).astype(np.int64), 0, bins - 1))
            if len(block) == 64:
                hist += np.bincount(np.concatenate(block), minlength=bins)
                block = []
    if block:
        hist += np.bincount(np.concatenate(block), minlength=bins)
    return hist, restarts


# ----------------------------------------------------------------------------
# pulling image points back along a recorded itinerary
#
# ``codes[i]`` describes the step from time i to i+1 of a tracked piece:
#   +1 / -1  free step, sign of the point at time i
#   +2 / -2  entry into a bound block at time i (sign of the point at time i)
#   0        step inside a bound block; the point is carried as a deviation
#            from the critical orbit, ``x_i = crit[i - t] + d``


@njit(cache=True)
def _block_start(codes, i):
    while codes[i] == 0:
        i -= 1
    return i


@njit(cache=True)
def _pullback_one(a, y, n, codes, crit):
    """Return ``(x0, log|(T^n)'(x0)|)`` for the point at time n with value ``y``."""
    logd = 0.0
    i = n - 1
    x = y
    while i >= 0:
        c = codes[i]
        if c == 1 or c == -1:
            u = (1.0 - x) / a
            if u < 0.0:
                u = 0.0
            x = c * np.sqrt(u)
            logd += np.log(2.0 * a * abs(x))
            i -= 1
        else:
            t = _block_start(codes, i)
            j = i + 1 - t
            d = x - crit[j]
            while j > 1:
                cj = crit[j - 1]
                disc = cj * cj - d / a
                if disc < 0.0:
                    disc = 0.0
                r = np.sqrt(disc)
                den = cj + r if cj >= 0.0 else cj - r
                d = -(d / a) / den
                logd += np.log(2.0 * a * abs(cj + d))
                j -= 1
            s = 1.0 if codes[t] > 0 else -1.0
            u = -d / a
            if u < 0.0:
                u = 0.0
            x = s * np.sqrt(u)
            logd += np.log(2.0 * a * abs(x))
            i = t - 1
    return x, logd


@njit(cache=True)
def _pullback_nb(a, ys, n, codes, crit):
    m = ys.size
    xs = np.empty(m)
    ld = np.empty(m)
    for k in range(m):
        xs[k], ld[k] = _pullback_one(a, ys[k], n, codes, crit)
    return xs, ld


def _pullback_np(a, ys, n, codes, crit):
    x = np.array(ys, dtype=float)
    logd = np.zeros_like(x)
    i = n - 1
    with np.errstate(divide="ignore"):
        while i >= 0:
            c = int(codes[i])
            if c in (1, -1):
                x = c * np.sqrt(np.maximum(0.0, (1.0 - x) / a))
                logd += np.log(2.0 * a * np.abs(x))
                i -= 1
                continue
            t = i
            while codes[t] == 0:
                t -= 1
            j = i + 1 - t
            d = x - crit[j]
            while j > 1:
                cj = crit[j - 1]
                r = np.sqrt(np.maximum(0.0, cj * cj - d / a))
                den = cj + r if cj >= 0.0 else cj - r
                d = -(d / a) / den
                logd += np.log(2.0 * a * np.abs(cj + d))
                j -= 1
            s = 1.0 if codes[t] > 0 else -1.0
            x = s * np.sqrt(np.maximum(0.0, -d / a))
            logd += np.log(2.0 * a * np.abs(x))
            i = t - 1
    return x, logd


# ----------------------------------------------------------------------------
# dispatch


def uniforms(seed: int, start: int, count: int, draw: int = 0) -> np.ndarray:
    """Draw ``draw`` of samples ``start .. start+count-1`` in [0, 1)."""
    if _backend.USE_NUMBA:
        return _uniforms_nb(np.uint64(seed), start, count, draw)
    return _uniforms_np(seed, start, count, draw)


def ulam_entries(kind, a, src_lo, src_hi, src_cell, tgt_lo, tgt_hi, tgt_cell, widths):
    fn = _ulam_nb if _backend.USE_NUMBA else _ulam_np
    return fn(kind, float(a), src_lo, src_hi, src_cell, tgt_lo, tgt_hi, tgt_cell, widths)


def survival(a, hole_l, hole_r, x0, n_max, hist_steps, bins, lo=-1.0, hi=1.0):
    """Kill step per sample and survivor histograms; rows follow ``np.unique(hist_steps)``."""
    fn = _survival_nb if _backend.USE_NUMBA else _survival_np
    return fn(
        float(a),
        np.ascontiguousarray(hole_l, dtype=float),
        np.ascontiguousarray(hole_r, dtype=float),
        np.ascontiguousarray(x0, dtype=float),
        int(n_max),
        np.ascontiguousarray(np.unique(np.asarray(hist_steps, dtype=np.int64))),
        int(bins),
        float(lo),
        float(hi),
    )


def orbit_histogram(a, seed, chains, steps, burn, bins, lo=-1.0, hi=1.0):
    if _backend.USE_NUMBA:
        return _orbit_hist_nb(float(a), np.uint64(seed), chains, steps, burn, bins, lo, hi)
    return _orbit_hist_np(float(a), seed, chains, steps, burn, bins, lo, hi)


def pullback(a, ys, n, codes, crit):
    """Seed-time preimages and log-derivatives of image points along ``codes``."""
    ys = np.ascontiguousarray(np.atleast_1d(ys), dtype=float)
    fn = _pullback_nb if _backend.USE_NUMBA else _pullback_np
    return fn(float(a), ys, int(n), np.ascontiguousarray(codes, dtype=np.int8), crit)
