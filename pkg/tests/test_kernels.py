"""The numba and numpy flavours of every hot loop agree."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from leakymap import _backend, kernels
from leakymap.intervals import OpenIntervalSet
from leakymap.transfer import ulam
from leakymap.transfer.ulam import UlamGrid


@given(st.integers(0, 2**63), st.integers(0, 10**6), st.integers(1, 300), st.integers(0, 3))
def test_uniform_streams_identical(seed, start, count, draw):
    a = kernels._uniforms_nb(np.uint64(seed), start, count, draw)
    b = kernels._uniforms_np(seed, start, count, draw)
    assert np.array_equal(a, b)
    assert a.min() >= 0.0 and a.max() < 1.0


def test_uniform_stream_is_chunk_independent():
    whole = kernels.uniforms(7, 0, 1000)
    parts = np.concatenate([kernels.uniforms(7, 0, 400), kernels.uniforms(7, 400, 600)])
    assert np.array_equal(whole, parts)


@given(st.floats(-0.9, 0.8), st.floats(1e-3, 0.1), st.integers(1, 60))
def test_survival_flavours_identical(left, width, n_max):
    x0 = -1 + 2 * kernels._uniforms_np(3, 0, 2000, 0)
    hl, hr = np.array([left]), np.array([left + width])
    steps = np.unique(np.array([0, n_max // 2], dtype=np.int64))
    d1, h1 = kernels._survival_nb(2.0, hl, hr, x0, n_max, steps, 32, -1.0, 1.0)
    d2, h2 = kernels._survival_np(2.0, hl, hr, x0, n_max, steps, 32, -1.0, 1.0)
    assert np.array_equal(d1, d2)
    assert np.array_equal(h1, h2)


@pytest.mark.parametrize("hole", [[], [(0.28, 0.30)], [(-0.7, -0.6), (0.1, 0.2)]])
def test_ulam_flavours_agree(hole):
    H = OpenIntervalSet.from_pairs(hole) if hole else OpenIntervalSet.empty()
    grid = UlamGrid(256)
    s = ulam._alive_pieces(grid.edges, H, 0.0)
    t = ulam._alive_pieces(grid.edges, H, None)
    w = np.full(256, grid.width)
    r1, c1, v1 = kernels._ulam_nb(kernels.QUADRATIC, 2.0, *s, *t, w)
    r2, c2, v2 = kernels._ulam_np(kernels.QUADRATIC, 2.0, *s, *t, w)
    o1, o2 = np.lexsort((c1, r1)), np.lexsort((c2, r2))
    assert np.array_equal(r1[o1], r2[o2]) and np.array_equal(c1[o1], c2[o2])
    assert np.allclose(v1[o1], v2[o2], rtol=0, atol=1e-13)


def test_survival_dispatch_deduplicates_steps():
    x0 = -1 + 2 * kernels.uniforms(1, 0, 500)
    d, h = kernels.survival(2.0, [0.28], [0.30], x0, 10, [5, 0, 5], 16)
    assert h.shape == (2, 16)
    assert h[0].sum() == np.count_nonzero(~((x0 > 0.28) & (x0 < 0.30)))


def test_orbit_histogram_flavours_identical():
    h1, n1 = kernels._orbit_hist_nb(2.0, np.uint64(5), 8, 2000, 50, 64, -1.0, 1.0)
    h2, n2 = kernels._orbit_hist_np(2.0, 5, 8, 2000, 50, 64, -1.0, 1.0)
    assert np.array_equal(h1, h2) and n1 == n2


@given(st.lists(st.sampled_from([1, -1]), min_size=1, max_size=10))
def test_pullback_flavours_agree_and_invert_the_map(codes):
    c = np.array(codes, dtype=np.int8)
    ys = np.linspace(-0.95, 0.95, 17)
    crit = np.zeros(c.size + 2)
    x1, l1 = kernels._pullback_nb(2.0, ys, c.size, c, crit)
    x2, l2 = kernels._pullback_np(2.0, ys, c.size, c, crit)
    assert np.allclose(x1, x2, atol=1e-14) and np.allclose(l1, l2, atol=1e-10)
    y = x1.copy()
    for _ in range(c.size):
        y = 1 - 2 * y * y
    assert np.allclose(y, ys, atol=1e-6)


def test_backend_flag_is_reported():
    assert _backend.backend_name() in ("numba", "numpy")
