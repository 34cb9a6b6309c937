import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles as O
from leakymap.intervals import (
    CapExceeded,
    CellIndexError,
    DomainError,
    NeighborhoodPartition,
    OpenIntervalSet,
    QuadMap,
    bound_period,
    build_tables,
    critical_orbit,
    critical_orbit_stats,
    deviations,
    evaluate,
    interval_image,
    orbit_deriv,
    p1_audit,
    ptilde,
    recovery_time,
)

# [DERIVED] tent-conjugacy oracle (60-digit mpmath), see oracles.py
EPS_PRIME_A2 = 0.045012727133488833
P_ORACLE = {6: 7, 7: 8, 8: 9, 9: 11, 10: 12, 11: 13, 12: 15, 13: 16, 14: 17}
Q_ORACLE = {6: 8, 7: 9, 8: 10, 9: 12, 10: 13, 11: 15, 12: 16, 13: 18, 14: 19}


def test_critical_orbit_a2_lands_on_fixed_point(qmap):
    c = critical_orbit(qmap, 6)
    assert c.tolist() == [0.0, 1.0, -1.0, -1.0, -1.0, -1.0, -1.0]


def test_critical_orbit_stats_distance_to_zero_is_one(qmap):
    assert critical_orbit_stats(qmap, 100).min_dist_zero == 1.0


def test_evaluate_rejects_points_outside_domain(qmap):
    with pytest.raises(DomainError):
        evaluate(qmap, 1.5)


def test_quadmap_rejects_bad_parameter():
    with pytest.raises(ValueError):
        QuadMap(2.5)


@given(st.floats(-1, 1), st.integers(1, 20))
def test_orbit_derivative_matches_chain_rule(x, n):
    q = QuadMap(2.0)
    orbit, d = orbit_deriv(q, x, n)
    expect = np.prod(-4.0 * orbit[:n])
    assert d == pytest.approx(expect, rel=1e-12, abs=1e-300)


@given(st.floats(-0.5, 0.5), st.integers(1, 12))
def test_deviation_table_matches_direct_iteration(x, n):
    q = QuadMap(2.0)
    dev = deviations(q, x, n)
    y, c = x, 0.0
    for j in range(n + 1):
        assert dev[j] == pytest.approx(y - c, abs=1e-9)
        y, c = 1 - 2 * y * y, 1 - 2 * c * c


@given(st.floats(-1, 1), st.floats(0, 1))
def test_interval_image_contains_sampled_images(lo, w):
    q = QuadMap(2.0)
    hi = min(1.0, lo + w)
    a, b = interval_image(q, lo, hi)
    xs = np.linspace(lo, hi, 101)
    ys = q(xs)
    assert ys.min() >= a - 1e-12 and ys.max() <= b + 1e-12
    # endpoints of the image are attained
    assert min(abs(ys - a).min(), abs(q(0.0) - a) if lo < 0 < hi else 1) < 1e-3 + 4 * (hi - lo) / 100


pairs = st.lists(st.tuples(st.floats(-1, 1), st.floats(1e-6, 0.2)), min_size=0, max_size=4)


def _disjoint(raw):
    comps, last = [], -math.inf
    for l, w in sorted(raw):
        if l > last and l + w <= 1:
            comps.append((l, l + w))
            last = l + w
    return OpenIntervalSet.from_pairs(comps)


@given(pairs)
def test_gaps_and_hole_partition_the_interval(raw):
    H = _disjoint(raw)
    gaps = H.gaps(-1.0, 1.0)
    total = sum(b - a for a, b in gaps) + H.measure
    assert total == pytest.approx(2.0, abs=1e-12)
    for a, b in gaps:
        assert not H.contains(np.array([0.5 * (a + b)])).any()


@given(pairs)
def test_reflection_is_an_involution(raw):
    H = _disjoint(raw)
    assert H.reflect().reflect() == H
    assert H.reflect().measure == pytest.approx(H.measure)


def test_open_interval_set_rejects_overlap():
    with pytest.raises(ValueError):
        OpenIntervalSet.from_pairs([(0.0, 0.2), (0.1, 0.3)])


def test_partition_cells_and_indices(partition):
    assert partition.delta == math.exp(-6)
    assert partition.cell(7) == (math.exp(-8), math.exp(-7))
    assert partition.cell(-7) == (-math.exp(-7), -math.exp(-8))
    assert partition.index_of(0.5 * (math.exp(-8) + math.exp(-7))) == 7
    assert partition.index_of(0.5) is None
    with pytest.raises(CellIndexError):
        partition.cell(3)


@pytest.mark.parametrize("k", range(6, 15))
def test_bound_period_matches_tent_oracle(qmap, partition, k):
    assert bound_period(qmap, partition, k) == P_ORACLE[k]
    lo, hi = mp.e ** (-(k + 1)), mp.e ** (-k)
    assert min(O.ptilde(lo + (hi - lo) * i / 32) for i in range(33)) == P_ORACLE[k]


@pytest.mark.parametrize("k", range(6, 15))
def test_recovery_time_matches_tent_oracle(qmap, partition, k):
    assert recovery_time(qmap, partition, k, 0.4) == Q_ORACLE[k] == O.recovery_time(k, 0.4)


def test_eps_prime_matches_tent_oracle(tables):
    oracle = min(O.growth_length(k, O.recovery_time(k, 0.4)) for k in range(6, 41))
    assert float(oracle) == pytest.approx(EPS_PRIME_A2, rel=1e-12)
    assert tables.eps_prime == pytest.approx(EPS_PRIME_A2, rel=1e-12)


def test_recovery_not_before_bound_period(tables):
    assert tables.violations() == []


def test_p1_bounds_hold_for_k0_to_k0_plus_8(qmap, partition, tables):
    audit = p1_audit(qmap, partition, range(6, 15), tables=tables)
    assert audit.p_bounds_ok
    assert all(0.5 * k <= tables.pk(k) <= 4 * k for k in range(6, 15))


def test_ptilde_cap_is_reported(qmap):
    with pytest.raises(CapExceeded):
        ptilde(qmap, 1e-300, cap=5)


def test_build_tables_rejects_nonpositive_r(qmap, partition):
    with pytest.raises(ValueError):
        build_tables(qmap, partition, 0.0)
