import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from leakymap.admissibility import (
    GROWTH,
    a2_predicate,
    a3_bound,
    check_A1,
    check_A2,
    check_A4,
    check_class_M,
    covering_check,
    covering_times,
    derive_length_scales,
    derive_n0,
    eps_from_rule,
    eq1_bound,
    open_image,
)
from leakymap.intervals import OpenIntervalSet, QuadMap

SMALL = OpenIntervalSet.from_pairs([(0.3, 0.3001)])


def test_class_M_holds_at_a2(qmap):
    rep = check_class_M(qmap, 0.4, 1000)
    assert rep.passed, rep.failures
    assert rep.orbit_distance == 1.0
    assert rep.constants.lambda0 >= math.log(1.9)
    assert 0 < rep.constants.c0 <= rep.c0_upper


def test_class_M_rejects_bad_delta0(qmap):
    with pytest.raises(ValueError):
        check_class_M(qmap, 1.5)


def test_A1_radius_is_capped_by_delta0(qmap, ref_hole):
    res = check_A1(qmap, ref_hole, 0.4)
    assert res.passed and res.r == 0.4
    assert res.orbit_distance == pytest.approx(0.69)


def test_A1_fails_when_the_orbit_touches_the_hole(qmap):
    assert not check_A1(qmap, OpenIntervalSet.from_pairs([(0.99, 1.0)]), 0.4).passed


def test_A2_small_hole_value(qmap):
    res = check_A2(qmap, SMALL, 10)
    assert res.passed
    assert res.closest_pair == (1, 8)
    assert res.eps0_max == pytest.approx(0.019240251957080512, rel=1e-9)


def test_A2_fails_for_a_wider_hole(qmap):
    assert not check_A2(qmap, SMALL, 10, eps0_candidate=0.05).passed


@given(st.floats(-0.9, 0.85), st.floats(1e-5, 5e-2), st.integers(1, 8))
def test_A2_closed_form_agrees_with_direct_predicate(left, width, m0):
    q = QuadMap(2.0)
    H = OpenIntervalSet.from_pairs([(left, left + width)])
    eps = check_A2(q, H, m0).eps0_max
    assume(1e-9 < eps < 1.0)
    assert a2_predicate(q, H, m0, eps * (1 - 1e-6))
    assert not a2_predicate(q, H, m0, eps * (1 + 1e-6))


@given(st.floats(1e-3, 0.5))
def test_n0_bounds_random_covering_times(eps0):
    q = QuadMap(2.0)
    n0 = derive_n0(q, eps0)
    rng = np.random.default_rng(0)
    starts = rng.uniform(-1, 1 - eps0 / 2, 64)
    wins = np.stack([starts, starts + eps0 / 2], axis=1)
    assert covering_times(q, wins).max() <= n0


def test_A4_passes_for_the_small_hole(qmap):
    assert check_A4(qmap, SMALL, 10).passed


def test_A4_fails_around_the_fixed_point(qmap):
    res = check_A4(qmap, OpenIntervalSet.from_pairs([(0.45, 0.55)]), 5)
    assert not res.passed
    assert res.first_violation[0] == "b" and res.first_violation[1] == 1


@given(st.lists(st.tuples(st.floats(-1, 0.99), st.floats(1e-4, 0.05)), min_size=1, max_size=3))
def test_open_image_matches_pointwise_images(raw):
    q = QuadMap(2.0)
    parts = sorted((l, min(1.0, l + w)) for l, w in raw)
    H = OpenIntervalSet.from_pairs([(0.3, 0.31)])
    img = open_image(q, parts, H)
    for lo, hi in parts:
        xs = np.linspace(lo, hi, 201)
        xs = xs[~H.contains(xs)]
        for y in q(xs):
            assert any(a - 1e-12 <= y <= b + 1e-12 for a, b in img)
    for a, b in img:
        assert a <= b


def test_covering_property_for_admissible_hole(qmap):
    eps0 = check_A2(qmap, SMALL, 10).eps0_max
    res = covering_check(qmap, SMALL, eps0, derive_n0(qmap, eps0), trials=100)
    assert res.passed and res.worst_gap == 0.0


def test_covering_fails_when_intervals_can_vanish(qmap):
    H = OpenIntervalSet.from_pairs([(-0.5, 0.5)])
    res = covering_check(qmap, H, 0.1, 3, trials=50)
    assert res.failures > 0


def test_eps_rule_picks_the_binding_term():
    eps, name = eps_from_rule(0.045, 0.019, 634.0)
    assert name == "distortion"
    assert eps == pytest.approx(1 / (4 * 634.0) / GROWTH)


def test_a3_and_eq1_formulas():
    assert a3_bound(0.25, 1e-3, 2.0) == pytest.approx(0.5**3 / 3 * 1e-6 / 0.5)
    assert a3_bound(0.25, 1e-3, 0.0) == math.inf
    l0, m0 = math.log(1.9), 10
    expect = 0.5e-3 * (math.exp(l0 * m0 / 3) - 2) / math.exp(l0 * 9 / 3) * 3.0 * 0.01
    assert eq1_bound(1e-3, l0, m0, 3.0, 0.01) == pytest.approx(expect)


def test_length_scales_override_reports_guard(qmap, tables, ref_hole):
    v = derive_length_scales(qmap, ref_hole, tables, 0.02, C_tilde=634.0, theta=0.66, D=2.0,
                             c0_prime=3.26, eps=tables.eps_prime / GROWTH)
    assert v.scales.limiting == "override"
    assert not v.guard_ok
    assert not v.a3_pass
    rule = derive_length_scales(qmap, ref_hole, tables, 0.02, C_tilde=634.0, theta=0.66, D=2.0, c0_prime=3.26)
    assert rule.guard_ok and rule.scales.limiting == "distortion"
