import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles as O
from leakymap import kernels
from leakymap.intervals import OpenIntervalSet, QuadMap
from leakymap.simulate import (
    FamilyError,
    InitDensity,
    InsufficientMass,
    conditional_limit_test,
    escape_rate_fit,
    shrink_study,
    srb_closed_form,
    srb_reference,
    survival_mc,
    survival_scalar,
    validate_family,
)
from leakymap.transfer.ulam import UlamGrid

H028 = OpenIntervalSet.from_pairs([(0.28, 0.30)])


@given(st.integers(0, 1000), st.integers(1, 40))
def test_vector_kill_steps_match_scalar_reference(seed, n_max):
    q = QuadMap(2.0)
    x0 = -1 + 2 * kernels.uniforms(seed, 0, 50)
    deaths, _ = kernels.survival(2.0, H028.lefts, H028.rights, x0, n_max, [], 4)
    assert deaths.tolist() == [survival_scalar(q, H028, float(x), n_max) for x in x0]


def test_survival_matches_exact_oracle_for_hole_0_1(qmap):
    H = OpenIntervalSet.from_pairs([(0.0, 1.0)])
    s = survival_mc(qmap, H, n_max=6, samples=200_000, seed=1)
    for n in range(7):
        exact = float(O.lebesgue_survival_rate_exact_hole_0_1(n)) / 2
        sigma = math.sqrt(exact * (1 - exact) / s.samples)
        assert abs(s.p[n] - exact) <= 5 * sigma + 1e-12


def test_survival_is_deterministic_and_monotone(qmap):
    a = survival_mc(qmap, H028, n_max=50, samples=20_000, seed=3)
    b = survival_mc(qmap, H028, n_max=50, samples=20_000, seed=3, chunk=7777)
    assert np.array_equal(a.p, b.p)
    assert (np.diff(a.p) <= 0).all()


def test_survival_rejects_small_sample_counts(qmap):
    with pytest.raises(ValueError, match="samples"):
        survival_mc(qmap, H028, samples=0)


def test_escape_fit_recovers_a_geometric_rate():
    p = 0.9 ** np.arange(60)
    fit = escape_rate_fit(p, 10**9)
    assert fit.lam == pytest.approx(0.9, rel=1e-12)
    assert fit.r2 == pytest.approx(1.0)


def test_escape_fit_reports_short_windows():
    with pytest.raises(InsufficientMass, match="usable window"):
        escape_rate_fit(0.1 ** np.arange(10), 10**4)


@given(st.floats(0.1, 0.9), st.integers(4, 32))
def test_center_bump_is_a_probability_density(hw, steps):
    d = InitDensity.center_bump(hw, steps)
    x = d.sample(np.linspace(0, 1, 1001, endpoint=False))
    assert x.min() >= -hw and x.max() <= hw
    g = UlamGrid(256)
    assert np.sum(d.on_grid(g)) * g.width == pytest.approx(1.0)


def test_srb_closed_form_integrates_to_one():
    g = UlamGrid(512)
    assert np.sum(srb_closed_form(g)) * g.width == pytest.approx(1.0, abs=1e-14)


def test_srb_orbit_histogram_agrees_with_closed_form(qmap):
    g = UlamGrid(64)
    h = srb_reference(qmap, g, "orbit_histogram", steps=2_000_000, chains=64)
    mask = np.ones(64, bool)
    mask[[0, -1]] = False
    assert np.abs(h - srb_closed_form(g))[mask].sum() * g.width < 0.02


def test_conditional_limit_small_sample(qmap):
    cl = conditional_limit_test(qmap, H028, InitDensity.uniform(), InitDensity.center_bump(), 30,
                                samples=100_000, bins=32)
    assert cl.distance < 5 * cl.noise_scale


def test_family_validation_errors():
    big = OpenIntervalSet.from_pairs([(0.2, 0.3)])
    off = OpenIntervalSet.from_pairs([(0.35, 0.36)])
    with pytest.raises(FamilyError, match="not inside"):
        validate_family([big, off], 1e-3)
    with pytest.raises(FamilyError, match="exceeds"):
        validate_family([big], 1e-3, labels=[0.01])
    with pytest.raises(FamilyError, match="two components"):
        validate_family([big, OpenIntervalSet.from_pairs([(0.21, 0.22), (0.25, 0.26)])], 1e-3)
    with pytest.raises(FamilyError, match="condition \\(2\\)"):
        validate_family([OpenIntervalSet.from_pairs([(-0.1, 0.1)]), OpenIntervalSet.from_pairs([(0.0005, 0.001)])], 1e-3)


def test_shrink_study_small_grid(qmap):
    holes = [OpenIntervalSet.from_pairs([(0.29 - w, 0.29 + w)]) for w in (0.02, 0.01, 0.005)]
    res = shrink_study(qmap, holes, 1024)
    assert res.lam_increasing and res.l1_decreasing
    assert all(r.lam < 1 for r in res.records)
