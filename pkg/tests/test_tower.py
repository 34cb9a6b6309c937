import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from leakymap.intervals import OpenIntervalSet, QuadMap
from leakymap.tower.audits import (
    assemble_tower,
    distortion_audit,
    fit_log_linear,
    growth_lemma_check,
    hole_fall_stats,
    markov_check,
    mass_account,
    piece_count_audit,
    return_tail,
    stopping_tail,
)
from leakymap.tower.construction import TowerConfig, grow_and_return
from leakymap.tower.cover import CoverError, build_reference_cover, location_matched_seeds
from leakymap.transfer.tower_operator import build_tower_kernel, tower_power_iterate
from leakymap.transfer.ulam import build_ulam, power_iterate


# eps must fit inside the (0, delta) segments, delta = e^-6 ~ 2.5e-3
@given(st.floats(1e-4, 2e-3), st.floats(0.05, 0.8), st.floats(1e-3, 0.05))
def test_cover_tiles_fill_the_survivor_set(eps, left, width):
    q = QuadMap(2.0)
    H = OpenIntervalSet.from_pairs([(left, left + width)])
    cov = build_reference_cover(q, H, eps, math.exp(-6))
    w = cov.widths
    assert (w >= eps * (1 - 1e-9)).all() and (w < 2 * eps).all()
    assert w.sum() == pytest.approx(2.0 - H.measure, abs=1e-12)
    mids = 0.5 * (cov.lo + cov.hi)
    assert not H.contains(mids).any()


def test_cover_rejects_oversized_tiles(qmap):
    with pytest.raises(CoverError):
        build_reference_cover(qmap, OpenIntervalSet.empty(), 0.5, math.exp(-6))


def test_location_matched_seeds_are_paired(qmap, ref_hole):
    a = build_reference_cover(qmap, ref_hole, 1e-4, math.exp(-6))
    b = build_reference_cover(qmap, OpenIntervalSet.from_pairs([(0.3025, 0.3075)]), 1e-4, math.exp(-6))
    sa, sb = location_matched_seeds(a, 200), location_matched_seeds(b, 200)
    away = (a.hi[sa] < 0.29) | (a.lo[sa] > 0.32)
    assert np.allclose(a.lo[sa][away][:50], b.lo[sb][: 50], atol=2e-4)


def test_log_linear_fit_exact_geometric():
    n = np.arange(30)
    fit = fit_log_linear(n, 3.0 * 0.7**n)
    assert fit.theta == pytest.approx(0.7) and fit.C == pytest.approx(3.0) and fit.r2 == pytest.approx(1.0)
    assert math.isnan(fit_log_linear(n[:2], np.ones(2)).theta)


@pytest.fixture(scope="module")
def small_build(qmap, ref_hole, tables):
    G = 256
    eps = tables.eps_prime / G
    cov = build_reference_cover(qmap, ref_hole, eps, tables.partition.delta)
    cfg = TowerConfig(eps=eps, growth=G, keep_cells=True, time_cap=200)
    return grow_and_return(qmap, ref_hole, cov, tables, cfg, location_matched_seeds(cov, 60))


def test_mass_is_conserved(small_build):
    acct = mass_account(small_build)
    assert acct.relative_defect <= 1e-9
    model = assemble_tower(small_build)
    assert model.conservation_error <= 1e-9


def test_tails_are_monotone_and_decay(small_build):
    for tail in (stopping_tail(small_build), return_tail(small_build)):
        assert (np.diff(tail.mass) <= 1e-15).all()
        assert tail.fit.decays
    # every return happens no earlier than the stop of the same run
    assert (stopping_tail(small_build).mass <= return_tail(small_build).mass + 1e-12).all()


def test_hole_fall_accounts_for_hole_cells(small_build):
    hf = hole_fall_stats(small_build)
    direct = sum(h.mass for h in small_build.hole_cells()) / small_build.seed_mass
    assert hf.total == pytest.approx(direct, rel=1e-12)
    assert hf.hole_measure == pytest.approx(0.01)


def test_returned_cells_map_onto_tiles(small_build):
    mc = markov_check(small_build, 100)
    assert mc.ok and mc.max_error < 1e-8


def test_piece_counts_within_bound(small_build):
    assert piece_count_audit(small_build).max_ratio <= 1.0


def test_distortion_constants_are_finite(small_build):
    d = distortion_audit(small_build, 16, cell_limit=200)
    assert math.isfinite(d.C_tilde) and d.C_tilde > 0 and not d.flagged
    assert d.min_return_expansion > 1.0


def test_growth_lemma_resolves_every_trial(qmap, ref_hole, tables):
    g = growth_lemma_check(qmap, ref_hole, tables.eps_prime / 256, 256, trials=50)
    assert g.failures == 0 and g.grown + g.swallowed == 50


def test_config_rejects_small_growth():
    with pytest.raises(ValueError):
        TowerConfig(growth=8)


@pytest.mark.slow
def test_coarse_tower_operator_matches_ulam(qmap, ref_hole, tables):
    G = 64
    eps = tables.eps_prime / G
    cov = build_reference_cover(qmap, ref_hole, eps, tables.partition.delta)
    build = grow_and_return(qmap, ref_hole, cov, tables, TowerConfig(eps=eps, growth=G, keep_cells=True, time_cap=24))
    kernel = build_tower_kernel(build, 3)
    assert kernel.defect < 1e-3
    spectral = tower_power_iterate(kernel)
    ulam = power_iterate(build_ulam(qmap, ref_hole, 8192))
    assert spectral.converged
    assert spectral.lam == pytest.approx(ulam.lam, abs=2e-4)
