"""The five subcommands.

Each ``cmd_*`` takes a validated :class:`RunConfig` and an :class:`Emitter`,
writes its tables and returns a :class:`CommandResult`.  Computation errors
propagate to the CLI, which maps them to exit code 2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .admissibility import (
    LAMBDA0_TARGET,
    check_A1,
    check_A2,
    check_A4,
    check_class_M,
    covering_check,
    derive_length_scales,
    derive_n0,
)
from .config import ConfigError, RunConfig
from .intervals import (
    NeighborhoodPartition,
    OpenIntervalSet,
    QuadMap,
    build_tables,
    p1_audit,
)
from .output import Emitter
from .simulate import (
    InitDensity,
    conditional_limit_test,
    escape_rate_fit,
    shrink_study,
    srb_reference,
    survival_mc,
)
from .tower.audits import (
    assemble_tower,
    distortion_audit,
    growth_lemma_check,
    hole_fall_stats,
    mass_account,
    markov_check,
    piece_count_audit,
    return_tail,
    stopping_tail,
)
from .tower.construction import TowerBuild, TowerConfig, grow_and_return
from .tower.cover import build_reference_cover, location_matched_seeds
from .transfer.decomposition import density_decomposition_check
from .transfer.tower_operator import (
    build_tower_kernel,
    check_H1_H2,
    eigenvalue_bound_check,
    project_density,
    tower_power_iterate,
)
from .transfer.ulam import (
    build_ulam,
    build_ulam_tent,
    l1_distance,
    power_iterate,
    tent_hole,
)

# CLI-facing tolerances for the conservation checks
ROW_SUM_TOL = 1e-12
CONSERVATION_TOL = 1e-9
# eps0 used when no hole bounds it (an empty hole leaves (A2) vacuous)
EPS0_CAP = 1.0


class ComputationError(RuntimeError):
    """A module could not produce its result for this configuration."""


@dataclass
class CommandResult:
    report: dict
    exit_code: int = 0
    constants: dict = field(default_factory=dict)
    defects: dict = field(default_factory=dict)


@dataclass
class _Setup:
    qmap: QuadMap
    hole: OpenIntervalSet
    part: NeighborhoodPartition


def _setup(cfg: RunConfig) -> _Setup:
    hole = OpenIntervalSet.from_pairs(cfg.hole) if cfg.hole else OpenIntervalSet.empty()
    return _Setup(QuadMap(cfg.a), hole, NeighborhoodPartition(cfg.k0, cfg.kmax))


def _tables(cfg: RunConfig, s: _Setup):
    a1 = check_A1(s.qmap, s.hole, cfg.check.delta0, cfg.horizon)
    if not a1.passed:
        raise ComputationError(f"(A1) fails: critical orbit meets the hole closure (r = {a1.r})")
    return build_tables(s.qmap, s.part, a1.r), a1


def _eps0(cfg: RunConfig, s: _Setup) -> float:
    if cfg.check.eps0 is not None:
        return cfg.check.eps0
    return min(check_A2(s.qmap, s.hole, cfg.check.m0).eps0_max, EPS0_CAP)


def _halved(hole: OpenIntervalSet) -> OpenIntervalSet:
    """Each component shrunk to half its width about its centre."""
    comps = []
    for l, r in hole:
        c, w = 0.5 * (l + r), 0.25 * (r - l)
        comps.append((c - w, c + w))
    return OpenIntervalSet.from_pairs(comps)


def _sampled_build(cfg: RunConfig, s: _Setup, tables, hole: OpenIntervalSet, n_seeds: int, **kw) -> TowerBuild:
    t = cfg.tower
    growth = kw.pop("growth", t.growth)
    eps = tables.eps_prime / growth
    cover = build_reference_cover(s.qmap, hole, eps, s.part.delta)
    lo, hi = s.qmap.invariant_range
    seeds = np.arange(len(cover)) if n_seeds == 0 else location_matched_seeds(cover, n_seeds, lo, hi)
    tcfg = TowerConfig(
        k0=cfg.k0,
        kmax=cfg.kmax,
        eps=eps,
        growth=growth,
        time_cap=kw.pop("time_cap", t.time_cap),
        derivative_stride=kw.pop("derivative_stride", t.derivative_stride),
        keep_cells=kw.pop("keep_cells", False),
    )
    return grow_and_return(s.qmap, hole, cover, tables, tcfg, seeds)


# ----------------------------------------------------------------------------
# check


def _admissibility(cfg: RunConfig, s: _Setup):
    """Every requested check as (name, passed, value) rows, plus report and constants."""
    c = cfg.check
    cm = check_class_M(s.qmap, c.delta0, cfg.horizon, excursion_horizon=cfg.excursion_horizon)
    a1 = check_A1(s.qmap, s.hole, c.delta0, cfg.horizon)
    a2 = check_A2(s.qmap, s.hole, c.m0, c.eps0)
    eps0 = _eps0(cfg, s)
    rows = [(f"class_M.{k}", ok, math.nan) for k, ok in cm.clauses.items()]
    rows += [("A1", a1.passed, a1.r), ("A2", a2.passed, a2.eps0_max)]
    if eps0 > 0:
        n0 = derive_n0(s.qmap, eps0)
        a4 = check_A4(s.qmap, s.hole, n0)
        cov = covering_check(s.qmap, s.hole, eps0, n0, trials=100, seed=cfg.seed)
        rows += [("A4", a4.passed, float(n0)), ("covering", cov.passed, float(cov.failures))]
        a4_rep, cov_rep = a4, {**vars(cov), "passed": cov.passed}
    else:  # without a positive eps0 there is no n0
        n0 = None
        rows += [("A4", False, math.nan), ("covering", False, math.nan)]
        a4_rep = cov_rep = "not evaluated: (A2) leaves no positive eps0"
    report: dict = {
        "class_M": {
            "passed": cm.passed,
            "clauses": cm.clauses,
            "clause_a_distance": cm.orbit_distance,
            "constants": cm.constants,
            "c0_upper": cm.c0_upper,
        },
        "A1": a1,
        "A2": a2,
        "eps0": eps0,
        "n0": n0,
        "A4": a4_rep,
        "covering": cov_rep,
    }
    constants = {
        "delta0": cm.constants.delta0,
        "lambda0": cm.constants.lambda0,
        "M0": cm.constants.M0,
        "c0": cm.constants.c0,
        "r": a1.r,
        "eps0": eps0,
        "n0": n0,
    }
    if c.pilot and a1.passed and eps0 > 0:
        tables = build_tables(s.qmap, s.part, a1.r)
        build = _sampled_build(cfg, s, tables, s.hole, c.pilot_seeds)
        R = return_tail(build)
        hf = hole_fall_stats(build)
        dist = distortion_audit(build, cfg.tower.distortion_samples, lambda0=LAMBDA0_TARGET)
        verdict = derive_length_scales(
            s.qmap, s.hole, tables, eps0,
            C_tilde=dist.C_tilde, theta=R.fit.theta, D=hf.D_hat, c0_prime=dist.c0_prime,
            lambda0=LAMBDA0_TARGET, m0=c.m0,
        )
        rows += [("A3", verdict.a3_pass, verdict.a3_rhs), ("eq1", verdict.eq1_pass, verdict.eq1_rhs)]
        report["hole_size"] = verdict
        report["pilot"] = {"seeds": len(build.seeds), "theta": R.fit.theta, "D": hf.D_hat,
                           "C_tilde": dist.C_tilde, "c0_prime": dist.c0_prime}
        constants.update(eps_prime=tables.eps_prime, eps=verdict.scales.eps, C_tilde=dist.C_tilde,
                         theta=R.fit.theta, D=hf.D_hat, c0_prime=dist.c0_prime, limiting=verdict.scales.limiting)
    report["hole_measure"] = s.hole.measure
    report["passed"] = all(bool(r[1]) for r in rows)
    report["failed"] = [r[0] for r in rows if not r[1]]
    return rows, report, constants


def cmd_check(cfg: RunConfig, em: Emitter) -> CommandResult:
    s = _setup(cfg)
    rows, report, constants = _admissibility(cfg, s)
    em.csv("checks.csv", "admissibility checks", [("check", "name"), ("passed", "0/1"), ("value", "see report")], rows)
    return CommandResult(report, 0 if report["passed"] else 3, constants)


# ----------------------------------------------------------------------------
# tower


def _operator_analysis(cfg: RunConfig, s: _Setup, tables, em: Emitter, ulam=None) -> dict:
    """Coarse full tower, its transfer operator, (H1)/(H2) and the eigenvalue bounds."""
    t = cfg.tower
    build = _sampled_build(cfg, s, tables, s.hole, 0, growth=t.operator_growth,
                           time_cap=t.operator_levels, keep_cells=True)
    kernel = build_tower_kernel(build, t.operator_bins)
    dist = distortion_audit(build, t.distortion_samples, lambda0=LAMBDA0_TARGET)
    hf = hole_fall_stats(build)
    D = hf.D_hat if s.hole else math.nan
    rep = check_H1_H2(kernel, dist.C_tilde, hole_measure=s.hole.measure, D=D)
    spectral = tower_power_iterate(kernel, cfg.accim.tol, cfg.accim.max_iter, xi=rep.params.xi)
    bounds = eigenvalue_bound_check(spectral.lam, rep, kernel, s.hole, D)
    out = {
        "growth": t.operator_growth,
        "levels": t.operator_levels,
        "bins": t.operator_bins,
        "tiles": kernel.n_tiles,
        "defect": kernel.defect,
        "C_tilde": dist.C_tilde,
        "H1_H2": rep,
        "h2_slack": rep.h2_slack,
        "lam": spectral.lam,
        "iterations": spectral.iterations,
        "converged": spectral.converged,
        "norms": spectral.norms,
        "in_XM": spectral.norms.in_XM(rep.params.M) if spectral.norms else None,
        "bounds": {**vars(bounds), "tower_ok": bounds.tower_ok, "hole_ok": bounds.hole_ok,
                   "sqrt_theta_ok": bounds.sqrt_theta_ok,
                   "vacuous": not (bounds.tower_bound > 0 and bounds.hole_bound > 0)},
    }
    lv = kernel.level_measure / kernel.base_measure
    em.csv("tower_operator_levels.csv", "coarse tower level measures",
           [("level", "iterations"), ("measure", "fraction of base"), ("hole", "fraction of base")],
           zip(range(kernel.levels), lv, kernel.hole_levels[: kernel.levels] / kernel.base_measure))
    if ulam is not None:
        grid, psi = ulam
        proj = project_density(kernel, build, spectral.phi, grid)
        out["projection_l1_to_ulam"] = l1_distance(proj.density, psi, grid.width)
        out["projection_subgrid_cells"] = proj.subgrid_cells
        em.dat("tower_projection.dat", "tower density pushed to the interval", grid.centers, proj.density,
               "x", "density")
    return out


def _row_sum_check(qmap: QuadMap, hole: OpenIntervalSet, n_cells: int) -> dict:
    """Row sums of the Ulam matrix with the hole (<= 1) and without it (= 1)."""
    open_rows = build_ulam(qmap, hole, n_cells).row_sums
    closed_rows = build_ulam(qmap, OpenIntervalSet.empty(), n_cells).row_sums
    dev = float(np.abs(closed_rows - 1.0).max())
    return {
        "open_max": float(open_rows.max()),
        "open_le_1": bool(open_rows.max() <= 1.0 + ROW_SUM_TOL),
        "closed_deviation": dev,
        "closed_eq_1": dev <= ROW_SUM_TOL,
    }


def cmd_tower(cfg: RunConfig, em: Emitter) -> CommandResult:
    s = _setup(cfg)
    t = cfg.tower
    tables, a1 = _tables(cfg, s)
    build = _sampled_build(cfg, s, tables, s.hole, t.seeds)
    S = stopping_tail(build)
    R = return_tail(build)
    acct = mass_account(build)
    hf = hole_fall_stats(build)
    model = assemble_tower(build)
    dist = distortion_audit(build, t.distortion_samples, lambda0=LAMBDA0_TARGET)
    pieces = piece_count_audit(build)
    ks = range(cfg.k0, cfg.k0 + 9)
    p1 = p1_audit(s.qmap, s.part, ks, tables=tables)
    growth = growth_lemma_check(s.qmap, s.hole, build.config.eps, t.growth, trials=t.growth_trials,
                                time_cap=t.time_cap, seed=cfg.seed)
    eps0 = _eps0(cfg, s)
    verdict = derive_length_scales(
        s.qmap, s.hole, tables, eps0, C_tilde=dist.C_tilde, theta=R.fit.theta, D=hf.D_hat,
        c0_prime=dist.c0_prime, lambda0=LAMBDA0_TARGET, m0=cfg.check.m0, eps=build.config.eps,
    )

    report: dict = {
        "seeds": len(build.seeds),
        "tiles": len(build.cover),
        "eps": build.config.eps,
        "growth": t.growth,
        "stopping_tail": {"fit": S.fit, "onset": S.onset, "post_onset": S.post_onset},
        "return_tail": {"fit": R.fit, "onset": R.onset, "post_onset": R.post_onset},
        "mass_account": {**vars(acct), "relative_defect": acct.relative_defect},
        "conservation_error": model.conservation_error,
        "conservation_ok": model.conservation_error <= CONSERVATION_TOL,
        "hole_fall": {"total": hf.total, "fit": hf.fit, "D_hat": hf.D_hat, "D_prime": hf.D_prime,
                      "hole_measure": hf.hole_measure},
        "distortion": {**vars(dist), "stable": dist.stable, "flagged": dist.flagged,
                       "return_expansion_ok": dist.min_return_expansion > 4.0 ** cfg.k0},
        "p1": {**vars(p1), "p": {k: tables.pk(k) for k in ks}, "q": {k: tables.qk(k) for k in ks}},
        "piece_counts": {"max_ratio": pieces.max_ratio, "ok": pieces.max_ratio <= 1.0},
        "growth_lemma": growth,
        "length_scales": verdict,
        "envelope": model.envelope,
        "A": model.A,
        "flags": dict(build.flags),
    }

    if t.halved_hole and s.hole:
        small = _halved(s.hole)
        hf2 = hole_fall_stats(_sampled_build(cfg, s, tables, small, t.seeds))
        ratio = hf2.total / hf.total if hf.total > 0 else math.nan
        report["halved_hole"] = {"hole": small.as_list(), "total": hf2.total, "ratio": ratio,
                                 "in_range": 0.3 <= ratio <= 0.7}
    if t.markov_seeds > 0:
        mb = _sampled_build(cfg, s, tables, s.hole, t.markov_seeds, keep_cells=True)
        mc = markov_check(mb, t.markov_points)
        report["markov"] = {**vars(mc), "ok": mc.ok}
    if t.operator:
        report["operator"] = _operator_analysis(cfg, s, tables, em)
    report["ulam_row_sums"] = _row_sum_check(s.qmap, s.hole, cfg.n_cells)

    em.csv("tails.csv", "stopping and return tails",
           [("n", "iterations"), ("S_tail", "fraction of seed mass"), ("R_tail", "fraction of seed mass")],
           zip(S.n, S.mass, R.mass))
    em.csv("hole_fall.csv", "mass falling into the hole per level",
           [("n", "iterations"), ("mass", "fraction of seed mass")], zip(hf.n, hf.mass))
    em.csv("tower_model.csv", "tower level accounting",
           [("level", "iterations"), ("level_mass", "fraction of base"), ("hole_mass", "fraction of base"),
            ("return_mass", "fraction of base")],
           zip(range(model.level_mass.size), model.level_mass / model.base_mass,
               model.hole_mass / model.base_mass, model.return_mass / model.base_mass))
    em.csv("piece_counts.csv", "coexisting pieces per level",
           [("n", "iterations"), ("max_count", "pieces"), ("bound", "pieces")],
           zip(pieces.n, pieces.max_count, pieces.bound))
    em.csv("bound_recovery.csv", "bound periods and recovery times",
           [("k", "cell index"), ("p", "iterations"), ("q", "iterations")],
           [(k, tables.pk(k), tables.qk(k)) for k in range(cfg.k0, cfg.kmax + 1)])
    pos = S.mass > 0
    em.dat("stopping_tail.dat", "log10 m{S>n}", S.n[pos], np.log10(S.mass[pos]), "n", "log10 mass")
    pos = R.mass > 0
    em.dat("return_tail.dat", "log10 m{R>n}", R.n[pos], np.log10(R.mass[pos]), "n", "log10 mass")

    constants = {
        "eps_prime": tables.eps_prime, "eps": build.config.eps, "r": a1.r, "theta_R": R.fit.theta,
        "theta_S": S.fit.theta, "D_hat": hf.D_hat, "C_tilde": dist.C_tilde, "c1": dist.c1, "c2": dist.c2,
        "d0": dist.d0, "c0_prime": dist.c0_prime, "A": model.A, "length_scales": verdict.scales,
    }
    defects = {"tower_relative_defect": acct.relative_defect, "residual_by_reason": acct.residual_by_reason,
               "conservation_error": model.conservation_error}
    return CommandResult(report, 0, constants, defects)


# ----------------------------------------------------------------------------
# accim


def cmd_accim(cfg: RunConfig, em: Emitter) -> CommandResult:
    s = _setup(cfg)
    a = cfg.accim
    op = build_ulam(s.qmap, s.hole, cfg.n_cells)
    res = power_iterate(op, a.tol, a.max_iter)
    grid = op.grid
    rows = op.row_sums
    report: dict = {
        "n_cells": cfg.n_cells,
        "lam": res.lam,
        "iterations": res.iterations,
        "residual": res.residual,
        "converged": res.converged,
        "total_escape": res.total_escape,
        "row_sum_max": float(rows.max()),
        "row_sums_le_1": bool(rows.max() <= 1.0 + ROW_SUM_TOL),
    }
    if not s.hole:
        dev = float(np.abs(rows - 1.0).max())
        report["row_sum_closed_deviation"] = dev
        report["row_sums_eq_1"] = dev <= ROW_SUM_TOL
    op2 = build_ulam(s.qmap, s.hole, 2 * cfg.n_cells)
    res2 = power_iterate(op2, a.tol, a.max_iter)
    report["lam_doubled"] = res2.lam
    report["lam_doubling_delta"] = abs(res2.lam - res.lam)

    columns = [("x", "cell centre"), ("psi", "density"), ("envelope", "density")]
    env = np.full(grid.n_cells, math.nan)
    if not res.total_escape:
        dec = density_decomposition_check(res.density, grid, s.qmap, s.hole, a.K)
        env = dec.envelope(grid)
        report["decomposition"] = {
            "c_flat": dec.c_flat, "c_spike": dec.c_spike, "K": dec.K, "violations": dec.violations,
            "excluded_cells": int(dec.excluded_cells.size), "positivity_min": dec.positivity_min,
            "mean_density": dec.mean_density, "positivity_ratio": dec.positivity_ratio,
            "positive": dec.positivity_ratio > 1e-4,
        }
    cols = [grid.centers, res.density, env]
    if not s.hole:
        mode = "closed_form_a2" if cfg.a == 2.0 else "orbit_histogram"
        srb = srb_reference(s.qmap, grid, mode, seed=cfg.seed)
        mask = np.ones(grid.n_cells, dtype=bool)
        mask[[0, -1]] = False
        report["srb_mode"] = mode
        report["l1_to_srb"] = l1_distance(res.density, srb, grid.width, mask)
        columns.append(("srb", "density"))
        cols.append(srb)
    if a.admissibility:
        _, adm, _ = _admissibility(cfg, s)
        report["admissibility"] = adm
    if a.tower_operator:
        tables, _ = _tables(cfg, s)
        report["tower_operator"] = _operator_analysis(cfg, s, tables, em, ulam=(grid, res.density))
        report["tower_operator"]["lam_delta_to_ulam"] = abs(report["tower_operator"]["lam"] - res.lam)
    em.csv("eigenvalue.csv", "Ulam eigenvalue",
           [("n_cells", "cells"), ("lam", "per iteration")], [(cfg.n_cells, res.lam), (2 * cfg.n_cells, res2.lam)])
    em.csv("density.csv", "conditionally invariant density on the grid", columns, zip(*cols))
    em.dat("density.dat", "psi", grid.centers, res.density, "x", "density")
    constants = {"lam": res.lam}
    return CommandResult(report, 0, constants, {"power_iteration_residual": res.residual})


# ----------------------------------------------------------------------------
# escape


def cmd_escape(cfg: RunConfig, em: Emitter) -> CommandResult:
    s = _setup(cfg)
    e = cfg.escape
    init = InitDensity.uniform() if e.init == "uniform" else InitDensity.center_bump()
    surv = survival_mc(s.qmap, s.hole, init, e.n_max, cfg.samples, cfg.seed,
                       hist_steps=e.hist_steps, bins=e.hist_bins)
    fit = escape_rate_fit(surv.p, cfg.samples, tuple(e.window) if e.window else None)
    ulam = power_iterate(build_ulam(s.qmap, s.hole, cfg.n_cells), cfg.accim.tol, cfg.accim.max_iter)
    report: dict = {
        "samples": cfg.samples,
        "generator": surv.generator,
        "truncated": surv.truncated,
        "lam_mc": fit.lam,
        "lam_mc_stderr": fit.stderr,
        "window": fit.window,
        "r2": fit.r2,
        "lam_ulam": ulam.lam,
        "delta_mc_ulam": abs(fit.lam - ulam.lam),
    }
    ulam2 = power_iterate(build_ulam(s.qmap, s.hole, 2 * cfg.n_cells), cfg.accim.tol, cfg.accim.max_iter)
    report["lam_ulam_doubled"] = ulam2.lam
    report["delta_doubling"] = abs(ulam2.lam - ulam.lam)
    if cfg.a == 2.0:
        tent = power_iterate(build_ulam_tent(tent_hole(s.hole), cfg.n_cells), cfg.accim.tol, cfg.accim.max_iter)
        report["lam_tent_coordinates"] = tent.lam
        report["delta_ulam_tent"] = abs(ulam.lam - tent.lam)
    if e.conditional_n is not None:
        cl = conditional_limit_test(s.qmap, s.hole, InitDensity.uniform(), InitDensity.center_bump(),
                                    e.conditional_n, cfg.samples, cfg.seed, bins=e.hist_bins)
        report["conditional_limit"] = cl
    n = np.arange(surv.p.size)
    em.csv("survival.csv", "surviving fraction",
           [("n", "iterations"), ("p", "fraction of samples")], zip(n, surv.p))
    pos = surv.p > 0
    em.dat("survival.dat", "log10 surviving fraction", n[pos], np.log10(surv.p[pos]), "n", "log10 fraction")
    centers = -1.0 + (np.arange(e.hist_bins) + 0.5) * (2.0 / e.hist_bins)
    for step, h in surv.histograms.items():
        em.dat(f"survivors_n{step}.dat", f"survivor density at n={step}", centers, h, "x", "density")
    return CommandResult(report, 0, {"lam_mc": fit.lam, "lam_ulam": ulam.lam})


# ----------------------------------------------------------------------------
# shrink


def cmd_shrink(cfg: RunConfig, em: Emitter) -> CommandResult:
    s = _setup(cfg)
    if len(cfg.shrink.holes) < 2:
        raise ConfigError("shrink.holes", "needs at least two nested holes")
    holes = [OpenIntervalSet.from_pairs(h) for h in cfg.shrink.holes]
    study = shrink_study(s.qmap, holes, cfg.n_cells, delta=s.part.delta, labels=cfg.shrink.labels)
    recs = study.records
    report = {
        "records": recs,
        "lam_increasing": study.lam_increasing,
        "lam_below_1": all(r.lam < 1.0 for r in recs),
        "l1_decreasing": study.l1_decreasing,
        "terminal_l1": recs[-1].l1_to_srb,
        "terminal_l1_ok": recs[-1].l1_to_srb <= 0.1,
    }
    em.csv("shrink.csv", "small-hole limit",
           [("measure", "Lebesgue"), ("lam", "per iteration"), ("l1_to_srb", "L1"), ("iterations", "count")],
           [(r.measure, r.lam, r.l1_to_srb, r.iterations) for r in recs])
    em.dat("shrink_lam.dat", "eigenvalue against hole measure", [r.measure for r in recs],
           [r.lam for r in recs], "m(H)", "lam")
    em.dat("shrink_l1.dat", "L1 to SRB against hole measure", [r.measure for r in recs],
           [r.l1_to_srb for r in recs], "m(H)", "L1")
    return CommandResult(report, 0, {"lam": [r.lam for r in recs]})


COMMANDS = {
    "check": cmd_check,
    "tower": cmd_tower,
    "accim": cmd_accim,
    "escape": cmd_escape,
    "shrink": cmd_shrink,
}
