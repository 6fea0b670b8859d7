"""Config-driven experiment runner.

Commands: simulate, value, hjb-check, gamma, example-verify. Each reads a
TOML config, writes CSV results (plus PNG figures when enabled) into the
output directory, and exits 0 only if every enabled check passed. Exit codes:
0 ok, 1 check failure, 2 config error, 3 numerical blow-up.
"""
from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, ExperimentConfig, Setup, build_setup, load_config
from .dynamics import (
    IntegrationBlowUp,
    RelaxedControl,
    check_apriori_bounds,
    averaged_velocity,
    integrate,
)
from .hjb import MeasureFunctional, hamiltonian, subdifferential_test, superdifferential_test, default_directions
from .measures import L2Field, uniform_cloud
from .mean_drift import MeanDriftProblem, analytic_phi, shifted_analytic_value
from .target import hitting_time
from .value import SearchConfig, dpp_residual, epsilon_value, estimate_value, gamma_convergence_experiment
from . import reports

EPS_LIST = (0.05, 0.1, 0.2)
DPP_STEPS = (0.05, 0.1, 0.2)
AVG_VEL_H = (0.1, 0.05, 0.025, 0.0125)


def _say(quiet: bool, msg: str) -> None:
    if not quiet:
        print(msg)


def _outdir(cfg: ExperimentConfig, override) -> Path:
    out = Path(override) if override else Path(cfg.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _want_png(cfg: ExperimentConfig) -> bool:
    return "png" in cfg.output.formats


def _want_csv(cfg: ExperimentConfig) -> bool:
    return "csv" in cfg.output.formats


def cmd_simulate(cfg: ExperimentConfig, setup: Setup, out: Path, meta, quiet: bool) -> bool:
    n = cfg.numerics
    u0 = cfg.problem.simulate_control
    if u0 is None:
        u0 = n.control_lo
    dist = np.abs(setup.grid.points[:, 0] - u0) if setup.grid.points.shape[1] == 1 else \
        np.linalg.norm(setup.grid.points - u0, axis=1)
    idx = int(np.argmin(dist))
    steps = int(round(n.horizon / n.dt))
    control = RelaxedControl.constant(setup.grid, idx, steps, n.dt)
    traj = integrate(setup.mu, control, setup.field, n.horizon, n.dt)
    hit = hitting_time(traj, setup.target)

    if _want_csv(cfg):
        rows = []
        for k, t in enumerate(traj.times):
            for i in range(traj.n_particles):
                rows.append([float(t), i] + [float(c) for c in traj.paths[i, k]])
        reports.write_csv(out / "trajectory.csv",
                          ["t", "particle"] + [f"x{i+1}" for i in range(traj.dim)],
                          rows, meta)
        reports.write_csv(out / "hitting_report.csv",
                          ["status", "time", "bracket_lo", "bracket_hi", "control",
                           "target_kind", "distance_certified"],
                          [[hit.status, hit.time,
                            hit.bracket[0] if hit.bracket else "",
                            hit.bracket[1] if hit.bracket else "",
                            f"u={setup.grid.points[idx][0]:g}",
                            setup.target.kind, int(setup.target.certified)]], meta)
    if _want_png(cfg):
        means = traj.means()
        series = [(f"mean[{i}]", means[:, i]) for i in range(traj.dim)]
        series.append(("target distance", setup.target.distance_curve(traj)))
        reports.render_curves(out / "trajectory_mean.png", traj.times, series,
                              "t", "value", "simulated mean and target distance", hline=0.0, meta=meta)
    _say(quiet, f"simulate: {hit.status} at t={hit.time:.6g} (control u={setup.grid.points[idx][0]:g})")
    return True


def cmd_value(cfg: ExperimentConfig, setup: Setup, out: Path, meta, quiet: bool) -> bool:
    est = estimate_value(setup.mu, setup.field, setup.target, setup.search)
    if _want_csv(cfg):
        rows = [[est.manifest.strategy, r.label, r.summary, r.status, r.time]
                for r in est.records]
        reports.write_csv(out / "value_candidates.csv",
                          ["strategy", "candidate", "control", "status", "hit_time"],
                          rows, meta)
        best = est.records[0]
        for r in est.records:
            if r.time == est.upper_bound:
                best = r
                break
        reports.write_json(out / "value_summary.json", {
            "upper_bound": est.upper_bound,
            "censored": est.censored,
            "best_candidate": best.label,
            "best_control": best.summary,
            "manifest": {
                "strategy": est.manifest.strategy,
                "candidates": est.manifest.candidates,
                "horizon": est.manifest.horizon,
                "dt": est.manifest.dt,
                "grid_size": est.manifest.grid_size,
                "segments": est.manifest.segments,
                "samples": est.manifest.samples,
                "seed": est.manifest.seed,
            },
        }, meta)
    if _want_png(cfg):
        reports.render_candidate_times(out / "value_candidates.png",
                                       [r.label for r in est.records],
                                       [r.time for r in est.records],
                                       setup.search.horizon, "candidate hit times", meta=meta)
    shown = "censored (+inf)" if est.censored else f"{est.upper_bound:.6g}"
    _say(quiet, f"value: upper bound {shown} over {est.manifest.candidates} candidates")
    return True


def cmd_hjb_check(cfg: ExperimentConfig, setup: Setup, out: Path, meta, quiet: bool) -> bool:
    if setup.benchmark is None:
        raise ConfigError("hjb-check needs the mean_drift dynamics")
    bench: MeanDriftProblem = setup.benchmark
    hb = cfg.hjb
    rng = np.random.default_rng(hb.seed)
    f = setup.field
    fine_grid = bench.control_grid(hb.control_points)
    phi = MeasureFunctional(lambda m: analytic_phi(float(m.mean()[0])), name="phi_oracle")

    rows = []
    worst_analytic = 0.0
    worst_numeric = 0.0
    all_ok = True
    for _ in range(hb.num_measures):
        mean = hb.mean_lo + (hb.mean_hi - hb.mean_lo) * float(rng.uniform(0.02, 1.0))
        m = uniform_cloud([mean], 0.3, 24, rng)
        mbar = float(m.mean()[0])
        s = L2Field.constant(m, [1.0 / (1.0 + mbar) ** 2])
        h_num = hamiltonian(m, s, f, fine_grid).value
        h_ana = (-1.0 - mbar) / (1.0 + mbar) ** 2
        resid_num = h_num + 1.0 - analytic_phi(mbar)
        resid_ana = h_ana + 1.0 - analytic_phi(mbar)
        worst_analytic = max(worst_analytic, abs(resid_ana))
        worst_numeric = max(worst_numeric, abs(resid_num))
        sub = subdifferential_test(phi, m, s, default_directions(m, f, setup.grid))
        sup = superdifferential_test(phi, m, s, default_directions(m, f, setup.grid))
        ok = (abs(resid_ana) <= hb.analytic_tol and abs(resid_num) <= hb.numeric_tol
              and sub.passed and sup.passed)
        all_ok = all_ok and ok
        for chk in sub.checks:
            rows.append([mbar, chk.label, chk.lower, chk.upper, chk.inner,
                         resid_num, int(ok)])
    if _want_csv(cfg):
        reports.write_csv(out / "hjb_residuals.csv",
                          ["mean", "direction", "deriv_lower", "deriv_upper",
                           "inner_product", "residual", "pass"], rows, meta)
    if _want_png(cfg):
        means = sorted({r[0] for r in rows})
        resid_by_mean = {r[0]: r[5] for r in rows}
        reports.render_scatter(out / "hjb_residuals.png", means,
                               [resid_by_mean[m_] for m_ in means],
                               "mean of m", "H + 1 - phi",
                               "stationary residual on the oracle", hline=0.0, meta=meta)
    _say(quiet, f"hjb-check: max |residual| analytic {worst_analytic:.3g}, "
                f"numeric {worst_numeric:.3g} -> {'pass' if all_ok else 'FAIL'}")
    return all_ok


def cmd_gamma(cfg: ExperimentConfig, setup: Setup, out: Path, meta, quiet: bool) -> bool:
    if setup.benchmark is None:
        raise ConfigError("gamma needs the mean_drift dynamics")
    bench: MeanDriftProblem = setup.benchmark
    report = gamma_convergence_experiment(
        lambda k: bench.shifted_field(1.0 / k), setup.field, setup.mu, setup.target,
        list(cfg.gamma.n_list), setup.search, slack=cfg.gamma.slack)
    mbar = float(setup.mu.mean()[0])
    rows = []
    for r in report.rows:
        oracle = shifted_analytic_value(mbar, 1.0 / r.n)
        rows.append([r.n, r.value, oracle, abs(r.value - oracle), r.premise_deviation])
    if _want_csv(cfg):
        reports.write_csv(out / "gamma_values.csv",
                          ["n", "value", "oracle", "abs_error", "premise_deviation"],
                          rows, meta)
        reports.write_json(out / "gamma_summary.json", {
            "limit_value": report.limit_value,
            "liminf_pass": report.liminf_pass,
            "recovery_pass": report.recovery_pass,
            "premise_ok": report.premise_ok,
            "slack": report.slack,
            "warnings": report.warnings,
        }, meta)
    if _want_png(cfg):
        ns = [r.n for r in report.rows]
        reports.render_curves(out / "gamma_values.png", ns,
                              [("estimate", [r.value for r in report.rows]),
                               ("oracle", [row[2] for row in rows])],
                              "n", "perturbed value",
                              "perturbed values vs the unperturbed limit",
                              hline=report.limit_value if math.isfinite(report.limit_value) else None,
                              meta=meta)
    for w in report.warnings:
        _say(quiet, f"gamma: warning: {w}")
    _say(quiet, f"gamma: liminf {'pass' if report.liminf_pass else 'FAIL'}, "
                f"recovery {'pass' if report.recovery_pass else 'FAIL'}")
    return report.all_pass


class _Battery:
    def __init__(self, quiet: bool):
        self.rows = []
        self.quiet = quiet

    def add(self, name: str, numeric, expected, tol, ok: bool) -> None:
        self.rows.append([name, numeric, expected, tol, int(ok)])
        _say(self.quiet, f"  [{'PASS' if ok else 'FAIL'}] {name}: got {numeric}, want {expected} (tol {tol})")

    @property
    def all_pass(self) -> bool:
        return all(r[4] for r in self.rows)


def cmd_example_verify(cfg: ExperimentConfig, setup: Setup, out: Path, meta, quiet: bool) -> bool:
    if setup.benchmark is None:
        raise ConfigError("example-verify needs the mean_drift dynamics")
    bench: MeanDriftProblem = setup.benchmark
    n = cfg.numerics
    f, target, grid = setup.field, setup.target, setup.grid
    rng = np.random.default_rng(setup.seed)
    bat = _Battery(quiet)
    _say(quiet, "example-verify: oracle-vs-numerics battery")

    mu1 = uniform_cloud([1.0], cfg.problem.initial_spread, n.particles, rng)
    search = setup.search

    # 1. value recovery at mean 1 and the optimal constant control
    est1 = estimate_value(mu1, f, target, search)
    bat.add("value_mean1", est1.upper_bound, math.log(2.0), 2e-2,
            abs(est1.upper_bound - math.log(2.0)) <= 2e-2)
    best = min((r for r in est1.records if r.time == est1.upper_bound), key=lambda r: r.label)
    bat.add("value_mean1_control", best.summary, "constant u=-1", "exact",
            best.summary == "constant u=-1")

    # 2. infeasible side stays censored at every candidate
    mu_neg = uniform_cloud([-0.5], cfg.problem.initial_spread, n.particles, rng)
    est2 = estimate_value(mu_neg, f, target, search)
    bat.add("censored_mean_neg", "censored" if est2.censored else est2.upper_bound,
            "censored", "exact",
            est2.censored and all(r.status == "censored" for r in est2.records))

    # 3/4. stationary Dirichlet residuals on the oracle, analytic and gridded H
    fine = bench.control_grid(101)
    worst_ana = 0.0
    worst_num = 0.0
    for _ in range(50):
        mean = float(rng.uniform(0.02, 3.0))
        m = uniform_cloud([mean], 0.3, 24, rng)
        mbar = float(m.mean()[0])
        s = L2Field.constant(m, [1.0 / (1.0 + mbar) ** 2])
        phi_val = analytic_phi(mbar)
        worst_ana = max(worst_ana, abs((-1.0 - mbar) / (1.0 + mbar) ** 2 + 1.0 - phi_val))
        worst_num = max(worst_num, abs(hamiltonian(m, s, f, fine).value + 1.0 - phi_val))
    bat.add("dirichlet_analytic_max", worst_ana, 0.0, 1e-8, worst_ana <= 1e-8)
    bat.add("dirichlet_numeric_max", worst_num, 0.0, 1e-3, worst_num <= 1e-3)

    # 5. one-step dynamic programming residuals (shorter horizon, same physics)
    dpp_cfg = SearchConfig(grid=grid, horizon=1.5, dt=n.dt, strategy="constant")
    for h in DPP_STEPS:
        res = dpp_residual(mu1, h, f, target, dpp_cfg)
        bat.add(f"dpp_h{h:g}", res, 0.0, 5e-3, abs(res) <= 5e-3)

    # 6. relaxed targets: values match ln(2/(1+eps)) and shrink with eps
    eps_vals = []
    for eps in EPS_LIST:
        v = epsilon_value(mu1, eps, f, target, search).upper_bound
        eps_vals.append(v)
        want = math.log(2.0 / (1.0 + eps))
        bat.add(f"epsilon_{eps:g}", v, want, 2e-2, abs(v - want) <= 2e-2)
    mono = eps_vals[0] >= eps_vals[1] >= eps_vals[2]
    toward = eps_vals[0] <= est1.upper_bound + 1e-9
    bat.add("epsilon_monotone", [round(v, 6) for v in eps_vals], "nonincreasing in eps",
            "order", mono and toward)

    # 7. perturbed dynamics: value table and both convergence verdicts
    report = gamma_convergence_experiment(
        lambda k: bench.shifted_field(1.0 / k), f, mu1, target,
        list(cfg.gamma.n_list), search, slack=cfg.gamma.slack)
    for r in report.rows:
        want = shifted_analytic_value(1.0, 1.0 / r.n)
        bat.add(f"gamma_n{r.n}", r.value, want, 2e-2, abs(r.value - want) <= 2e-2)
    bat.add("gamma_liminf", report.liminf_pass, True, "verdict", report.liminf_pass)
    bat.add("gamma_recovery", report.recovery_pass, True, "verdict", report.recovery_pass)

    # 8. hitting time under the optimal control
    steps = int(round(n.horizon / n.dt))
    ctrl = RelaxedControl.constant(grid, 0, steps, n.dt)
    traj = integrate(mu1, ctrl, f, n.horizon, n.dt)
    tau = hitting_time(traj, target)
    bat.add("hitting_tau", tau.time, math.log(2.0), 2e-3,
            tau.hit and abs(tau.time - math.log(2.0)) <= 2e-3)

    # 9. growth bounds on random instances
    bounds_ok = True
    for _ in range(20):
        m0 = uniform_cloud([float(rng.uniform(-2.0, 2.0))], 0.5, 40, rng)
        seg = rng.integers(0, len(grid), size=4)
        steps2 = int(round(2.0 / 0.02))
        idx = np.repeat(seg, steps2 // 4)
        c = RelaxedControl.from_step_indices(grid, idx, 0.02)
        rep = check_apriori_bounds(integrate(m0, c, f, 2.0, 0.02), f, m0)
        bounds_ok = bounds_ok and rep.all_pass
    bat.add("apriori_bounds", bounds_ok, True, "all instances", bounds_ok)

    # 10. averaged velocity converges to the frozen-measure field
    mu_avg = uniform_cloud([0.1], 0.3, n.particles, rng)
    u0_idx = len(grid) - 1  # u = 0
    f_frozen = L2Field(mu_avg, f(mu_avg.points, mu_avg, grid.points[u0_idx]))
    gaps = []
    for h in AVG_VEL_H:
        xi = RelaxedControl.constant(grid, u0_idx, 1, h)
        fh = averaged_velocity(mu_avg, xi, f, h)
        diff = L2Field(mu_avg, fh.vectors - f_frozen.vectors)
        gaps.append(diff.norm())
    bat.add("avg_velocity", [round(g, 6) for g in gaps], "monotone, last < 1e-3", 1e-3,
            all(a > b for a, b in zip(gaps, gaps[1:])) and gaps[-1] < 1e-3)

    if _want_csv(cfg):
        reports.write_csv(out / "example_verify.csv",
                          ["check", "numeric", "expected", "tolerance", "pass"],
                          bat.rows, meta)
    if _want_png(cfg):
        means = traj.means()[:, 0]
        oracle = 2.0 * np.exp(-traj.times) - 1.0
        reports.render_curves(out / "verify_mean_curve.png", traj.times,
                              [("simulated mean", means), ("oracle mean", oracle)],
                              "t", "mean", "optimal-control mean vs closed form", hline=0.0, meta=meta)
        reports.render_curves(out / "verify_epsilon.png", list(EPS_LIST),
                              [("estimate", eps_vals),
                               ("oracle", [math.log(2.0 / (1.0 + e)) for e in EPS_LIST])],
                              "eps", "relaxed value", "relaxed-target values", meta=meta)
        reports.render_curves(out / "verify_gamma.png", [r.n for r in report.rows],
                              [("estimate", [r.value for r in report.rows]),
                               ("oracle", [shifted_analytic_value(1.0, 1.0 / r.n)
                                           for r in report.rows])],
                              "n", "value", "perturbed values", hline=math.log(2.0), meta=meta)
    _say(quiet, f"example-verify: {'all checks pass' if bat.all_pass else 'CHECK FAILURES'}")
    return bat.all_pass


COMMANDS = {
    "simulate": cmd_simulate,
    "value": cmd_value,
    "hjb-check": cmd_hjb_check,
    "gamma": cmd_gamma,
    "example-verify": cmd_example_verify,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="timeopt",
                                     description="time-optimal control experiments on particle measures")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="TOML experiment config")
    parser.add_argument("--out", default=None, help="output directory (overrides config)")
    parser.add_argument("--seed", type=int, default=None, help="seed override")
    parser.add_argument("--quiet", action="store_true")
    args = parser.parse_args(argv)

    try:
        cfg = load_config(args.config)
        setup = build_setup(cfg, args.seed)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2

    out = _outdir(cfg, args.out)
    meta = reports.meta_lines(cfg.sha256, __version__, args.command, setup.seed)
    try:
        ok = COMMANDS[args.command](cfg, setup, out, meta, args.quiet)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except IntegrationBlowUp as err:
        print(f"numerical blow-up: {err}", file=sys.stderr)
        return 3
    return 0 if ok else 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
