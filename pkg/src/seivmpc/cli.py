"""Command-line front end: scenario configs, experiments, verification.

Subcommands: ``simulate`` (uncontrolled sample paths), ``bounds`` (crude vs
refined bound traces), ``control`` (closed-loop ensembles with statistics),
``verify`` (oracle checks on randomized small instances).  Configs are TOML
or JSON, auto-detected by extension.  All randomness flows from a single
root seed through named substreams, so outputs are byte-identical across
re-runs; wall-clock timestamps only ever appear in ``metadata.json``.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from dataclasses import dataclass, field

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib
from pathlib import Path

import numpy as np

from seivmpc import analysis, closure, core, empc, stochastic
from seivmpc.closure import ClosureKind
from seivmpc.core import SpreadingGraph, SpreadingParams, SystemState
from seivmpc.empc import Action, ControllerConfig, QuarantineMap

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2


class ConfigError(ValueError):
    pass


@dataclass
class ScenarioConfig:
    """Parsed experiment scenario."""

    graph: SpreadingGraph
    params: SpreadingParams
    controller: ControllerConfig
    trials: int
    seed: int
    init_mode: str                # "labels" | "random"
    init_labels: str | None
    init_exposed: int
    init_infected: int
    init_seed: int | None
    bootstrap_resamples: int = 1000
    ci_level: float = 0.98
    verify_seeds: int = 20
    verify_max_nodes: int = 5
    corrupt_rhs: float = 0.0

    def initial_state(self) -> SystemState:
        if self.init_mode == "labels":
            if self.init_labels is None or len(self.init_labels) != self.graph.n:
                raise ConfigError("init labels must cover every node")
            return SystemState.from_labels(self.init_labels)
        n = self.graph.n
        if self.init_exposed + self.init_infected > n:
            raise ConfigError("more initial E/I nodes than nodes in the graph")
        seed = self.init_seed if self.init_seed is not None else self.seed
        rng = np.random.default_rng(np.random.SeedSequence((seed, 0xD15EA5E)))
        picks = rng.choice(n, size=self.init_exposed + self.init_infected,
                           replace=False)
        codes = np.zeros(n, dtype=np.int8)
        codes[picks[:self.init_exposed]] = core.E
        codes[picks[self.init_exposed:]] = core.I
        return SystemState(codes)


def load_config(path: Path, seed_override: int | None = None) -> ScenarioConfig:
    try:
        if path.suffix == ".toml":
            with open(path, "rb") as fh:
                doc = tomllib.load(fh)
        elif path.suffix == ".json":
            with open(path) as fh:
                doc = json.load(fh)
        else:
            raise ConfigError(f"config must be .toml or .json, got {path.name}")
    except (OSError, tomllib.TOMLDecodeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc

    run = doc.get("run", {})
    seed = int(seed_override if seed_override is not None
               else run.get("seed", 0))

    gdoc = doc.get("graph", {})
    source = gdoc.get("source", "erdos_renyi")
    if source == "file":
        gpath = Path(gdoc["path"])
        if not gpath.is_absolute():
            gpath = path.parent / gpath
        if not gpath.exists():
            raise ConfigError(f"graph file not found: {gpath}")
        graph, params = core.load_network(gpath)
    elif source == "erdos_renyi":
        graph = core.erdos_renyi(int(gdoc.get("n", 50)),
                                 float(gdoc.get("p", 0.6)),
                                 int(gdoc.get("seed", 1)))
        pdoc = doc.get("params", {})
        try:
            params = SpreadingParams.uniform(
                graph,
                alpha=float(pdoc.get("alpha", 0.1)),
                xi=float(pdoc.get("xi", 2.0)),
                delta=float(pdoc.get("delta", 1.25)),
                eta=float(pdoc.get("eta", 3.5)),
                beta=float(pdoc.get("beta", 0.1)),
                gamma=float(pdoc.get("gamma", 0.1)),
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    else:
        raise ConfigError(f"unknown graph source {source!r}")

    cdoc = doc.get("controller", {})
    try:
        controller = ControllerConfig(
            r=float(cdoc.get("r", 0.07)),
            dt=float(cdoc.get("dt", 0.375)),
            horizon=float(cdoc.get("horizon", 60.0)),
            k_max=int(cdoc.get("k_max", 3)),
            step_divisor=int(cdoc.get("step_divisor", 64)),
            seed=seed,
            stop_when_clear=bool(cdoc.get("stop_when_clear", True)),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    idoc = doc.get("init", {})
    n = graph.n
    vdoc = doc.get("verify", {})
    cfg = ScenarioConfig(
        graph=graph,
        params=params,
        controller=controller,
        trials=int(run.get("trials", 1)),
        seed=seed,
        init_mode=idoc.get("mode", "random"),
        init_labels=idoc.get("labels"),
        init_exposed=int(idoc.get("exposed", n // 4)),
        init_infected=int(idoc.get("infected", n // 4)),
        init_seed=idoc.get("seed"),
        bootstrap_resamples=int(run.get("bootstrap_resamples", 1000)),
        ci_level=float(run.get("ci_level", 0.98)),
        verify_seeds=int(vdoc.get("seeds", 20)),
        verify_max_nodes=int(vdoc.get("max_nodes", 5)),
        corrupt_rhs=float(vdoc.get("corrupt_rhs", 0.0)),
    )
    if cfg.trials < 1:
        raise ConfigError("run.trials must be >= 1")
    if cfg.init_mode not in ("labels", "random"):
        raise ConfigError("init.mode must be 'labels' or 'random'")
    if cfg.verify_max_nodes > stochastic.MAX_ORACLE_NODES:
        raise ConfigError(
            f"verify.max_nodes exceeds oracle capacity "
            f"({stochastic.MAX_ORACLE_NODES})")
    return cfg


def _streams(seed: int, trials: int):
    """Root-seeded substreams: one per replication plus a bootstrap stream."""
    root = np.random.SeedSequence(seed)
    boot_ss, run_ss = root.spawn(2)
    rep_seeds = run_ss.spawn(trials)
    return np.random.default_rng(boot_ss), [np.random.default_rng(s)
                                            for s in rep_seeds]


def _write_metadata(out: Path, command: str, cfg: ScenarioConfig) -> None:
    meta = {
        "command": command,
        "seed": cfg.seed,
        "trials": cfg.trials,
        "n": cfg.graph.n,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    with open(out / "metadata.json", "w") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)
        fh.write("\n")


# --- simulate ---------------------------------------------------------------

def cmd_simulate(cfg: ScenarioConfig, out: Path) -> int:
    out.mkdir(parents=True, exist_ok=True)
    x0 = cfg.initial_state()
    _, reps = _streams(cfg.seed, cfg.trials)
    horizon = cfg.controller.horizon
    for k, rng in enumerate(reps):
        traj = stochastic.simulate_path(cfg.graph, cfg.params, x0, horizon, rng)
        stochastic.trajectory_to_csv(traj, out / f"trajectory_{k:04d}.csv")
    _write_metadata(out, "simulate", cfg)
    return EXIT_OK


# --- bounds -----------------------------------------------------------------

def cmd_bounds(cfg: ScenarioConfig, out: Path) -> int:
    out.mkdir(parents=True, exist_ok=True)
    x0 = cfg.initial_state()
    step = cfg.controller.dt / cfg.controller.step_divisor
    duration = round(cfg.controller.horizon / step) * step
    crude = closure.integrate_bounds(ClosureKind.CRUDE, cfg.graph, cfg.params,
                                     x0, duration, step)
    refined = closure.integrate_bounds(ClosureKind.REFINED, cfg.graph,
                                       cfg.params, x0, duration, step)
    closure.bounds_to_csv(crude, out / "bounds_crude.csv")
    closure.bounds_to_csv(refined, out / "bounds_refined.csv")

    slack = closure.DEFAULT_ORDER_SLACK
    with open(out / "bounds_check.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time", "nested", "refined_in_unit", "crude_max_upper"])
        for k in range(len(crude.times)):
            nested = bool(
                np.all(refined.lower[k] >= crude.lower[k] - slack)
                and np.all(refined.upper[k] <= crude.upper[k] + slack))
            in_unit = bool(np.all(refined.lower[k] >= -slack)
                           and np.all(refined.upper[k] <= 1 + slack))
            writer.writerow([f"{crude.times[k]:.12g}", int(nested), int(in_unit),
                             f"{crude.upper[k].max():.12g}"])
    _write_metadata(out, "bounds", cfg)
    return EXIT_OK


# --- control ----------------------------------------------------------------

def _pad_series(record: empc.ClosedLoopRecord, times: np.ndarray,
                n: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-sampling-time exposed+infected count and quarantine fraction,
    padded with zeros after early termination."""
    ell = np.zeros(times.size)
    frac = np.zeros(times.size)
    logged = {round(t / times[1]) if times.size > 1 else 0: v
              for t, v in record.ell} if times.size > 1 else {0: record.ell[0][1]}
    for k in range(times.size):
        ell[k] = logged.get(k, 0.0)
    for t, action in record.actions:
        k = int(round(t / times[1])) if times.size > 1 else 0
        if k < times.size:
            frac[k] = action.quarantined.sum() / n
    return ell, frac


def cmd_control(cfg: ScenarioConfig, out: Path) -> int:
    out.mkdir(parents=True, exist_ok=True)
    x0 = cfg.initial_state()
    qmap = QuarantineMap(cfg.graph, cfg.params)
    ctl = cfg.controller
    times = ctl.sampling_times()
    ell0 = core.exposed_infected_count(x0)
    boot_rng, reps = _streams(cfg.seed, cfg.trials)
    _, base_reps = _streams(cfg.seed + 1, cfg.trials)

    ell_mat = np.zeros((cfg.trials, times.size))
    frac_mat = np.zeros((cfg.trials, times.size))
    base_frac_mat = np.zeros((cfg.trials, times.size))
    elim_times: list[float] = []
    censored = 0
    bound_trace: list[tuple[float, float]] = []
    cost_dominated = True
    max_descent_evals = 0

    for k, rng in enumerate(reps):
        rec = empc.run_closed_loop(cfg.graph, qmap, x0, ctl, rng,
                                   policy="empc",
                                   record_bound_upper=(k == 0))
        ell_mat[k], frac_mat[k] = _pad_series(rec, times, cfg.graph.n)
        if rec.elimination_time is not None:
            elim_times.append(rec.elimination_time)
        else:
            elim_times.append(ctl.horizon)
            censored += 1
        if k == 0:
            bound_trace = rec.bound_upper
        for (t, cost), (_, ell) in zip(rec.costs, rec.ell):
            if cost > ell:
                cost_dominated = False
        for tele in rec.telemetry:
            if tele.descent_evals:
                max_descent_evals = max(max_descent_evals,
                                        max(tele.descent_evals))

    for k, rng in enumerate(base_reps):
        rec = empc.run_closed_loop(cfg.graph, qmap, x0, ctl, rng,
                                   policy="total", record_bound_upper=False)
        _, base_frac_mat[k] = _pad_series(rec, times, cfg.graph.n)

    with open(out / "ell_stats.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time", "mean_ell", "ci_lo", "ci_hi", "envelope",
                         "survival_freq", "survival_bound"])
        for j, t in enumerate(times):
            lo, hi = analysis.bootstrap_mean_ci(
                ell_mat[:, j], cfg.ci_level, cfg.bootstrap_resamples, boot_rng)
            writer.writerow([
                f"{t:.12g}", f"{ell_mat[:, j].mean():.12g}", f"{lo:.12g}",
                f"{hi:.12g}", f"{analysis.decay_envelope(ell0, ctl.r, t):.12g}",
                f"{(ell_mat[:, j] > 0).mean():.12g}",
                f"{analysis.survival_bound(ell0, ctl.r, ctl.dt, t):.12g}",
            ])

    with open(out / "quarantine.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time", "empc_mean_fraction", "total_mean_fraction"])
        for j, t in enumerate(times):
            writer.writerow([f"{t:.12g}", f"{frac_mat[:, j].mean():.12g}",
                             f"{base_frac_mat[:, j].mean():.12g}"])

    with open(out / "bound_trace.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time", "optimal_upper"])
        for t, ub in bound_trace:
            writer.writerow([f"{t:.12g}", f"{ub:.12g}"])

    stats = analysis.EliminationStats(
        elimination_times=elim_times,
        bound=analysis.elimination_time_bound(ell0, ctl.r, ctl.dt))
    report = stats.report(level=cfg.ci_level,
                          resamples=cfg.bootstrap_resamples, rng=boot_rng)
    report["tau_one"] = analysis.tau_one(ell0, ctl.r, ctl.dt)
    report["censored_runs"] = censored
    report["cost_dominated"] = cost_dominated
    report["max_descent_evals"] = max_descent_evals
    with open(out / "report.json", "w") as fh:
        json.dump(report, fh, indent=1, sort_keys=True)
        fh.write("\n")
    _write_metadata(out, "control", cfg)
    return EXIT_OK


# --- verify -----------------------------------------------------------------

def _random_instance(rng: np.random.Generator, max_nodes: int):
    n = int(rng.integers(2, max_nodes + 1))
    graph = core.erdos_renyi(n, 0.6, int(rng.integers(0, 2 ** 31)))
    m = graph.n_edges

    def rates(size):
        return rng.uniform(0.05, 3.5, size)

    params = SpreadingParams(alpha=rates(n), xi=rates(n), delta=rates(n),
                             eta=rates(n), beta=rates(m), gamma=rates(m))
    x0 = SystemState(rng.integers(0, 4, n).astype(np.int8))
    return graph, params, x0


def _corrupted(params: SpreadingParams, eps: float) -> SpreadingParams:
    """Test hook: bias the closure dynamics' rates so containment breaks."""
    if eps == 0.0:
        return params
    return SpreadingParams(alpha=params.alpha, xi=params.xi,
                           delta=params.delta * (1.0 + eps), eta=params.eta,
                           beta=params.beta, gamma=params.gamma)


def run_verification(cfg: ScenarioConfig, report=print) -> list[str]:
    """Oracle suite over randomized small instances; returns failure notes."""
    failures: list[str] = []
    slack = 1e-6
    dt = cfg.controller.dt
    step = dt / cfg.controller.step_divisor
    horizon = round(2.0 / step) * step

    for seed in range(cfg.verify_seeds):
        rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, seed)))
        graph, params, x0 = _random_instance(rng, cfg.verify_max_nodes)
        closure_params = _corrupted(params, cfg.corrupt_rhs)

        crude = closure.integrate_bounds(ClosureKind.CRUDE, graph,
                                         closure_params, x0, horizon, step)
        refined = closure.integrate_bounds(ClosureKind.REFINED, graph,
                                           closure_params, x0, horizon, step)
        exact = stochastic.master_equation_marginals(graph, params, x0,
                                                     crude.times, step=step)
        p = np.stack([m.p for m in exact])
        for name, traj in (("crude", crude), ("refined", refined)):
            if np.any(p < traj.lower - slack) or np.any(p > traj.upper + slack):
                failures.append(f"containment[{name}] seed={seed}")
        if (np.any(refined.lower < crude.lower - slack)
                or np.any(refined.upper > crude.upper + slack)):
            failures.append(f"nesting seed={seed}")
        if (np.any(refined.lower < -slack)
                or np.any(refined.upper > 1 + slack)):
            failures.append(f"refined-boundedness seed={seed}")

        # tightest E+I bound equals the per-node LP optimum
        state = _random_bounds_state(rng, graph.n)
        got = closure.optimal_exposed_infected_upper(state)
        want = _lp_vertex_optimum(state)
        if abs(got - want) > 1e-12:
            failures.append(f"lp-equivalence seed={seed}")

        # a certified action really does contract the exact expectation
        qmap = QuarantineMap(graph, params)
        action = empc.sample_candidate_action(x0, rng)
        margin = empc.stability_margin(graph, qmap, action, x0, cfg.controller)
        if margin <= 0.0:
            acted = qmap.apply(action)
            cond = stochastic.master_equation_marginals(graph, acted, x0, [dt])
            expected = float(cond[0].p[:, (core.E, core.I)].sum())
            target = core.exposed_infected_count(x0) * math.exp(-cfg.controller.r * dt)
            if expected > target + slack:
                failures.append(f"feasibility-soundness seed={seed}")

    # survival bound on a small closed-loop ensemble
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 0xA11CE)))
    graph, params, x0 = _survival_instance(rng)
    qmap = QuarantineMap(graph, params)
    ctl = ControllerConfig(r=cfg.controller.r, dt=cfg.controller.dt,
                           horizon=12.0, k_max=1,
                           step_divisor=cfg.controller.step_divisor)
    trials = 200
    ell0 = core.exposed_infected_count(x0)
    times = ctl.sampling_times()
    alive = np.zeros(times.size)
    for _ in range(trials):
        rec = empc.run_closed_loop(graph, qmap, x0, ctl, rng, policy="empc")
        ell, _ = _pad_series(rec, times, graph.n)
        alive += ell > 0
    freq = alive / trials
    for j, t in enumerate(times):
        bound = analysis.survival_bound(ell0, ctl.r, ctl.dt, t)
        se = math.sqrt(max(bound * (1 - bound), 0.25 / trials) / trials)
        if freq[j] > bound + 3 * se:
            failures.append(f"survival-bound t={t}")
            break

    checks = ["containment", "nesting", "refined-boundedness",
              "lp-equivalence", "feasibility-soundness", "survival-bound"]
    for check in checks:
        status = "FAIL" if any(f.startswith(check) for f in failures) else "pass"
        report(f"{status}  {check}")
    for f in failures:
        report(f"  violated: {f}")
    return failures


def _survival_instance(rng):
    graph = core.erdos_renyi(4, 0.7, 42)
    params = SpreadingParams.uniform(graph, alpha=0.1, xi=2.0, delta=1.25,
                                     eta=3.5, beta=0.1, gamma=0.1)
    x0 = SystemState.from_labels("EISV")
    return graph, params, x0


def _random_bounds_state(rng, n: int) -> closure.BoundsState:
    """Random interval state guaranteed to contain a true distribution."""
    p = rng.dirichlet(np.ones(4), size=n)
    lower = p * rng.random((n, 4))
    upper = p + (1 - p) * rng.random((n, 4))
    return closure.BoundsState(lower=lower, upper=upper)


def _lp_vertex_optimum(state: closure.BoundsState) -> float:
    """Per-node LP optimum by exhaustive vertex enumeration: maximize
    y_E + y_I over the box [lower, upper] intersected with sum(y) = 1."""
    total = 0.0
    for i in range(state.n):
        lo, up = state.lower[i], state.upper[i]
        best = -np.inf
        for free in range(4):
            others = [c for c in range(4) if c != free]
            for mask in range(8):
                y = np.empty(4)
                for b, c in enumerate(others):
                    y[c] = up[c] if (mask >> b) & 1 else lo[c]
                y[free] = 1.0 - y[others].sum()
                if y[free] < lo[free] - 1e-12 or y[free] > up[free] + 1e-12:
                    continue
                best = max(best, y[1] + y[2])
        if best == -np.inf:
            raise ValueError(f"infeasible interval state at node {i}")
        total += best
    return total


def cmd_verify(cfg: ScenarioConfig, out: Path) -> int:
    out.mkdir(parents=True, exist_ok=True)
    lines: list[str] = []
    failures = run_verification(cfg, report=lambda s: lines.append(s))
    for line in lines:
        print(line)
    with open(out / "verify.txt", "w") as fh:
        fh.write("\n".join(lines) + "\n")
    _write_metadata(out, "verify", cfg)
    return EXIT_RUNTIME if failures else EXIT_OK


# --- entry point ------------------------------------------------------------

def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="seivmpc",
        description="SEIV epidemic simulation and robust quarantine control")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (("simulate", cmd_simulate), ("bounds", cmd_bounds),
                     ("control", cmd_control), ("verify", cmd_verify)):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, type=Path)
        p.add_argument("--out", required=True, type=Path)
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        p.set_defaults(func=fn)
    args = parser.parse_args(argv)

    try:
        cfg = load_config(args.config, seed_override=args.seed)
        x0 = cfg.initial_state()  # fail fast on bad init sections
        del x0
    except (ConfigError, KeyError, TypeError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(cfg, args.out)
    except (stochastic.CapacityError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
