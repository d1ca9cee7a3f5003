"""Command-line harness: ``sts-robust {plan,synthesize,reach,ilc,tune}``.

Every subcommand reads an :class:`ExperimentConfig` (preset plus optional
JSON file plus flags), writes its artifacts into ``--out`` and finishes with
``manifest.json``. Errors map to distinct exit codes via ``exit_code`` on
the exception types.
"""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from . import constants as C
from . import ilc as ilc_mod
from . import io
from . import lqr
from . import reachability as reach
from .config import PRESETS, ConfigError, ExperimentConfig
from .errors import StsError
from .numerics import IntervalBox, TimeGrid, Trajectory, child_seeds, latin_hypercube, make_rng
from .planner import ReferenceBundle, build_reference
from .tuner import tune_ilc_gains

STATE_COLS = list(C.STATE_NAMES)
INPUT_COLS = list(C.INPUT_NAMES)
COM_COLS = list(C.OUTPUT_NAMES)
UPS_COLS = [f"ups_{n}" for n in C.USER_OUTPUT_NAMES]
MU_COLS = INPUT_COLS[1:]

# seed streams derived from the master seed
SEED_SAMPLES, SEED_FRESH, SEED_POOL, SEED_RECALL = range(4)


def _seeds(cfg: ExperimentConfig) -> list[int]:
    return child_seeds(cfg.seed, 4)


# --------------------------------------------------------------------------
# shared artifact helpers
# --------------------------------------------------------------------------

def write_reference(path, ref: ReferenceBundle) -> Path:
    rows = np.column_stack([ref.grid.nodes, ref.x_hat.values, ref.u_hat.values, ref.y_hat.values])
    return io.write_csv(path, ["t"] + STATE_COLS + INPUT_COLS + COM_COLS, rows)


def write_gain_schedule(out: Path, gains: lqr.GainSchedule) -> list[Path]:
    t = gains.K.grid.nodes
    kcols = [f"K_{i}{j}" for i in range(4) for j in range(6)]
    pcols = [f"P_{i}{j}" for i in range(6) for j in range(6)]
    n = t.size
    return [
        io.write_csv(out / "gains_K.csv", ["t"] + kcols, np.column_stack([t, gains.K.values.reshape(n, 24)])),
        io.write_csv(out / "riccati_P.csv", ["t"] + pcols, np.column_stack([t, gains.P.values.reshape(n, 36)])),
    ]


def load_gain_schedule(out, step: float) -> lqr.GainSchedule:
    """Inverse of :func:`write_gain_schedule`."""
    out = Path(out)
    _, k = io.read_csv(out / "gains_K.csv")
    _, p = io.read_csv(out / "riccati_P.csv")
    t = k[:, 0]
    grid = TimeGrid(float(t[0]), float(t[-1]), step, t)
    return lqr.GainSchedule(Trajectory(grid, k[:, 1:].reshape(-1, 4, 6)),
                            Trajectory(grid, p[:, 1:].reshape(-1, 6, 6)))


def write_envelope(path, envelope: list, model) -> Path:
    cols, rows = ["t"], []
    for q in model.quantities():
        dim = envelope[0].boxes[q].lower.size
        cols += [f"{q}{i}_{side}" for i in range(dim) for side in ("lower", "upper")]
    for sl in envelope:
        row = [sl.t]
        for q in model.quantities():
            b = sl.boxes[q]
            row += [v for pair in zip(b.lower, b.upper) for v in pair]
        rows.append(row)
    return io.write_csv(path, cols, rows)


def write_iteration(path, r: ilc_mod.IterationResult) -> Path:
    rows = np.column_stack([r.x.grid.nodes, r.x.values, r.ups.values, r.mu.values, r.tau_h.values])
    return io.write_csv(path, ["t"] + STATE_COLS + UPS_COLS + MU_COLS + ["tau_h"], rows)


def save_gains(path, gains: ilc_mod.IlcGains) -> Path:
    return io.write_json(path, gains.as_dict())


def load_gains(source: str) -> ilc_mod.IlcGains:
    if source == "paper":
        return ilc_mod.IlcGains.paper()
    if source == "zero":
        return ilc_mod.IlcGains(np.zeros((3, 6)), np.zeros((3, 6)))
    try:
        data = io.read_json(source)
        return ilc_mod.IlcGains(np.array(data["K"]), np.array(data["L"]))
    except (OSError, KeyError, ValueError) as exc:
        raise ConfigError(f"cannot load ILC gains from {source!r}: {exc}") from exc


def load_warm_start(path, grid: TimeGrid) -> Trajectory:
    try:
        cols, data = io.read_csv(path)
        mu = data[:, [cols.index(c) for c in MU_COLS]]
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot load warm start from {path!r}: {exc}") from exc
    if mu.shape[0] != len(grid) or not np.all(np.isfinite(mu)):
        raise ConfigError("warm start must be a complete iteration on the reference grid")
    return Trajectory(grid, mu)


def _pipeline(cfg: ExperimentConfig):
    ref = build_reference(cfg.to_plan_spec())
    lin = lqr.linearize(ref, cfg.param("nominal"))
    return ref, lin


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def cmd_plan(cfg: ExperimentConfig, out: Path) -> list[Path]:
    spec = cfg.to_plan_spec()
    ref = build_reference(spec)
    u = ref.u_hat.values
    box = spec.u_box
    summary = {
        "nodes": len(ref.grid),
        "F_y_min": float(u[:, 3].min()),
        "F_y_nonnegative": bool(np.all(u[:, 3] >= 0.0)),
        "inputs_within_bounds": bool(all(box.contains(v) for v in u)),
        "initial_com": ref.y_hat.values[0, :2].tolist(),
        "final_com": ref.y_hat.values[-1, :2].tolist(),
        "final_state_deg": (ref.x_hat.values[-1] / C.DEG).tolist(),
    }
    return [write_reference(out / "reference.csv", ref), io.write_json(out / "plan_summary.json", summary)]


def cmd_synthesize(cfg: ExperimentConfig, out: Path) -> list[Path]:
    ref, lin = _pipeline(cfg)
    w = cfg.lqr_weights()
    gains = lqr.solve_riccati(lin, w)
    res = lqr.riccati_residual(lin, w, gains)
    P = gains.P.values
    xs = lqr.simulate_closed_loop(ref, gains, cfg.param("nominal"),
                                  substeps=lqr.stiffness_substeps(lin, gains))
    summary = {
        "weights": w.as_dict(),
        "symmetry_max": float(np.max(np.abs(P - P.transpose(0, 2, 1)))),
        "min_eigenvalue": float(np.linalg.eigvalsh(0.5 * (P + P.transpose(0, 2, 1))).min()),
        "riccati_residual_median": float(np.median(res)),
        "riccati_residual_max": float(np.max(res)),
        "nominal_tracking_error_max": float(np.max(np.abs(xs.values - ref.x_hat.values))),
    }
    files = write_gain_schedule(out, gains)
    files.append(io.write_json(out / "synthesis_summary.json", summary))
    return files


def cmd_reach(cfg: ExperimentConfig, out: Path) -> list[Path]:
    ref, lin = _pipeline(cfg)
    settings = cfg.reach_settings()
    seeds = _seeds(cfg)
    samples = reach.make_samples(settings, seeds[SEED_SAMPLES])
    fresh = latin_hypercube(cfg.reach.n_fresh, settings.p_box, make_rng(seeds[SEED_FRESH]))
    tol = cfg.reach.containment_tol

    mb, _, eb = reach.evaluate_controller(ref, cfg.baseline_weights(), settings, samples, lin)
    metric = reach.calibrate_weights(eb, mb, settings.T_P)
    ms, _, es = reach.evaluate_controller(ref, cfg.lqr_weights(), settings, samples, lin)
    pool = lqr.sample_weight_pool(cfg.lqr.pool_size, make_rng(seeds[SEED_POOL]))
    best, best_j, results = reach.pool_search(pool, ref, metric, settings, samples, lin)

    report = {
        "metric_weights": metric.as_dict(),
        "baseline": {"weights": cfg.baseline_weights().as_dict(),
                     "J_P": reach.performance_metric(eb, mb, metric)},
        "fixture": {
            "weights": cfg.lqr_weights().as_dict(),
            "J_P": reach.performance_metric(es, ms, metric),
            "containment_bounding": reach.containment(es, ms, samples, tol, settings.workers),
            "containment_fresh": reach.containment(es, ms, fresh, tol, settings.workers),
        },
        "pool": {"size": len(pool), "best_index": best, "best_J_P": best_j,
                 "failures": sum(not r.ok for r in results)},
        "n_bounding_samples": len(samples),
    }
    pool_rows = [[r.index, int(r.ok), r.j_p, *r.weights.q, *r.weights.r, *r.weights.s] for r in results]
    pool_cols = (["index", "ok", "J_P"] + [f"q{i}" for i in range(6)] + [f"r{i}" for i in range(4)]
                 + [f"s{i}" for i in range(6)])
    return [
        io.write_json(out / "reach_report.json", report),
        io.write_csv(out / "pool.csv", pool_cols, pool_rows),
        write_envelope(out / "envelope_baseline.csv", eb, mb),
        write_envelope(out / "envelope_fixture.csv", es, ms),
    ]


def ilc_scenario(cfg: ExperimentConfig, ref=None, lin=None, n_iterations=None) -> ilc_mod.IlcScenario:
    if ref is None:
        ref, lin = _pipeline(cfg)
    lqr_gains = lqr.solve_riccati(lin, cfg.lqr_weights())
    mu0 = load_warm_start(cfg.ilc.warm_start, ref.grid) if cfg.ilc.warm_start else None
    return ilc_mod.IlcScenario(
        ref, lin, lqr_gains, cfg.param(cfg.ilc.p_true),
        n_iterations=int(n_iterations or cfg.ilc.n_iterations), recall_mode=cfg.ilc.recall,
        seed=_seeds(cfg)[SEED_RECALL], mu0=mu0, feedback_past_abort=bool(cfg.ilc.feedback_past_abort),
        recall_decay=float(cfg.ilc.recall_decay), recall_amplitude=float(cfg.ilc.recall_amplitude),
        state_box=IntervalBox(np.asarray(cfg.ilc.x_lower_deg) * C.DEG,
                              np.asarray(cfg.ilc.x_upper_deg) * C.DEG),
    )


def cmd_ilc(cfg: ExperimentConfig, out: Path) -> list[Path]:
    scenario = ilc_scenario(cfg)
    gains = load_gains(cfg.ilc.gains)
    results = scenario.run(gains)
    files = [write_iteration(out / f"iteration_{r.j:03d}.csv", r) for r in results]
    rows = [[r.j, r.t_s, r.cost, int(r.aborted)] for r in results]
    files.append(io.write_csv(out / "iterations.csv", ["j", "t_s", "cost", "aborted"], rows))
    last = results[-1]
    finite = [r.cost for r in results if math.isfinite(r.cost)]
    summary = {
        "gains": gains.as_dict(),
        "p_true": cfg.ilc.p_true,
        "recall": cfg.ilc.recall,
        "iterations": [r.summary() for r in results],
        "final_cost": last.cost if math.isfinite(last.cost) else None,
        "min_cost": min(finite) if finite else None,
        "first_complete": next((r.j for r in results if not r.aborted), None),
        "reference_cost": ilc_mod.reference_cost(scenario.ref, cfg.param("nominal")),
    }
    if not last.aborted:
        summary["final_state_deg"] = (last.x.values[-1] / C.DEG).tolist()
        summary["theta2_max_deg"] = float(np.max(last.x.values[:, 1]) / C.DEG)
    files.append(io.write_json(out / "ilc_summary.json", summary))
    return files


def cmd_tune(cfg: ExperimentConfig, out: Path) -> list[Path]:
    scenario = ilc_scenario(cfg)
    eta0 = load_gains(cfg.dfo.start).to_vector()
    K, L, trace = tune_ilc_gains(scenario, eta0, cfg.dfo_config())
    rows = [[k + 1, c, b] for k, (c, b) in enumerate(zip(trace.costs, trace.best_costs))]
    _, best = trace.best()
    summary = {"initial_cost": trace.initial_cost, "best_cost": best,
               "improved": bool(best < trace.initial_cost), "iterations": len(trace)}
    return [
        io.write_csv(out / "trace.csv", ["iteration", "cost", "incumbent"], rows),
        save_gains(out / "best_gains.json", ilc_mod.IlcGains(K, L)),
        io.write_json(out / "tune_summary.json", summary),
    ]


COMMANDS = {
    "plan": cmd_plan,
    "synthesize": cmd_synthesize,
    "reach": cmd_reach,
    "ilc": cmd_ilc,
    "tune": cmd_tune,
}


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sts-robust", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file layered over the preset")
        p.add_argument("--seed", type=int, help="master seed")
        p.add_argument("--workers", type=int, help="worker processes")
        p.add_argument("--preset", choices=PRESETS, help="paper- or desk-scale defaults")
        p.add_argument("--out", help="output directory")
    return parser


def resolve_config(args) -> ExperimentConfig:
    if args.config:
        cfg = ExperimentConfig.load(args.config, args.preset)
    else:
        cfg = ExperimentConfig.preset_config(args.preset or "paper")
    if args.seed is not None:
        cfg.seed = args.seed
    if args.workers is not None:
        cfg.workers = args.workers
    if args.out is not None:
        cfg.out = args.out
    cfg.validate()
    return cfg


def run(command: str, cfg: ExperimentConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    files = COMMANDS[command](cfg, out)
    # the output location and worker count do not affect results, so they stay
    # out of the hash; the location is omitted entirely so relocated reruns match
    content = {k: v for k, v in cfg.to_dict().items() if k not in ("out", "workers")}
    return io.write_manifest(out, command, content, cfg.seed, files,
                             extra={"workers": cfg.workers})


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        manifest = run(args.command, cfg)
    except StsError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    print(f"wrote {manifest}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
