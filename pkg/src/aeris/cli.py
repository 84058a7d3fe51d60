"""Command-line entry point: ``aeris <subcommand> [--config ...] [--seed ...] [--out-dir ...]``.

Exit codes: 0 ok, 2 configuration error, 3 runtime error, 4 partial sweep
failure. Errors are also printed to stderr as one JSON object.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np
import yaml

from . import kernels
from .config import ConfigError, ExperimentConfig, load_config, preset_names
from .environment import UavSwarmEnv, placement_metrics, run_episode
from .experiments import (MetricsRow, format_metrics, greedy_rollouts, read_metrics, run_joint_optimization,
                          run_sweep)
from .learning import VARIANTS, CheckpointError, greedy_policy, load_checkpoint, save_checkpoint
from .phaseopt import PhaseConfig, PhaseProblem, optimize
from .scenario import ScenarioError, load_scenario, save_scenario

log = logging.getLogger("aeris")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_PARTIAL = 0, 2, 3, 4


class SchemaMismatchError(ConfigError):
    """A checkpoint does not fit the scenario it is evaluated on."""


def _common(parser: argparse.ArgumentParser, suppress: bool) -> None:
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--config", default=d("desk"),
                        help="config file or preset name (default: desk)")
    parser.add_argument("--seed", type=int, default=d(None), help="master seed override")
    parser.add_argument("--out-dir", default=d(None), help="output directory override")
    parser.add_argument("--verbose", "-v", action="count", default=d(0))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="aeris", description="Multi-UAV, multi-RIS coverage and throughput "
                                "simulator with DRL path planning and PSO phase optimisation.")
    _common(p, suppress=False)
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    g = sub.add_parser("generate", help="generate a scenario file")
    _common(g, True)
    g.add_argument("--output", help="scenario path (default: <out-dir>/scenario.json)")

    t = sub.add_parser("train", help="train a planner with the joint DRL/PSO loop")
    _common(t, True)
    t.add_argument("--variant", choices=VARIANTS, default="dqn")
    t.add_argument("--scenario", help="scenario file (default: generated from the config)")

    o = sub.add_parser("optimize-phases", help="run PSO for a fixed UAV placement")
    _common(o, True)
    o.add_argument("--scenario", help="scenario file (default: generated from the config)")
    o.add_argument("--checkpoint", help="use the greedy policy's slot placements instead of the scenario's UAVs")

    s = sub.add_parser("sweep", help="run every method over the configured sweep")
    _common(s, True)

    e = sub.add_parser("evaluate", help="evaluate a trained checkpoint on the configured seeds")
    _common(e, True)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--scenario", help="scenario file (default: generated from the config)")

    r = sub.add_parser("report", help="summarise metrics files")
    _common(r, True)
    r.add_argument("metrics", nargs="*", help="metrics CSV files (default: metrics_*.csv in the out dir)")
    return p


def _out_dir(args, cfg: ExperimentConfig) -> Path:
    out = Path(args.out_dir if args.out_dir is not None else cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _scenario(args, cfg: ExperimentConfig):
    path = getattr(args, "scenario", None)
    return load_scenario(path) if path else cfg.build_scenario()


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def cmd_generate(args, cfg):
    scenario = cfg.build_scenario()
    out = Path(args.output) if args.output else _out_dir(args, cfg) / "scenario.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    save_scenario(scenario, out)
    (out.parent / "config.resolved.yaml").write_text(yaml.safe_dump(cfg.raw, sort_keys=True))
    print(f"scenario: {scenario.n_ues} UEs, {scenario.n_uavs} UAVs, {len(scenario.ris)} RIS, "
          f"{scenario.area.cols}x{scenario.area.rows} grid -> {out}")
    return EXIT_OK


def cmd_train(args, cfg):
    scenario = _scenario(args, cfg)
    out = _out_dir(args, cfg)
    res = run_joint_optimization(scenario, cfg.channel, cfg.energy, cfg.env, cfg.training, cfg.pso,
                                 cfg.joint, args.variant, served_bonus=cfg.objective.served_bonus_bps)
    grid = (scenario.area.cols, scenario.area.rows)
    save_checkpoint(res.approximator, out / "checkpoint.json", args.variant, grid,
                    extra={"phases": res.phases.to_dict(), "config": cfg.name})
    (out / "phases.json").write_text(json.dumps(res.phases.to_dict()) + "\n")
    (out / "joint.json").write_text(json.dumps([asdict(r) for r in res.rounds], indent=2) + "\n")
    _write_csv(out / "training.csv", ("episode", "epsilon", "total_reward", "mean_coverage", "mean_loss", "steps"),
               [(m.episode, f"{m.epsilon:.6g}", f"{m.total_reward:.6g}", f"{m.mean_coverage:.6g}",
                 "" if math.isnan(m.mean_loss) else f"{m.mean_loss:.6g}", m.steps) for m in res.training])
    for r in res.rounds:
        print(f"round {r.round}: coverage {r.coverage_pct:.2f}% throughput {r.throughput_bps:.4g} bps"
              f"{'' if r.accepted else ' (rejected)'}")
    print(f"checkpoint -> {out / 'checkpoint.json'}")
    return EXIT_OK


def _check_checkpoint(meta, approx, env: UavSwarmEnv):
    grid = (env.area.cols, env.area.rows)
    saved = tuple(meta.get("grid") or ())
    if saved and saved != grid:
        raise SchemaMismatchError(
            f"schema mismatch: checkpoint grid {saved[0]}x{saved[1]} (state dim {approx.input_dim}) "
            f"vs scenario grid {grid[0]}x{grid[1]} (state dim {env.obs_dim})")
    if approx.input_dim != env.obs_dim:
        raise SchemaMismatchError(f"schema mismatch: checkpoint state dim {approx.input_dim} "
                                  f"vs scenario state dim {env.obs_dim}")


def _checkpoint_phases(meta, scenario):
    doc = (meta.get("extra") or {}).get("phases")
    ris = scenario.ris
    if doc is None:
        return PhaseConfig.zeros(len(ris), ris[0].element_count, ris[0].phase_bits)
    phases = PhaseConfig.from_dict(doc)
    if phases.levels.shape != (len(ris), ris[0].element_count):
        raise SchemaMismatchError(f"schema mismatch: checkpoint phases {phases.levels.shape} "
                                  f"vs scenario RIS {(len(ris), ris[0].element_count)}")
    return phases


def cmd_optimize_phases(args, cfg):
    scenario = _scenario(args, cfg)
    out = _out_dir(args, cfg)
    initial = None
    if args.checkpoint:
        approx, meta = load_checkpoint(args.checkpoint)
        env = UavSwarmEnv(scenario, cfg.channel, cfg.energy, cfg.env)
        _check_checkpoint(meta, approx, env)
        initial = _checkpoint_phases(meta, scenario)
        env.set_phases(initial)
        placements, _ = greedy_rollouts(env, approx, cfg.seeds)
        problem = PhaseProblem.from_placements(scenario, cfg.channel, placements,
                                               served_bonus=cfg.objective.served_bonus_bps)
    else:
        problem = PhaseProblem.from_positions(scenario, cfg.channel, served_bonus=cfg.objective.served_bonus_bps)
    res = optimize(problem, replace(cfg.pso, seed=cfg.seed), initial=initial)
    (out / "phases.json").write_text(json.dumps(res.best.to_dict()) + "\n")
    _write_csv(out / "pso_trace.csv", ("iteration", "best_cost_bps"),
               [(k + 1, f"{c:.10g}") for k, c in enumerate(res.trace)])
    print(f"best cost {res.cost:.6g} bps after {len(res.trace)} iterations -> {out / 'phases.json'}")
    return EXIT_OK


def cmd_sweep(args, cfg):
    res = run_sweep(cfg, _out_dir(args, cfg))
    for name, path in res.files.items():
        print(f"{name}: {path}")
    if res.failed_cells:
        print(f"{res.failed_cells} cell(s) failed; see the status/error columns", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_evaluate(args, cfg):
    approx, meta = load_checkpoint(args.checkpoint)
    scenario = _scenario(args, cfg)
    env = UavSwarmEnv(scenario, cfg.channel, cfg.energy, cfg.env)
    _check_checkpoint(meta, approx, env)
    phases = _checkpoint_phases(meta, scenario)
    env.set_phases(phases)
    policy = greedy_policy(approx)
    method = "drl_ac" if meta.get("variant") == "actor_critic" else "drl_dqn"
    rows = []
    for s in cfg.seeds:
        ep = run_episode(env, policy, s)
        problem = PhaseProblem.from_placements(scenario, cfg.channel, ep.placements,
                                               served_bonus=cfg.objective.served_bonus_bps)
        pso = optimize(problem, replace(cfg.pso, seed=s), initial=phases)
        m = placement_metrics(scenario, cfg.channel, ep.placements, pso.best)
        cov = 100.0 * float(np.mean(ep.slot_coverage)) / scenario.n_ues if ep.slot_coverage else 0.0
        base = placement_metrics(scenario, cfg.channel, ep.placements, phases)
        rows.append(MetricsRow(method, s, "", None, m["qos_pct"], cov, m["throughput_bps"],
                               base["throughput_bps"], 0, cfg.pso.itrmax))
    out = _out_dir(args, cfg) / "metrics_evaluate.csv"
    out.write_text(format_metrics(rows))
    q = np.array([r.qos_satisfaction_pct for r in rows])
    print(f"{method}: QoS {q.mean():.2f}% +/- {q.std(ddof=1) if len(q) > 1 else 0.0:.2f} over {len(q)} seeds -> {out}")
    return EXIT_OK


def cmd_report(args, cfg):
    paths = [Path(p) for p in args.metrics]
    if not paths:
        base = Path(args.out_dir if args.out_dir is not None else cfg.out_dir)
        paths = sorted(base.glob("metrics_*.csv"))
    if not paths:
        raise ConfigError("no metrics files found")
    for path in paths:
        if not path.is_file():
            raise ConfigError(f"metrics file not found: {path}")
        rows = read_metrics(path)
        print(f"== {path}")
        print(f"{'method':<12} {'value':>8} {'n':>3} {'qos %':>14} {'coverage %':>14} {'throughput Mbps':>18}")
        groups: dict = {}
        for r in rows:
            if r["status"] == "ok":
                groups.setdefault((r["method"], r["sweep_value"]), []).append(r)
        for (m, v), rs in sorted(groups.items(), key=lambda kv: (kv[0][0], -1 if kv[0][1] is None else kv[0][1])):
            def ms(key, scale=1.0):
                x = np.array([r[key] for r in rs]) * scale
                sd = x.std(ddof=1) if len(x) > 1 else 0.0
                return f"{x.mean():.2f}±{sd:.2f}"
            vs = "-" if v is None else f"{v:g}"
            print(f"{m:<12} {vs:>8} {len(rs):>3} {ms('qos_satisfaction_pct'):>14} {ms('coverage_pct'):>14} "
                  f"{ms('throughput_bps', 1e-6):>18}")
        bad = sum(1 for r in rows if r["status"] != "ok")
        if bad:
            print(f"{bad} failed row(s)")
    return EXIT_OK


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "optimize-phases": cmd_optimize_phases,
    "sweep": cmd_sweep,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
}


def _fail(category: str, exc: BaseException, code: int) -> int:
    print(json.dumps({"error": category, "type": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(2, args.verbose)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    log.debug("kernel backend: %s", kernels.BACKEND)
    try:
        cfg = load_config(args.config, seed=args.seed, out_dir=args.out_dir)
        return COMMANDS[args.command](args, cfg)
    except (ConfigError, ScenarioError, CheckpointError) as exc:
        return _fail("schema" if isinstance(exc, SchemaMismatchError) else "config", exc, EXIT_CONFIG)
    except KeyboardInterrupt:
        return _fail("interrupted", KeyboardInterrupt("interrupted"), EXIT_RUNTIME)
    except Exception as exc:  # noqa: BLE001 - surfaced as a machine-readable runtime error
        log.debug("runtime failure", exc_info=True)
        return _fail("runtime", exc, EXIT_RUNTIME)


if __name__ == "__main__":
    sys.exit(main())
