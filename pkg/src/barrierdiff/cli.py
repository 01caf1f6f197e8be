"""Command-line entry point: ``barrierdiff run|battery|slack-profile``."""

from __future__ import annotations

import argparse
import csv
import io
import os
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from .diffusion import DenoiseSchedule
from .planner import MODES, PlannerConfig
from .safety import BarrierParams
from .sim import BATTERIES, Scenario, ScenarioError, battery, builtin, run_battery, run_scenario
from .sim.trace import dumps, write_trace

OUT_ENV = "BARRIERDIFF_OUT"
DEFAULT_OUT = "barrierdiff_out"


class UsageError(Exception):
    """Bad user input; maps to exit code 2."""


PLANNER_KEYS = {"planner.eta": float, "planner.perturbation": float}
BARRIER_KEYS = {f"barrier.{k}": float for k in ("d_safe", "gamma", "slack_penalty", "v_max")}
SCHEDULE_KEYS = {"schedule.T": int, "schedule.stochastic": lambda s: _parse_bool(s)}
SCENARIO_KEYS = {f"scenario.{k}": float
                 for k in ("duration", "cruise_speed", "speed_limit", "corridor_half_width")}
OVERRIDE_KEYS = {**PLANNER_KEYS, **BARRIER_KEYS, **SCHEDULE_KEYS, **SCENARIO_KEYS}


def _parse_bool(s: str) -> bool:
    if s.lower() in ("1", "true", "yes", "on"):
        return True
    if s.lower() in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def parse_overrides(items) -> dict:
    out = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"override {item!r} is not of the form key=value")
        if key not in OVERRIDE_KEYS:
            raise UsageError(f"unknown override key {key!r}; known keys: {', '.join(sorted(OVERRIDE_KEYS))}")
        try:
            out[key] = OVERRIDE_KEYS[key](value)
        except ValueError as exc:
            raise UsageError(f"bad value for {key}: {exc}") from exc
    return out


def build_config(mode: str, overrides: dict) -> PlannerConfig:
    if mode not in MODES:
        raise UsageError(f"unknown mode {mode!r}; expected one of {', '.join(MODES)}")
    barrier = BarrierParams(**{k.split(".", 1)[1]: v for k, v in overrides.items() if k in BARRIER_KEYS})
    sched = DenoiseSchedule.cosine(T=overrides.get("schedule.T", 20),
                                   stochastic=overrides.get("schedule.stochastic", False))
    return PlannerConfig(mode=mode, eta=overrides.get("planner.eta", PlannerConfig.eta), barrier=barrier,
                         schedule=sched,
                         perturbation=overrides.get("planner.perturbation", PlannerConfig.perturbation))


def apply_scenario_overrides(sc: Scenario, overrides: dict) -> Scenario:
    fields = {k.split(".", 1)[1]: v for k, v in overrides.items() if k in SCENARIO_KEYS}
    return replace(sc, **fields) if fields else sc


def config_record(config: PlannerConfig, overrides: dict) -> dict:
    """Every effective planner value, for the summary file."""
    return {
        "mode": config.mode, "eta": config.eta, "perturbation": config.perturbation,
        "barrier": asdict(config.barrier),
        "schedule": {"T": config.schedule.T, "stochastic": bool(np.any(config.schedule.sigma > 0))},
        "dynamics": asdict(config.dynamics),
        "overrides": dict(sorted(overrides.items())),
    }


def load_scenario(ref: str, seed: int | None) -> Scenario:
    path = Path(ref)
    if path.suffix == ".json" or path.exists():
        sc = Scenario.load(path)
        return replace(sc, seed=seed) if seed is not None else sc
    fam = ref.partition("-")[0]
    if seed is not None:
        return builtin(f"{fam}-{seed}")
    return builtin(ref)


def out_dir(arg: str | None) -> Path:
    path = Path(arg or os.environ.get(OUT_ENV) or DEFAULT_OUT)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {path}: {exc}") from exc
    return path


def _fmt(x) -> str:
    return "none" if x is None else f"{x:.4f}"


def cmd_run(args) -> int:
    overrides = parse_overrides(args.set)
    config = build_config(args.mode, overrides)
    sc = apply_scenario_overrides(load_scenario(args.scenario, args.seed), overrides)
    out = out_dir(args.out)
    result = run_scenario(sc, config)
    stem = f"{sc.name}_{config.mode}_seed{sc.seed}"
    summary = {"command": "run", "config": config_record(config, overrides), "scenario": sc.to_dict(),
               "result": result.summary()}
    write_trace(out / f"{stem}.trace.ndjson", result.traces, result.summary())
    (out / f"{stem}.summary.json").write_text(dumps(summary, indent=2) + "\n")
    s = result.summary()
    print(f"{sc.name} mode={config.mode} collided={str(result.collided).lower()} "
          f"min_h={_fmt(s['min_h'])} composite={result.composite:.4f}")
    return 0


def _battery_rows(results, modes) -> list:
    rows = []
    for mode in modes:
        rs = [r for r in results if r.mode == mode]
        rows.append({
            "mode": mode, "runs": len(rs), "collisions": sum(r.collided for r in rs),
            "collision_rate_pct": 100.0 * float(np.mean([r.collided for r in rs])),
            "mean_composite": float(np.mean([r.composite for r in rs])),
            "mean_final_slack_rate": float(np.mean([r.mean_final_slack for r in rs])),
        })
    return rows


def _table_text(title: str, rows) -> str:
    head = f"{'mode':<22}{'runs':>6}{'collision %':>14}{'composite':>12}{'final slack':>13}"
    lines = [title, head, "-" * len(head)]
    for r in rows:
        lines.append(f"{r['mode']:<22}{r['runs']:>6}{r['collision_rate_pct']:>14.2f}"
                     f"{r['mean_composite']:>12.4f}{r['mean_final_slack_rate']:>13.4f}")
    return "\n".join(lines) + "\n"


def _csv_text(rows, fields) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (f"{r[k]:.6f}" if isinstance(r[k], float) else r[k]) for k in fields})
    return buf.getvalue()


def _scenarios(name: str, seeds: int, overrides: dict) -> list:
    if name not in BATTERIES:
        raise UsageError(f"unknown battery {name!r}; known: {', '.join(sorted(BATTERIES))}")
    if seeds < 1:
        raise UsageError("--seeds must be at least 1")
    return [apply_scenario_overrides(s, overrides) for s in battery(name, seeds)]


def _workers(n: int | None) -> int:
    return max(1, n if n is not None else (os.cpu_count() or 1))


def cmd_battery(args) -> int:
    overrides = parse_overrides(args.set)
    modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    if not modes:
        raise UsageError("--modes is empty")
    configs = [build_config(m, overrides) for m in modes]
    scenarios = _scenarios(args.name, args.seeds, overrides)
    out = out_dir(args.out)
    results = run_battery(scenarios, configs, _workers(args.workers))
    rows = _battery_rows(results, modes)
    stem = f"battery_{args.name}"
    title = f"battery={args.name} seeds={args.seeds} scenarios={len(scenarios)}"
    (out / f"{stem}.txt").write_text(_table_text(title, rows))
    (out / f"{stem}.csv").write_text(_csv_text(rows, list(rows[0])))
    doc = {"command": "battery", "battery": args.name, "seeds": args.seeds, "modes": modes,
           "config": [config_record(c, overrides) for c in configs], "table": rows,
           "runs": [r.summary() for r in results]}
    (out / f"{stem}.json").write_text(dumps(doc, indent=2) + "\n")
    sys.stdout.write(_table_text(title, rows))
    return 0


def slack_profile(results) -> np.ndarray:
    """Per-denoising-step slack activation rate: mean over cycles, then over runs."""
    return np.mean([r.slack_profiles.mean(axis=0) for r in results], axis=0)


def cmd_slack_profile(args) -> int:
    overrides = parse_overrides(args.set)
    config = build_config(args.mode, overrides)
    post = build_config("post_hoc_only", overrides)
    scenarios = _scenarios(args.name, args.seeds, overrides)
    out = out_dir(args.out)
    configs = [config] if config.mode == "post_hoc_only" else [config, post]
    results = run_battery(scenarios, configs, _workers(args.workers))
    prof = slack_profile([r for r in results if r.mode == config.mode])
    post_rate = float(slack_profile([r for r in results if r.mode == "post_hoc_only"])[-1])
    T = config.schedule.T
    rows = [{"denoise_step": i + 1, "t": T - i, "rate": float(prof[i])} for i in range(T)]
    stem = f"slack_profile_{args.name}_{config.mode}"
    (out / f"{stem}.csv").write_text(_csv_text(rows, ["denoise_step", "t", "rate"]))
    doc = {"command": "slack-profile", "battery": args.name, "seeds": args.seeds, "mode": config.mode,
           "config": config_record(config, overrides), "profile": rows,
           "post_hoc_only_rate": post_rate}
    (out / f"{stem}.json").write_text(dumps(doc, indent=2) + "\n")
    print(f"{args.name} mode={config.mode} first={prof[0]:.4f} last={prof[-1]:.4f} post_hoc_only={post_rate:.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="barrierdiff", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./{DEFAULT_OUT})")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="parameter override (repeatable)")

    r = sub.add_parser("run", help="run one scenario")
    r.add_argument("--scenario", required=True, help="scenario JSON file or builtin name such as headon-3")
    r.add_argument("--mode", default="full", help=f"one of {', '.join(MODES)}")
    r.add_argument("--seed", type=int, default=None)
    common(r)
    r.set_defaults(func=cmd_run)

    b = sub.add_parser("battery", help="run a scenario battery for several planner modes")
    b.add_argument("--name", required=True, help=f"one of {', '.join(sorted(BATTERIES))}")
    b.add_argument("--modes", default="full,post_hoc_only")
    b.add_argument("--seeds", type=int, default=30)
    b.add_argument("--workers", type=int, default=None, help="process pool size (default: logical cores)")
    common(b)
    b.set_defaults(func=cmd_battery)

    s = sub.add_parser("slack-profile", help="average slack activation rate per denoising step")
    s.add_argument("--name", required=True)
    s.add_argument("--mode", default="full")
    s.add_argument("--seeds", type=int, default=30)
    s.add_argument("--workers", type=int, default=None)
    common(s)
    s.set_defaults(func=cmd_slack_profile)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (UsageError, ScenarioError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: invalid configuration: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
