"""Command-line experiment runner: fit, train, eval-scenes, grid-search, synth-profiles."""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Optional

import numpy as np

from .config import RunConfig, ConfigError, build_config, resolve_output, write_echo
from .autodiff import NonFiniteError
from .devices import load_curves
from .env import MultiMicrogridEnv
from .market import PriceSchedule, default_schedule
from .profiles import ARCHETYPES, load_csv, synthesize, write_csv
from .masac import DivergenceError
from .runner import Trainer, write_curves
from .surrogate import FitConfig, fit_curve, fit_report_dict, synthetic_samples

CONVERGENCE_GAIN = 0.30  # trained cost must sit this far below the random baseline
SCENE_COLUMNS = ["mg", "scene", "cost", "grid_kwh", "cash", "seed"]
SURFACE_COLUMNS = ["lr_alpha", "alpha_init", "agent_id", "final_return", "eval_cost", "random_cost",
                   "converged"]
DEFAULT_CELL = (3e-3, math.log(0.01))  # (lr_alpha, alpha_init)


class CliError(RuntimeError):
    pass


# ---------------------------------------------------------------- fit

def run_fit(curve_name: str, net_kind: str = "mixed", seed: int = 0, out: Optional[Path] = None,
            epochs: int = 3000, n_samples: int = 400) -> dict:
    curves = load_curves()
    if curve_name not in curves:
        raise CliError(f"unknown curve {curve_name!r}; available: {sorted(curves)}")
    if net_kind not in ("mixed", "mlp"):
        raise CliError(f"unknown net kind {net_kind!r}; available: ['mixed', 'mlp']")
    x, y = synthetic_samples(curves[curve_name], n=n_samples, seed=seed)
    res = fit_curve(x, y, net_kind=net_kind, seed=seed, config=FitConfig(epochs=epochs))
    report = fit_report_dict(curve_name, net_kind, seed, res.report)
    report["train_r2"] = res.train_report.r2
    report["epochs"] = epochs
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "fit-report.json").write_text(json.dumps(report, indent=2, sort_keys=True))
        test = np.array(res.split["test"])
        pred = res.model.predict(x)
        truth = curves[curve_name].relative_array(x)
        order = np.argsort(x)
        with open(out / "predictions.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y_sample", "y_true", "y_pred", "split"])
            test_set = set(test.tolist())
            for i in order:
                w.writerow([f"{x[i]:.10g}", f"{y[i]:.10g}", f"{truth[i]:.10g}", f"{pred[i]:.10g}",
                            "test" if int(i) in test_set else "train"])
        res.model.save(out / "surrogate.json")
    return report


# ---------------------------------------------------------------- shared setup

def _profiles(cfg: RunConfig) -> tuple:
    """Training days and held-out evaluation days."""
    if cfg.profile_csv:
        days = load_csv(cfg.profile_csv)
        return days, days
    train = synthesize(cfg.profile_days, cfg.seed, cfg.profile_archetype)
    held = synthesize(cfg.eval_days, cfg.seed + cfg.eval_seed_offset, cfg.profile_archetype)
    return train, held


def make_trainer(cfg: RunConfig, scene: Optional[int] = None) -> tuple:
    curves = load_curves()
    schedule = PriceSchedule.load(cfg.price_file) if cfg.price_file else default_schedule()
    train_days, held_days = _profiles(cfg)
    env_cfg = replace(cfg.env(), scene=scene or cfg.scene)
    env = MultiMicrogridEnv(train_days, env_cfg, curves, schedule)
    held = MultiMicrogridEnv(held_days, env_cfg, curves, schedule)
    tcfg = replace(cfg.train(), scene=scene or cfg.scene)
    return Trainer(env, cfg.sac(), tcfg), held


def _summary(totals: dict) -> dict:
    return {"cost": float(totals["cost"]), "cash": float(totals["cash"]), "penalty": float(totals["penalty"]),
            "mg_cost": [float(v) for v in totals["mg_cost"]], "mg_cash": [float(v) for v in totals["mg_cash"]],
            "mg_grid_kwh": [float(v) for v in totals["mg_grid_kwh"]], "days": totals["days"]}


# ---------------------------------------------------------------- train

def run_train(cfg: RunConfig, out: Path, log=None, scene: Optional[int] = None) -> dict:
    """Train all agents, keep checkpoints and curves, and score the result against random play."""
    trainer, held = make_trainer(cfg, scene)
    days = range(len(held.profiles))
    random_totals = trainer.evaluate(days, policy="random", env=held)
    t0 = time.time()
    every = max(cfg.checkpoint_every, 1)
    episodes = cfg.episodes
    done = 0
    stopped = None
    while done < episodes:
        chunk = min(every, episodes - done)
        # train in chunks so partial artifacts survive a divergence or time-out
        for ep in range(done, done + chunk):
            trainer.episode = ep
            try:
                res = trainer.run_episode(learn=True)
            except (DivergenceError, NonFiniteError) as exc:  # keep what exists so far
                stopped = f"episode {ep}: {exc}"
                break
            trainer._log_curves(ep, res)
            if log and (ep % 10 == 0 or ep == episodes - 1):
                log(f"episode {ep} cost {res['cost']:.1f} elapsed {time.time() - t0:.0f}s")
            if cfg.max_seconds and time.time() - t0 > cfg.max_seconds:
                stopped = f"time budget {cfg.max_seconds}s reached after episode {ep}"
                break
        done = ep + 1 if stopped is None or 'time budget' in stopped else ep
        write_curves(trainer.curves, out / "curves.csv")
        (out / "checkpoint.json").write_text(json.dumps(trainer.checkpoint()))
        if stopped:
            break
    trained_totals = trainer.evaluate(days, policy="learned", env=held)
    result = {"random": _summary(random_totals), "trained": _summary(trained_totals),
              "episodes_completed": done, "stopped_early": stopped,
              "improvement": 1.0 - trained_totals["cost"] / random_totals["cost"]}
    result["converged"] = bool(result["improvement"] >= CONVERGENCE_GAIN)
    (out / "eval.json").write_text(json.dumps(result, indent=2, sort_keys=True))
    (out / "run-meta.json").write_text(json.dumps({"wall_seconds": time.time() - t0}))
    return result


# ---------------------------------------------------------------- scenes

def run_eval_scenes(cfg: RunConfig, out: Path, checkpoint: Optional[str] = None, log=None) -> list:
    """Per-MG 30-day cost and main-grid energy for each scene.

    Scene 1 reuses ``checkpoint`` when one is given; scenes 2 and 3 are always
    retrained under their own masks.
    """
    rows = []
    for scene in (1, 2, 3):
        sub = out / f"scene{scene}"
        sub.mkdir(parents=True, exist_ok=True)
        if scene == 1 and checkpoint:
            trainer, held = make_trainer(cfg, scene)
            trainer.load_checkpoint(json.loads(Path(checkpoint).read_text()))
            totals = _summary(trainer.evaluate(range(len(held.profiles)), env=held))
        else:
            totals = run_train(cfg, sub, log=log, scene=scene)["trained"]
        for m in range(3):
            rows.append({"mg": m + 1, "scene": scene, "cost": totals["mg_cost"][m],
                         "grid_kwh": totals["mg_grid_kwh"][m], "cash": totals["mg_cash"][m], "seed": cfg.seed})
    write_scene_table(rows, out / "scenes.csv")
    return rows


def write_scene_table(rows: list, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SCENE_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{r[k]:.6f}" if isinstance(r[k], float) else r[k]) for k in SCENE_COLUMNS})


def read_scene_table(path) -> list:
    with open(path, newline="") as fh:
        return [{"mg": int(r["mg"]), "scene": int(r["scene"]), "cost": float(r["cost"]),
                 "grid_kwh": float(r["grid_kwh"]), "cash": float(r["cash"]), "seed": int(r["seed"])}
                for r in csv.DictReader(fh)]


def format_scene_table(rows: list) -> str:
    lines = ["MG   | scene | cost ($)     | grid (kWh)"]
    for r in rows:
        lines.append(f"MG{r['mg']}  | {r['scene']:5d} | {r['cost']:12.2f} | {r['grid_kwh']:10.1f}")
    return "\n".join(lines)


# ---------------------------------------------------------------- grid search

def _grid_cell(args: tuple) -> list:
    cfg_dict, lr_alpha, alpha_init, out = args
    cfg = build_config(overrides={**cfg_dict, "lr_alpha": lr_alpha, "alpha_init": alpha_init})
    cell = Path(out) / f"lr{lr_alpha:g}_init{alpha_init:+.4f}"
    cell.mkdir(parents=True, exist_ok=True)
    res = run_train(cfg, cell)
    curves = _read_returns(cell / "curves.csv")
    rows = []
    for agent_id, rets in sorted(curves.items()):
        tail = rets[-max(1, len(rets) // 10):]
        rows.append({"lr_alpha": lr_alpha, "alpha_init": alpha_init, "agent_id": agent_id,
                     "final_return": float(np.mean(tail)), "eval_cost": res["trained"]["cost"],
                     "random_cost": res["random"]["cost"], "converged": int(res["converged"])})
    return rows


def _read_returns(path: Path) -> dict:
    out: dict = {}
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            out.setdefault(int(r["agent_id"]), []).append(float(r["return"]))
    return out


def run_grid_search(cfg: RunConfig, out: Path, lr_alpha_grid, alpha_init_grid, workers: int = 1) -> list:
    if not lr_alpha_grid or not alpha_init_grid:
        raise CliError("both grids must be non-empty")
    cells = [(float(la), float(ai)) for la in lr_alpha_grid for ai in alpha_init_grid]
    if not any(math.isclose(la, DEFAULT_CELL[0]) and math.isclose(ai, DEFAULT_CELL[1]) for la, ai in cells):
        cells.append(DEFAULT_CELL)  # the default temperature setting is always part of the surface
    base = {k: v for k, v in cfg.to_dict().items() if k not in ("lr_alpha", "alpha_init")}
    jobs = [(base, la, ai, str(out)) for la, ai in cells]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_grid_cell, jobs))
    else:
        parts = [_grid_cell(j) for j in jobs]
    rows = [r for p in parts for r in p]
    with open(out / "surface.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SURFACE_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{r[k]:.10g}" if isinstance(r[k], float) else r[k]) for k in SURFACE_COLUMNS})
    return rows


def read_surface(path) -> list:
    with open(path, newline="") as fh:
        return [{"lr_alpha": float(r["lr_alpha"]), "alpha_init": float(r["alpha_init"]),
                 "agent_id": int(r["agent_id"]), "final_return": float(r["final_return"]),
                 "eval_cost": float(r["eval_cost"]), "random_cost": float(r["random_cost"]),
                 "converged": bool(int(r["converged"]))} for r in csv.DictReader(fh)]


# ---------------------------------------------------------------- argument parsing

def _floats(text: str) -> list:
    out = []
    for tok in text.split(","):
        tok = tok.strip()
        if tok.startswith("log(") and tok.endswith(")"):
            out.append(math.log(float(tok[4:-1])))
        elif tok:
            out.append(float(tok))
    return out


def _run_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with RunConfig keys")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any RunConfig key; repeatable")
    p.add_argument("--seed", type=int)
    p.add_argument("--episodes", type=int)
    p.add_argument("--scene", type=int)
    p.add_argument("--out", dest="output_dir")
    p.add_argument("--profile-csv", dest="profile_csv")


def _config_from(args) -> RunConfig:
    over = {k: getattr(args, k) for k in ("seed", "episodes", "scene", "output_dir", "profile_csv")}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        over[k.strip()] = v.strip()
    return build_config(args.config, over)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mmgsim", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit a curve surrogate and write its report")
    p.add_argument("--curve", required=True)
    p.add_argument("--net", default="mixed", choices=["mixed", "mlp"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=3000)
    p.add_argument("--out", default="runs/fit")

    p = sub.add_parser("train", help="train all agents")
    _run_options(p)

    p = sub.add_parser("eval-scenes", help="per-scene cost and grid-energy table")
    _run_options(p)
    p.add_argument("--checkpoint", help="scene-1 checkpoint.json from a train run")

    p = sub.add_parser("grid-search", help="temperature learning-rate / initial-value sweep")
    _run_options(p)
    p.add_argument("--lr-alpha-grid", type=_floats, default=[3e-4, 3e-3, 3e-2])
    p.add_argument("--alpha-init-grid", type=_floats, default=[math.log(0.01), 0.0, math.log(10.0)])
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("synth-profiles", help="write synthetic day profiles as CSV")
    p.add_argument("--days", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--archetype", default="winter", choices=sorted(ARCHETYPES))
    p.add_argument("--out", default="runs/profiles.csv")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    log = lambda msg: print(msg, file=sys.stderr, flush=True)
    try:
        if args.command == "fit":
            out = resolve_output(args.out)
            write_echo(out, "fit", {"curve": args.curve, "net": args.net, "seed": args.seed,
                                    "epochs": args.epochs})
            report = run_fit(args.curve, args.net, args.seed, out, epochs=args.epochs)
            print(json.dumps(report, sort_keys=True))
        elif args.command == "synth-profiles":
            path = Path(args.out)
            if not path.is_absolute():
                path = resolve_output(str(path.parent or ".")) / path.name
            path.parent.mkdir(parents=True, exist_ok=True)
            write_csv(synthesize(args.days, args.seed, args.archetype), path)
            print(json.dumps({"written": str(path), "days": args.days}))
        else:
            cfg = _config_from(args)
            out = resolve_output(cfg.output_dir)
            write_echo(out, args.command, cfg.to_dict())
            if args.command == "train":
                res = run_train(cfg, out, log=log)
                print(json.dumps({k: res[k] for k in ("improvement", "converged", "episodes_completed",
                                                       "stopped_early")}))
            elif args.command == "eval-scenes":
                rows = run_eval_scenes(cfg, out, args.checkpoint, log=log)
                print(format_scene_table(rows))
            else:
                rows = run_grid_search(cfg, out, args.lr_alpha_grid, args.alpha_init_grid, args.workers)
                print(json.dumps({"rows": len(rows), "surface": str(out / "surface.csv")}))
    except (CliError, ConfigError, KeyError, ValueError, OSError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
