"""Command line entry point: ``python -m genai_sfc <command> --config cfg.yaml``.

Every command writes JSON-lines (and, where relevant, checkpoints) under
``--out``. Exit codes: 0 success, 2 config error, 3 checkpoint error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import dqn, genai, nn
from .experiments import (
    Cell, ParseError, ScenarioConfig, SweepAxes, ValidationError, dump_line, export_metrics,
    parse_config, run_cell, run_sweep,
)

log = logging.getLogger("genai_sfc")

EXIT_CONFIG = 2
EXIT_CHECKPOINT = 3


def _write_lines(path: Path, rows) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(dump_line(r) + "\n" for r in rows))
    return path


def _seed(args, default: int) -> int:
    return default if args.seed is None else args.seed


def _agent(cfg: ScenarioConfig) -> dqn.DqnAgent:
    if not cfg.checkpoints.dqn:
        raise nn.CheckpointError("checkpoints.dqn is not set")
    return dqn.DqnAgent(dqn.load(cfg.checkpoints.dqn), cfg.dqn.features, 0.0, mask_invalid=cfg.mask_invalid)


def cmd_simulate(cfg: ScenarioConfig, args, out: Path):
    seed = _seed(args, cfg.sim.seed)
    cfg.require_checkpoints()
    rows = [run_cell(Cell(a, cfg.sim.dc_count, cfg.sim.request_count_multiplier, seed), cfg)
            for a in cfg.agents]
    _write_lines(out / "simulate.jsonl", rows)
    for r in rows:
        print(f"{r['agent']}: acc_ratio {r['acc_ratio']:.3f}, throughput {r['throughput_gbps']:.3f} Gbps")


def cmd_evaluate(cfg: ScenarioConfig, args, out: Path):
    seeds = (args.seed,) if args.seed is not None else cfg.sweep.seeds
    cfg = replace(cfg, sweep=SweepAxes((cfg.sim.dc_count,), (cfg.sim.request_count_multiplier,), seeds))
    cfg.require_checkpoints()
    rows = run_sweep(cfg)
    export_metrics(rows, out)
    for a in cfg.agents:
        acc = [r["acc_ratio"] for r in rows if r["agent"] == a]
        print(f"{a}: mean acc_ratio {np.mean(acc):.3f} over {len(acc)} seeds")


def cmd_sweep(cfg: ScenarioConfig, args, out: Path):
    if args.seed is not None:
        cfg = replace(cfg, sweep=replace(cfg.sweep, seeds=(args.seed,)))
    rows = run_sweep(cfg)
    export_metrics(rows, out)
    failed = [r for r in rows if r["error"]]
    print(f"{len(rows)} cells, {len(failed)} failed; results in {out}")
    return EXIT_CHECKPOINT if failed else 0


def cmd_train_dqn(cfg: ScenarioConfig, args, out: Path):
    t = cfg.dqn_training
    scen = dqn.TrainScenario(sim=replace(cfg.sim, bundle_scale=t.bundle_scale),
                             dc_counts=t.dc_counts, multipliers=t.multipliers,
                             catalog=cfg.catalog())
    net, curve = dqn.train_dqn(cfg.dqn, scen, t.blocks, seed=_seed(args, cfg.sim.seed))
    out.mkdir(parents=True, exist_ok=True)
    dqn.save(net, out / "dqn.gsnn")
    _write_lines(out / "train_dqn.jsonl", curve)
    n = max(1, len(curve) // 10)
    first = np.mean([c["reward"] for c in curve[:n]])
    last = np.mean([c["reward"] for c in curve[-n:]])
    print(f"{len(curve)} episodes; first-decile reward {first:.1f}, last-decile {last:.1f}")


def cmd_collect_dataset(cfg: ScenarioConfig, args, out: Path):
    d = cfg.dataset
    ds = genai.collect_dataset(cfg.sim, _agent(cfg), d.rows, seed=_seed(args, cfg.sim.seed),
                               cfg=cfg.genai, max_episodes=d.max_episodes,
                               dc_counts=d.dc_counts, multipliers=d.multipliers,
                               catalog=cfg.catalog())
    out.mkdir(parents=True, exist_ok=True)
    genai.save_dataset(out / "dataset.gsds", ds)
    _write_lines(out / "collect_dataset.jsonl", [{
        "rows": len(ds), "state_dim": int(ds.state.shape[1]),
        "value_mean": float(ds.value.mean()), "value_std": float(ds.value.std())}])
    print(f"{len(ds)} rows -> {out / 'dataset.gsds'}")


def _dataset(cfg: ScenarioConfig) -> genai.Dataset:
    if not cfg.checkpoints.dataset:
        raise nn.CheckpointError("checkpoints.dataset is not set")
    try:
        return genai.load_dataset(cfg.checkpoints.dataset)
    except (OSError, ValueError) as e:
        raise nn.CheckpointError(str(e)) from e


def cmd_train_vae(cfg: ScenarioConfig, args, out: Path):
    g = cfg.genai
    ds = _dataset(cfg)
    seed = _seed(args, cfg.sim.seed)
    model = genai.VaeModel(ds.state.shape[1], g.latent, g.hidden, g.beta, seed=seed)
    curve = genai.train_vae(model, ds, g.vae_epochs, batch_size=g.batch_size, seed=seed, lr=g.lr)
    out.mkdir(parents=True, exist_ok=True)
    genai.save_vae(model, out / "vae.gsnn")
    _write_lines(out / "train_vae.jsonl", curve)
    print(f"held-out recon {curve[0]['heldout_recon']:.5f} -> {curve[-1]['heldout_recon']:.5f}")


def cmd_train_value(cfg: ScenarioConfig, args, out: Path):
    g = cfg.genai
    ds = _dataset(cfg)
    if not cfg.checkpoints.vae:
        raise nn.CheckpointError("checkpoints.vae is not set")
    model = genai.load_vae(cfg.checkpoints.vae)
    seed = _seed(args, cfg.sim.seed)
    value = genai.ValueNetwork(model.latent, g.value_hidden, seed=seed)
    curve = genai.train_value(value, model, ds, g.value_epochs, batch_size=g.batch_size,
                              seed=seed, lr=g.lr)
    out.mkdir(parents=True, exist_ok=True)
    genai.save_value(value, out / "value.gsnn")
    _write_lines(out / "train_value.jsonl", curve)
    print(f"value loss {curve[0]['loss']:.4f} -> {curve[-1]['loss']:.4f}")


COMMANDS = {
    "simulate": cmd_simulate,
    "collect-dataset": cmd_collect_dataset,
    "train-dqn": cmd_train_dqn,
    "train-vae": cmd_train_vae,
    "train-value": cmd_train_value,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="genai-sfc", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", type=Path, help="YAML scenario file (defaults if omitted)")
        s.add_argument("--seed", type=int, help="overrides the seed(s) in the config")
        s.add_argument("--out", type=Path, help="output directory (default: out_dir from config)")
        for ck in ("dqn", "vae", "value", "dataset"):
            s.add_argument(f"--{ck}", type=Path, help=f"overrides checkpoints.{ck}")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = parse_config(args.config) if args.config else ScenarioConfig()
    except (ParseError, ValidationError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    overrides = {k: str(getattr(args, k)) for k in ("dqn", "vae", "value", "dataset")
                 if getattr(args, k) is not None}
    if overrides:
        cfg = replace(cfg, checkpoints=replace(cfg.checkpoints, **overrides))
    out = args.out or Path(cfg.out_dir)
    try:
        return COMMANDS[args.command](cfg, args, out) or 0
    except nn.CheckpointError as e:
        print(f"checkpoint error: {e}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except genai.DatasetTooSmall as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
