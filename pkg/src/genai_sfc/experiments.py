"""Scenario configs, the agent x DC-count x request-count sweep, and metric export.

Config files are YAML. Top-level sections map onto dataclasses below; every
mapping is checked against the dataclass fields so a misspelt key fails loudly
with the line it sits on.
"""

from __future__ import annotations

import csv
import dataclasses
import itertools
import json
import logging
import typing
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from . import dqn, genai
from .catalog import DEFAULT_CATALOG, Catalog
from .heuristic import HeuristicPolicy
from .model import RunMetrics, acceptance_ratio
from .nn import CheckpointError
from .sim import SfcEnv, SimConfig, random_dc_selector, run_episode

log = logging.getLogger(__name__)

AGENTS = ("heuristic", "drl", "genai-drl")


class ParseError(ValueError):
    def __init__(self, msg: str, line: int | None = None, field: str | None = None):
        self.line, self.field = line, field
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}{msg}")


class ValidationError(ValueError):
    def __init__(self, field: str, msg: str):
        self.field = field
        super().__init__(f"{field}: {msg}")


@dataclass
class Checkpoints:
    dqn: str | None = None
    vae: str | None = None
    value: str | None = None
    dataset: str | None = None


@dataclass
class SweepAxes:
    dc_counts: tuple[int, ...] = (2, 4, 6, 8)
    request_counts: tuple[int, ...] = (1, 2, 3, 4, 5)
    seeds: tuple[int, ...] = (0,)


@dataclass
class DqnTraining:
    blocks: int = 10
    dc_counts: tuple[int, ...] = (2,)
    multipliers: tuple[int, ...] = (1,)
    bundle_scale: float = 0.5


@dataclass
class DatasetSpec:
    rows: int = 5000
    dc_counts: tuple[int, ...] = (4,)
    multipliers: tuple[int, ...] = (1,)
    max_episodes: int = 50


@dataclass
class ScenarioConfig:
    sim: SimConfig = field(default_factory=SimConfig)
    agents: tuple[str, ...] = AGENTS
    checkpoints: Checkpoints = field(default_factory=Checkpoints)
    sweep: SweepAxes = field(default_factory=SweepAxes)
    out_dir: str = "results"
    workers: int = 1
    mask_invalid: bool = False  # drl / genai-drl only: never pick a code the simulator rejects
    dqn: dqn.DqnConfig = field(default_factory=dqn.DqnConfig)
    dqn_training: DqnTraining = field(default_factory=DqnTraining)
    genai: genai.GenAiConfig = field(default_factory=genai.GenAiConfig)
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    # per-VNF demand overrides, e.g. {"NAT": {"cpu_demand": 2.0}}
    vnfs: dict = field(default_factory=dict)

    def catalog(self) -> Catalog:
        if not self.vnfs:
            return DEFAULT_CATALOG
        entries = []
        for v in DEFAULT_CATALOG.vnfs:
            over = self.vnfs.get(v.vnf_type, {})
            entries.append(replace(v, **over) if over else v)
        return Catalog(tuple(entries), DEFAULT_CATALOG.sfcs)

    def validate(self):
        known = {v.vnf_type for v in DEFAULT_CATALOG.vnfs}
        demand_keys = {"cpu_demand", "storage_demand", "ram_demand", "proc_time"}
        for name, over in self.vnfs.items():
            if name not in known:
                raise ValidationError("vnfs", f"unknown VNF type {name!r}")
            if not isinstance(over, dict) or set(over) - demand_keys:
                raise ValidationError(f"vnfs.{name}", f"expected a mapping with keys from {sorted(demand_keys)}")
        try:
            self.catalog()
        except ValueError as e:
            raise ValidationError("vnfs", str(e)) from e
        for a in self.agents:
            if a not in AGENTS:
                raise ValidationError("agents", f"unknown agent {a!r}; expected one of {AGENTS}")
        if not self.agents:
            raise ValidationError("agents", "must not be empty")
        if not self.sweep.seeds:
            raise ValidationError("sweep.seeds", "must not be empty")
        for d in self.sweep.dc_counts:
            if d < 2:
                raise ValidationError("sweep.dc_counts", f"{d} < 2")
        for r in self.sweep.request_counts:
            if r < 1:
                raise ValidationError("sweep.request_counts", f"{r} < 1")
        if self.workers < 1:
            raise ValidationError("workers", "must be >= 1")
        return self

    def require_checkpoints(self):
        """Learned agents need their checkpoint files on disk."""
        needed = []
        if {"drl", "genai-drl"} & set(self.agents):
            needed.append(("dqn", self.checkpoints.dqn))
        if "genai-drl" in self.agents:
            needed += [("vae", self.checkpoints.vae), ("value", self.checkpoints.value)]
        for name, path in needed:
            if not path:
                raise CheckpointError(f"checkpoints.{name} is not set")
            if not Path(path).is_file():
                raise CheckpointError(f"checkpoints.{name}: {path} does not exist")


# -- parsing -------------------------------------------------------------------------------

def _key_lines(node, prefix="") -> dict[str, int]:
    lines = {}
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            path = f"{prefix}.{k.value}" if prefix else str(k.value)
            lines[path] = k.start_mark.line + 1
            lines.update(_key_lines(v, path))
    return lines


def _build(cls, data, path: str, lines: dict[str, int]):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ParseError(f"{path or 'top level'} must be a mapping", lines.get(path), path)
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        p = f"{path}.{key}" if path else str(key)
        if key not in names:
            raise ParseError(f"unknown key {p!r}", lines.get(p), p)
        hint = hints[key]
        if dataclasses.is_dataclass(hint):
            value = _build(hint, value, p, lines)
        elif typing.get_origin(hint) is tuple and isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ValidationError(path or cls.__name__, str(e)) from e


def parse_config_text(text: str) -> ScenarioConfig:
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.MarkedYAMLError as e:
        line = e.problem_mark.line + 1 if e.problem_mark else None
        raise ParseError(str(e.problem), line) from e
    lines = _key_lines(node) if node is not None else {}
    return _build(ScenarioConfig, data, "", lines).validate()


def parse_config(path) -> ScenarioConfig:
    path = Path(path)
    if not path.is_file():
        raise ParseError(f"{path}: no such config file")
    return parse_config_text(path.read_text())


# -- running cells -------------------------------------------------------------------------

@dataclass(frozen=True)
class Cell:
    agent: str
    dc_count: int
    request_count: int
    seed: int


class _Models:
    """Checkpoints loaded once per process."""

    def __init__(self, ckpt: Checkpoints):
        self.ckpt = ckpt
        self._cache = {}

    def get(self, name: str):
        if name not in self._cache:
            path = getattr(self.ckpt, name)
            if not path:
                raise CheckpointError(f"checkpoints.{name} is not set")
            loader = {"dqn": dqn.load, "vae": genai.load_vae, "value": genai.load_value}[name]
            self._cache[name] = loader(path)
        return self._cache[name]


def build_policy(agent: str, models: _Models, cfg: ScenarioConfig, seed: int):
    """Return ``(dc_selector, action_agent)`` for one episode."""
    if agent == "heuristic":
        h = HeuristicPolicy()
        return h.select_dc, h.act
    net = models.get("dqn")
    act = dqn.DqnAgent(net, cfg.dqn.features, 0.0, np.random.default_rng([seed, 2]),
                       cfg.mask_invalid)
    if agent == "drl":
        return random_dc_selector(np.random.default_rng([seed, 1])), act
    sel = genai.GenAiSelector(models.get("vae"), models.get("value"), cfg.genai.features)
    return sel, act


def metrics_row(cell: Cell, m: RunMetrics) -> dict:
    per_type = m.per_type_ratio()
    return {
        "agent": cell.agent, "dc_count": cell.dc_count,
        "request_count": cell.request_count, "seed": cell.seed,
        "acc_ratio": acceptance_ratio(m),
        "per_type_acc": per_type,
        "mean_e2e_ms": m.mean_e2e(),
        "throughput_gbps": m.throughput_gbps,
        "generated": dict(m.generated), "accepted": dict(m.accepted),
        "dropped": dict(m.dropped),
        "pending": {s: m.pending(s) for s in m.sfc_names},
        "tick_budget_exhausted": m.tick_budget_exhausted, "ticks": m.ticks,
        "error": None,
    }


def run_cell(cell: Cell, cfg: ScenarioConfig, models: _Models | None = None) -> dict:
    models = models or _Models(cfg.checkpoints)
    try:
        select, act = build_policy(cell.agent, models, cfg, cell.seed)
    except CheckpointError as e:
        return {"agent": cell.agent, "dc_count": cell.dc_count,
                "request_count": cell.request_count, "seed": cell.seed, "error": str(e)}
    sim = replace(cfg.sim, dc_count=cell.dc_count, request_count_multiplier=cell.request_count,
                  seed=cell.seed)
    return metrics_row(cell, run_episode(SfcEnv(sim, cfg.catalog()), select, act))


def cells(cfg: ScenarioConfig) -> list[Cell]:
    s = cfg.sweep
    return [Cell(*c) for c in itertools.product(cfg.agents, s.dc_counts, s.request_counts, s.seeds)]


_worker_models: _Models | None = None


def _worker(args):
    global _worker_models
    cell, cfg = args
    if _worker_models is None or _worker_models.ckpt != cfg.checkpoints:
        _worker_models = _Models(cfg.checkpoints)
    return run_cell(cell, cfg, _worker_models)


def _key(row: dict):
    return (AGENTS.index(row["agent"]), row["dc_count"], row["request_count"], row["seed"])


def run_sweep(cfg: ScenarioConfig) -> list[dict]:
    """One episode per (agent, dc_count, request_count, seed); rows come back sorted."""
    todo = cells(cfg)
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            rows = list(pool.map(_worker, [(c, cfg) for c in todo]))
    else:
        models = _Models(cfg.checkpoints)
        rows = [run_cell(c, cfg, models) for c in todo]
    for r in rows:
        if r["error"]:
            log.warning("cell %s/%d/%d/%d failed: %s", r["agent"], r["dc_count"],
                        r["request_count"], r["seed"], r["error"])
    return sorted(rows, key=_key)


# -- aggregation and export ----------------------------------------------------------------

SUMMARY_FIELDS = ["agent", "dc_count", "request_count", "n_seeds", "n_errors",
                  "acc_ratio_mean", "acc_ratio_std", "throughput_gbps_mean",
                  "throughput_gbps_std"]


def summarize(rows: list[dict], sfc_names=None) -> list[dict]:
    groups: dict[tuple, list[dict]] = {}
    for r in sorted(rows, key=_key):
        groups.setdefault((r["agent"], r["dc_count"], r["request_count"]), []).append(r)
    out = []
    for (agent, dc, rc), rs in groups.items():
        ok = [r for r in rs if not r["error"]]
        acc = np.array([r["acc_ratio"] for r in ok])
        thr = np.array([r["throughput_gbps"] for r in ok])
        row = {"agent": agent, "dc_count": dc, "request_count": rc,
               "n_seeds": len(ok), "n_errors": len(rs) - len(ok),
               "acc_ratio_mean": float(acc.mean()) if ok else None,
               "acc_ratio_std": float(acc.std()) if ok else None,
               "throughput_gbps_mean": float(thr.mean()) if ok else None,
               "throughput_gbps_std": float(thr.std()) if ok else None}
        names = sfc_names or (list(ok[0]["per_type_acc"]) if ok else [])
        for s in names:
            vals = [r["per_type_acc"][s] for r in ok if r["per_type_acc"].get(s) is not None]
            row[f"acc_{s}"] = float(np.mean(vals)) if vals else None
            e2e = [r["mean_e2e_ms"][s] for r in ok if r["mean_e2e_ms"].get(s) is not None]
            row[f"e2e_ms_{s}"] = float(np.mean(e2e)) if e2e else None
        out.append(row)
    return out


def cell_filename(agent: str, dc_count: int, request_count: int) -> str:
    return f"{agent}_dc{dc_count}_rc{request_count}.jsonl"


def dump_line(row: dict) -> str:
    return json.dumps(row, sort_keys=True, allow_nan=False)


def export_metrics(rows: list[dict], out_dir) -> list[Path]:
    """Write one JSON-lines file per (agent, dc_count, request_count) and ``summary.csv``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    by_cell: dict[str, list[dict]] = {}
    for r in sorted(rows, key=_key):
        by_cell.setdefault(cell_filename(r["agent"], r["dc_count"], r["request_count"]), []).append(r)
    for name, rs in by_cell.items():
        p = out_dir / name
        p.write_text("".join(dump_line(r) + "\n" for r in rs))
        written.append(p)
    summary = summarize(rows)
    header = list(SUMMARY_FIELDS)
    for s in summary:
        header += [k for k in s if k not in header]
    p = out_dir / "summary.csv"
    with open(p, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=header, lineterminator="\n")
        w.writeheader()
        for s in summary:
            w.writerow({k: ("" if v is None else v) for k, v in s.items()})
    written.append(p)
    return written


def read_metrics(out_dir) -> list[dict]:
    rows = []
    for p in sorted(Path(out_dir).glob("*.jsonl")):
        rows += [json.loads(line) for line in p.read_text().splitlines() if line]
    return sorted(rows, key=_key)
