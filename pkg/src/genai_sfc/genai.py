"""VAE next-state model, DC value network and the max-value DC selector."""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import nn
from .catalog import DEFAULT_CATALOG, Catalog
from .features import FeatureConfig, dc_state_matrix, dims
from .model import PENDING
from .sim import EpisodeHook, SfcEnv, SimConfig, StepRecord, random_dc_selector, run_episode

log = logging.getLogger(__name__)

DATASET_MAGIC = b"GSDS"
DATASET_VERSION = 1


class DatasetTooSmall(RuntimeError):
    pass


class Diverged(RuntimeError):
    pass


@dataclass
class ValueWeights:
    allocations: float = 2.0
    urgency: float = 1.0
    resources: float = 0.5
    bandwidth: float = 0.5
    drops: float = 1.5


@dataclass
class GenAiConfig:
    latent: int = 16
    hidden: tuple[int, ...] = (64, 32)
    value_hidden: tuple[int, ...] = (32,)
    beta: float = 1.0
    lr: float = 1e-3
    batch_size: int = 128
    vae_epochs: int = 30
    value_epochs: int = 30
    weights: ValueWeights = field(default_factory=ValueWeights)
    features: FeatureConfig = field(default_factory=FeatureConfig)

    def __post_init__(self):
        self.hidden = tuple(self.hidden)
        self.value_hidden = tuple(self.value_hidden)
        if isinstance(self.weights, dict):
            self.weights = ValueWeights(**self.weights)
        if isinstance(self.features, dict):
            self.features = FeatureConfig(**self.features)
        if self.beta < 0:
            raise ValueError("beta must be non-negative")


def state_dim(n_vnf: int = 6, n_sfc: int = 6) -> int:
    d = dims(n_vnf, n_sfc)
    return d[0] + d[1]


class VaeModel(nn.Module):
    """Encodes a DC state to a Gaussian latent and decodes the DC's next state."""

    def __init__(self, state_dim: int = 53, latent: int = 16, hidden=(64, 32),
                 beta: float = 1.0, seed: int = 0, dtype=np.float32):
        rng = np.random.default_rng(seed)
        self.state_dim, self.latent, self.hidden, self.beta = state_dim, latent, tuple(hidden), beta
        self.encoder = nn.Stack([state_dim, *hidden], ["relu"] * len(hidden), rng, dtype)
        self.mu_head = nn.Dense(hidden[-1], latent, "linear", rng, dtype)
        self.logvar_head = nn.Dense(hidden[-1], latent, "linear", rng, dtype)
        back = list(reversed(hidden))
        self.decoder = nn.Stack([latent, *back, state_dim],
                                ["relu"] * len(back) + ["sigmoid"], rng, dtype)
        self.children = [self.encoder, self.mu_head, self.logvar_head, self.decoder]

    def encode(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        h = self.encoder.forward(x)
        return self.mu_head.forward(h), self.logvar_head.forward(h)

    def decode(self, z: np.ndarray) -> np.ndarray:
        return self.decoder.forward(z)

    def encoder_params(self) -> list[np.ndarray]:
        return self.encoder.params() + self.mu_head.params() + self.logvar_head.params()

    def meta(self) -> dict:
        return {"kind": "vae", "state_dim": self.state_dim, "latent": self.latent,
                "hidden": list(self.hidden), "beta": self.beta}

    @classmethod
    def from_meta(cls, meta: dict) -> "VaeModel":
        return cls(meta["state_dim"], meta["latent"], meta["hidden"], meta["beta"])


class VaeLoss(NamedTuple):
    total: float
    recon: float
    kl: float


def vae_loss(model: VaeModel, state: np.ndarray, next_state: np.ndarray,
             noise: np.ndarray, backward: bool = False) -> VaeLoss:
    """Reconstruction MSE of the predicted next state plus beta-weighted KL.

    With ``backward=True`` gradients are accumulated into the model.
    """
    mu, logvar = model.encode(state)
    z = nn.reparameterize(mu, logvar, noise)
    pred = model.decode(z)
    recon, g_pred = nn.mse(pred, next_state)
    kl, g_mu, g_lv = nn.kl_gaussian(mu, logvar)
    if backward:
        g_z = model.decoder.backward(g_pred)
        std = np.exp(0.5 * logvar)
        g_mu_total = g_z + model.beta * g_mu
        g_lv_total = g_z * noise * 0.5 * std + model.beta * g_lv
        g_h = model.mu_head.backward(g_mu_total) + model.logvar_head.backward(g_lv_total)
        model.encoder.backward(g_h)
    return VaeLoss(recon + model.beta * kl, recon, kl)


class ValueNetwork(nn.Module):
    """Scores VAE mean embeddings; labels are standardised internally."""

    def __init__(self, latent: int = 16, hidden=(32,), seed: int = 0, dtype=np.float32):
        rng = np.random.default_rng(seed)
        self.latent, self.hidden = latent, tuple(hidden)
        self.net = nn.Stack([latent, *hidden, 1], ["relu"] * len(hidden) + ["linear"], rng, dtype)
        self.children = [self.net]
        self.label_mean = 0.0
        self.label_std = 1.0

    def forward(self, z: np.ndarray) -> np.ndarray:
        return self.net.forward(z)[:, 0] * self.label_std + self.label_mean

    def meta(self) -> dict:
        return {"kind": "value", "latent": self.latent, "hidden": list(self.hidden),
                "label_mean": self.label_mean, "label_std": self.label_std}

    @classmethod
    def from_meta(cls, meta: dict) -> "ValueNetwork":
        v = cls(meta["latent"], meta["hidden"])
        v.label_mean, v.label_std = meta["label_mean"], meta["label_std"]
        return v


# -- value labels and dataset -------------------------------------------------------------

def compute_value_label(env: SfcEnv, dc_id: int, allocations: int, drops: int,
                        weights: ValueWeights | None = None) -> float:
    """Score a DC after a step.

    Combines allocations made there this step, the urgency of pending requests
    it could serve next, its free resources, its free incident bandwidth, and
    drops blamed on it this step.
    """
    w = weights or ValueWeights()
    dc = env.topology.datacenters[dc_id]
    urgency = 0.0
    p = np.flatnonzero(env.status == PENDING)
    if p.size:
        reach = env.reachable(p, [dc_id])[:, 0]
        idle = dc.installed - dc.busy
        usable = (idle > 0) | env.installable_matrix()[dc_id]
        ok = reach & usable[env.next_vnf[p]]
        slack_n = np.clip((env.deadline[p] - env.elapsed[p]) / env.deadline[p], 0.0, 1.0)
        urgency = float(np.sum(1.0 - slack_n[ok]))
    inc = env.topology.incident_free_fractions(dc_id)
    bw = float(inc.mean()) if inc.size else 1.0
    return (w.allocations * allocations + w.urgency * urgency
            + w.resources * float(np.mean(dc.free_fractions())) + w.bandwidth * bw
            - w.drops * drops)


class Dataset(NamedTuple):
    state: np.ndarray
    next_state: np.ndarray
    value: np.ndarray

    def __len__(self):
        return len(self.value)


class DatasetCollector(EpisodeHook):
    """Records (state, next state, value label) for the DC acted on at every step."""

    def __init__(self, fc: FeatureConfig, weights: ValueWeights):
        self.fc, self.weights = fc, weights
        self.states, self.next_states, self.values = [], [], []
        self._before = None

    def before(self, env: SfcEnv, dc_id: int):
        self._before = (dc_state_matrix(env, self.fc, [dc_id])[0],
                        int(env.alloc_count[dc_id]), int(env.drop_count[dc_id]))

    def after(self, env: SfcEnv, step: StepRecord):
        s, a0, d0 = self._before
        d = step.dc_id
        self.states.append(s)
        self.next_states.append(dc_state_matrix(env, self.fc, [d])[0])
        self.values.append(compute_value_label(env, d, int(env.alloc_count[d]) - a0,
                                               int(env.drop_count[d]) - d0, self.weights))

    def __len__(self):
        return len(self.values)

    def dataset(self) -> Dataset:
        return Dataset(np.array(self.states, np.float32), np.array(self.next_states, np.float32),
                       np.array(self.values, np.float32))


def collect_dataset(sim: SimConfig, action_agent, target_rows: int, seed: int = 0,
                    cfg: GenAiConfig | None = None, max_episodes: int = 50,
                    dc_counts=None, multipliers=None, catalog: Catalog = DEFAULT_CATALOG) -> Dataset:
    """Run episodes with uniformly random DC selection until ``target_rows`` rows exist."""
    cfg = cfg or GenAiConfig()
    rng = np.random.default_rng(seed)
    select = random_dc_selector(np.random.default_rng(rng.integers(2**31)))
    col = DatasetCollector(cfg.features, cfg.weights)
    for _ in range(max_episodes):
        conf = replace(sim, seed=int(rng.integers(2**31)),
                       dc_count=int(rng.choice(dc_counts)) if dc_counts else sim.dc_count,
                       request_count_multiplier=(int(rng.choice(multipliers)) if multipliers
                                                 else sim.request_count_multiplier))
        run_episode(SfcEnv(conf, catalog), select, action_agent, [col])
        if len(col) >= target_rows:
            return col.dataset()
    raise DatasetTooSmall(f"only {len(col)} rows after {max_episodes} episodes")


def save_dataset(path, ds: Dataset):
    path = Path(path)
    n, d = ds.state.shape
    table = np.concatenate([ds.state, ds.next_state, ds.value[:, None]], axis=1)
    with open(path, "wb") as f:
        f.write(DATASET_MAGIC + struct.pack("<III", DATASET_VERSION, n, d))
        f.write(np.ascontiguousarray(table, dtype="<f4").tobytes())
    schema = {"format": "little-endian float32 rows after a 16-byte header",
              "header": ["magic 'GSDS'", "uint32 version", "uint32 rows", "uint32 state_dim"],
              "row": [f"state[{d}]", f"next_state[{d}]", "value"],
              "version": DATASET_VERSION, "rows": n, "state_dim": d}
    path.with_suffix(path.suffix + ".schema.json").write_text(json.dumps(schema, indent=2))


def load_dataset(path) -> Dataset:
    data = Path(path).read_bytes()
    if data[:4] != DATASET_MAGIC:
        raise ValueError(f"{path}: not a dataset file")
    version, n, d = struct.unpack_from("<III", data, 4)
    if version != DATASET_VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    table = np.frombuffer(data, dtype="<f4", offset=16).reshape(n, 2 * d + 1).astype(np.float32)
    return Dataset(table[:, :d].copy(), table[:, d:2 * d].copy(), table[:, 2 * d].copy())


# -- training ---------------------------------------------------------------------------

def split(n: int, rng: np.random.Generator, holdout: float = 0.1):
    idx = rng.permutation(n)
    k = max(1, int(round(n * holdout)))
    return idx[k:], idx[:k]


def heldout_recon(model: VaeModel, state, next_state) -> float:
    mu, _ = model.encode(state)
    return nn.mse(model.decode(mu), next_state)[0]


def train_vae(model: VaeModel, ds: Dataset, epochs: int, adam: nn.Adam | None = None,
              batch_size: int = 128, seed: int = 0, lr: float = 1e-3) -> list[dict]:
    """Mini-batch training on a 90/10 split.

    Returns one record per epoch, epoch 0 being the untrained model:
    train recon and KL, and noise-free held-out reconstruction MSE.
    """
    rng = np.random.default_rng(seed)
    adam = adam or nn.Adam(model.params(), lr=lr)
    train, held = split(len(ds), rng)
    curve = [{"epoch": 0, "recon": None, "kl": None,
              "heldout_recon": heldout_recon(model, ds.state[held], ds.next_state[held])}]
    for epoch in range(1, epochs + 1):
        order = rng.permutation(train)
        recs, kls = [], []
        for i in range(0, len(order), batch_size):
            b = order[i:i + batch_size]
            noise = rng.standard_normal((len(b), model.latent)).astype(np.float32)
            model.zero_grad()
            loss = vae_loss(model, ds.state[b], ds.next_state[b], noise, backward=True)
            if not np.isfinite(loss.total):
                raise Diverged(f"non-finite VAE loss at epoch {epoch}")
            adam.step(model.grads())
            recs.append(loss.recon)
            kls.append(loss.kl)
        curve.append({"epoch": epoch, "recon": float(np.mean(recs)), "kl": float(np.mean(kls)),
                      "heldout_recon": heldout_recon(model, ds.state[held], ds.next_state[held])})
    return curve


def train_value(value_net: ValueNetwork, model: VaeModel, ds: Dataset, epochs: int,
                adam: nn.Adam | None = None, batch_size: int = 128, seed: int = 0,
                lr: float = 1e-3) -> list[dict]:
    """Regress value labels on frozen-encoder mean embeddings (no sampling)."""
    rng = np.random.default_rng(seed)
    adam = adam or nn.Adam(value_net.params(), lr=lr)
    mu, _ = model.encode(ds.state)
    mu = mu.astype(np.float32)
    value_net.label_mean = float(ds.value.mean())
    value_net.label_std = float(ds.value.std()) or 1.0
    y = ((ds.value - value_net.label_mean) / value_net.label_std).astype(np.float32)[:, None]
    curve = [{"epoch": 0, "loss": nn.mse(value_net.net.forward(mu), y)[0]}]
    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(y))
        for i in range(0, len(order), batch_size):
            b = order[i:i + batch_size]
            value_net.zero_grad()
            loss, g = nn.mse(value_net.net.forward(mu[b]), y[b])
            if not np.isfinite(loss):
                raise Diverged(f"non-finite value loss at epoch {epoch}")
            value_net.net.backward(g)
            adam.step(value_net.grads())
        curve.append({"epoch": epoch, "loss": nn.mse(value_net.net.forward(mu), y)[0]})
    return curve


# -- inference --------------------------------------------------------------------------

def dc_scores(env: SfcEnv, model: VaeModel, value_net: ValueNetwork,
              fc: FeatureConfig | None = None) -> np.ndarray:
    states = dc_state_matrix(env, fc or FeatureConfig())
    mu, _ = model.encode(states)
    return value_net.forward(mu)


def argmax_dc(scores: np.ndarray, eligible: np.ndarray | None = None) -> int:
    """Highest score wins, lowest id on ties; DCs already waiting this tick are skipped."""
    if eligible is not None and eligible.any():
        scores = np.where(eligible, scores, -np.inf)
    return int(np.argmax(scores))


def select_dc(env: SfcEnv, model: VaeModel, value_net: ValueNetwork,
              fc: FeatureConfig | None = None) -> int:
    return argmax_dc(dc_scores(env, model, value_net, fc), env.eligible)


class GenAiSelector:
    def __init__(self, model: VaeModel, value_net: ValueNetwork, fc: FeatureConfig | None = None):
        self.model, self.value_net, self.fc = model, value_net, fc or FeatureConfig()

    def __call__(self, env: SfcEnv) -> int:
        return select_dc(env, self.model, self.value_net, self.fc)


def save_vae(model: VaeModel, path):
    nn.save_module(path, model, model.meta())


def load_vae(path) -> VaeModel:
    arrays, meta = nn.load_arrays(path)
    if meta.get("kind") != "vae":
        raise nn.CheckpointError(f"{path} is not a VAE checkpoint")
    m = VaeModel.from_meta(meta)
    nn.restore(m, arrays)
    return m


def save_value(net: ValueNetwork, path):
    nn.save_module(path, net, net.meta())


def load_value(path) -> ValueNetwork:
    arrays, meta = nn.load_arrays(path)
    if meta.get("kind") != "value":
        raise nn.CheckpointError(f"{path} is not a value-network checkpoint")
    v = ValueNetwork.from_meta(meta)
    nn.restore(v, arrays)
    return v
