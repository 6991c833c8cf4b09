"""Multi-branch attention DQN that picks the VNF action on a selected DC."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple

import numpy as np

from . import nn
from .catalog import DEFAULT_CATALOG, Catalog
from .model import PENDING
from .features import FeatureConfig, dc_chains, dc_resources, dims, network_view
from .sim import (
    REWARDS, EpisodeHook, EventKind, SfcEnv, SimConfig, StepRecord, random_dc_selector, reward_of,
    run_episode,
)

log = logging.getLogger(__name__)


class DqnStateTriple(NamedTuple):
    dc: np.ndarray  # (17,)
    dc_chains: np.ndarray  # (36,)
    network: np.ndarray  # (24,)


@dataclass
class DqnConfig:
    branch_width: int = 64
    hidden: tuple[int, ...] = (128, 64)
    gamma: float = 0.99
    lr: float = 1e-3
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay: float = 0.97  # per episode
    replay_capacity: int = 50_000
    batch_size: int = 64
    target_sync: int = 175  # gradient updates between hard syncs
    updates_per_block: int = 350
    episodes_per_block: int = 20
    grad_clip: float = 10.0
    mask_invalid: bool = False
    tick_credit: str = "last"  # "last" or "even": who receives a tick's time-advance reward
    drop_credit: bool = False  # charge each drop to the decisions that allocated the chain
    features: FeatureConfig = field(default_factory=FeatureConfig)

    def __post_init__(self):
        self.hidden = tuple(self.hidden)
        if isinstance(self.features, dict):
            self.features = FeatureConfig(**self.features)
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must be in (0, 1]")
        if self.tick_credit not in ("last", "even"):
            raise ValueError("tick_credit must be 'last' or 'even'")
        for e in (self.eps_start, self.eps_end):
            if not 0 <= e <= 1:
                raise ValueError("epsilon must be in [0, 1]")


def encode_state(env: SfcEnv, dc_id: int, fc: FeatureConfig | None = None) -> DqnStateTriple:
    fc = fc or FeatureConfig()
    return DqnStateTriple(dc_resources(env, fc, [dc_id])[0],
                          dc_chains(env, fc, [dc_id])[0],
                          network_view(env, fc))


class DqnNet(nn.Module):
    """Three dense branches -> 3-token attention -> flatten -> hidden stack -> Q head."""

    def __init__(self, in_dims=(17, 36, 24), n_actions: int = 13, width: int = 64,
                 hidden=(128, 64), seed: int = 0, dtype=np.float32):
        rng = np.random.default_rng(seed)
        self.in_dims = tuple(in_dims)
        self.n_actions = n_actions
        self.width = width
        self.hidden = tuple(hidden)
        self.branches = [nn.Dense(d, width, "relu", rng, dtype) for d in in_dims]
        self.attn = nn.Attention(width, rng, dtype)
        widths = [len(in_dims) * width, *hidden, n_actions]
        self.head = nn.Stack(widths, ["relu"] * len(hidden) + ["linear"], rng, dtype)
        self.children = [*self.branches, self.attn, self.head]

    def forward(self, *xs) -> np.ndarray:
        tokens = np.stack([b.forward(x) for b, x in zip(self.branches, xs)], axis=1)
        mixed = self.attn.forward(tokens)
        self._mixed_shape = mixed.shape
        return self.head.forward(mixed.reshape(mixed.shape[0], -1))

    def backward(self, gq: np.ndarray):
        g = self.head.backward(gq).reshape(self._mixed_shape)
        g = self.attn.backward(g)
        return [b.backward(g[:, i]) for i, b in enumerate(self.branches)]

    def meta(self) -> dict:
        return {"kind": "dqn", "in_dims": list(self.in_dims), "n_actions": self.n_actions,
                "width": self.width, "hidden": list(self.hidden)}

    @classmethod
    def from_meta(cls, meta: dict) -> "DqnNet":
        return cls(meta["in_dims"], meta["n_actions"], meta["width"], meta["hidden"])


def build_net(cfg: DqnConfig, n_vnf: int = 6, n_sfc: int = 6, seed: int = 0) -> DqnNet:
    return DqnNet(dims(n_vnf, n_sfc), 2 * n_vnf + 1, cfg.branch_width, cfg.hidden, seed)


def q_values(net: DqnNet, state: DqnStateTriple) -> np.ndarray:
    return net.forward(*(x[None, :] for x in state))[0]


def select_action(q: np.ndarray, epsilon: float, rng: np.random.Generator) -> int:
    if not 0 <= epsilon <= 1:
        raise ValueError("epsilon must be in [0, 1]")
    if rng.random() < epsilon:
        return int(rng.integers(len(q)))
    return int(np.argmax(q))


def sync_target(net: DqnNet, target: DqnNet) -> DqnNet:
    target.copy_from(net)
    return target


def valid_action_mask(env: SfcEnv, dc_id: int) -> np.ndarray:
    """Codes the simulator would accept on ``dc_id`` right now."""
    nv = env.catalog.n_vnf
    dc = env.topology.datacenters[dc_id]
    idle = dc.installed - dc.busy > 0
    p = np.flatnonzero(env.status == PENDING)
    wanted = np.zeros(nv, dtype=bool)
    if p.size:
        ok = env.reachable(p, [dc_id])[:, 0]
        wanted[env.next_vnf[p[ok]]] = True
    place = wanted & (idle | env.installable_matrix()[dc_id])
    return np.concatenate([place, idle, [True]])


class Batch(NamedTuple):
    s: tuple[np.ndarray, np.ndarray, np.ndarray]
    a: np.ndarray
    r: np.ndarray
    s2: tuple[np.ndarray, np.ndarray, np.ndarray]
    terminal: np.ndarray
    mask2: np.ndarray | None = None  # actions allowed in s2; None means all


class ReplayBuffer:
    def __init__(self, capacity: int, in_dims=(17, 36, 24), n_actions: int = 13):
        self.capacity = capacity
        self.s = [np.zeros((capacity, d), np.float32) for d in in_dims]
        self.s2 = [np.zeros((capacity, d), np.float32) for d in in_dims]
        self.m2 = np.ones((capacity, n_actions), bool)
        self.a = np.zeros(capacity, np.int64)
        self.r = np.zeros(capacity, np.float32)
        self.term = np.zeros(capacity, np.float32)
        self.size = 0
        self.pos = 0

    def __len__(self):
        return self.size

    def push(self, s, a, r, s2, terminal, mask2=None):
        i = self.pos
        for k in range(3):
            self.s[k][i] = s[k]
            self.s2[k][i] = s2[k]
        self.m2[i] = True if mask2 is None else mask2
        self.a[i], self.r[i], self.term[i] = a, r, float(terminal)
        self.pos = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, n: int, rng: np.random.Generator) -> Batch:
        idx = rng.integers(self.size, size=n)
        return Batch(tuple(x[idx] for x in self.s), self.a[idx], self.r[idx],
                     tuple(x[idx] for x in self.s2), self.term[idx], self.m2[idx])


def train_batch(net: DqnNet, target: DqnNet, batch: Batch, adam: nn.Adam,
                gamma: float = 0.99, grad_clip: float | None = 10.0) -> float:
    """One Huber TD step against the target network; returns the loss before the update."""
    if len(batch.a) == 0:
        raise ValueError("empty batch")
    q_next = target.forward(*batch.s2)
    if batch.mask2 is not None:
        q_next = np.where(batch.mask2, q_next, -np.inf)
    q_next = q_next.max(axis=1)
    y = batch.r + gamma * q_next * (1.0 - batch.terminal)
    q = net.forward(*batch.s)
    rows = np.arange(len(batch.a))
    loss, g = nn.huber(q[rows, batch.a], y.astype(q.dtype))
    gq = np.zeros_like(q)
    gq[rows, batch.a] = g
    net.zero_grad()
    net.backward(gq)
    grads = net.grads()
    if grad_clip:
        nn.clip_grads(grads, grad_clip)
    adam.step(grads)
    return loss


class DqnAgent:
    """Callable action agent for ``run_episode``; remembers the last encoded state."""

    def __init__(self, net: DqnNet, fc: FeatureConfig | None = None, epsilon: float = 0.0,
                 rng: np.random.Generator | None = None, mask_invalid: bool = False):
        self.net = net
        self.fc = fc or FeatureConfig()
        self.epsilon = epsilon
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.mask_invalid = mask_invalid
        self.last_state: DqnStateTriple | None = None
        self.last_mask: np.ndarray | None = None

    def __call__(self, env: SfcEnv, dc_id: int) -> int:
        s = encode_state(env, dc_id, self.fc)
        self.last_state = s
        q = q_values(self.net, s)
        if not self.mask_invalid:
            return select_action(q, self.epsilon, self.rng)
        mask = valid_action_mask(env, dc_id)
        self.last_mask = mask
        if self.rng.random() < self.epsilon:
            return int(self.rng.choice(np.flatnonzero(mask)))
        return int(np.argmax(np.where(mask, q, -np.inf)))


class TransitionRecorder(EpisodeHook):
    """Turns the agent's decisions into replay transitions and tallies episode reward.

    Transitions are held until the episode ends so that each accepted chain's
    reward can be split evenly over the decisions that allocated its VNFs,
    instead of landing on whichever decision happened to end that tick. With
    ``drop_credit`` a dropped chain's penalty is split the same way when any
    decision allocated it. ``tick_credit="even"`` shares the remaining
    time-advance reward of a tick over all of that tick's decisions. The
    episode total never changes.
    """

    def __init__(self, agent: DqnAgent, buffer: ReplayBuffer, tick_credit: str = "last",
                 drop_credit: bool = False):
        self.agent = agent
        self.buffer = buffer
        self.tick_credit = tick_credit
        self.drop_credit = drop_credit
        self.total_reward = 0.0
        self.steps = 0
        self._s: list = []
        self._m: list = []
        self._a: list[int] = []
        self._r: list[float] = []
        self._alloc: dict[int, list[int]] = {}
        self._tick_start = 0

    def _move(self, reward: float, owners: list[int]):
        for j in owners:
            self._r[j] += reward / len(owners)

    def _tick_reward(self, events, reward: float):
        """Route a tick's time-advance events and reward onto recorded decisions."""
        for e in events:
            owners = self._alloc.get(e.request_id)
            if not owners:
                continue
            if e.kind is EventKind.SFC_ACCEPTED:
                bonus = REWARDS[EventKind.SFC_ACCEPTED]
            elif e.kind is EventKind.SFC_DROPPED and self.drop_credit:
                bonus = REWARDS[EventKind.SFC_DROPPED]
            else:
                continue
            reward -= bonus
            self._move(bonus, owners)
        if self.tick_credit == "even" and self._tick_start < len(self._r):
            self._move(reward, list(range(self._tick_start, len(self._r))))
        else:
            self._r[-1] += reward
        self._tick_start = len(self._r)

    def after(self, env: SfcEnv, step: StepRecord):
        self._s.append(self.agent.last_state)
        self._m.append(self.agent.last_mask)
        self._a.append(step.action)
        k = len(self._a) - 1
        first = step.events[0]
        self._r.append(reward_of(step.events[:1]))
        if first.kind is EventKind.VNF_ALLOCATED:
            self._alloc.setdefault(first.request_id, []).append(k)
        if step.tick_ended:
            self._tick_reward(step.events[1:], step.reward - self._r[k])
        self.total_reward += step.reward
        self.steps += 1
        if step.done:
            self.finish()

    def on_tick(self, env: SfcEnv, events, reward: float, done: bool):
        self.total_reward += reward
        if self._r:
            self._tick_reward(events, reward)
        if done:
            self.finish()

    def finish(self):
        n = len(self._a)
        if n == 0:
            return
        zeros = tuple(np.zeros_like(x) for x in self._s[0])
        for k in range(n):
            last = k == n - 1
            self.buffer.push(self._s[k], self._a[k], self._r[k],
                             zeros if last else self._s[k + 1], last,
                             None if last else self._m[k + 1])
        self._s, self._m, self._a, self._r, self._alloc = [], [], [], [], {}
        self._tick_start = 0


@dataclass
class TrainScenario:
    """Which environments DQN training episodes are drawn from."""
    sim: SimConfig = field(default_factory=lambda: SimConfig(dc_count=2, bundle_scale=0.5))
    dc_counts: tuple[int, ...] = (2,)
    multipliers: tuple[int, ...] = (1,)
    catalog: Catalog = DEFAULT_CATALOG

    def env_for(self, episode_seed: int, rng: np.random.Generator) -> SfcEnv:
        dc = int(rng.choice(self.dc_counts))
        mult = int(rng.choice(self.multipliers))
        cfg = replace(self.sim, dc_count=dc, request_count_multiplier=mult, seed=episode_seed)
        return SfcEnv(cfg, self.catalog)


def train_dqn(cfg: DqnConfig, scenario: TrainScenario, blocks: int, seed: int = 0,
              on_episode: Callable[[dict], None] | None = None):
    """Alternate ``episodes_per_block`` collection episodes with ``updates_per_block`` updates.

    Returns the trained network and a list of per-episode records
    (episode, reward, loss, epsilon).
    """
    seq = np.random.SeedSequence(seed)
    s_net, s_act, s_dc, s_env, s_replay = (np.random.default_rng(s) for s in seq.spawn(5))
    net = build_net(cfg, seed=int(s_net.integers(2**31)))
    target = build_net(cfg)
    sync_target(net, target)
    adam = nn.Adam(net.params(), lr=cfg.lr)
    buffer = ReplayBuffer(cfg.replay_capacity, net.in_dims, net.n_actions)
    agent = DqnAgent(net, cfg.features, cfg.eps_start, s_act, cfg.mask_invalid)
    select_dc = random_dc_selector(s_dc)
    curve: list[dict] = []
    updates = 0
    last_loss = None
    episode = 0
    for block in range(blocks):
        for _ in range(cfg.episodes_per_block):
            agent.epsilon = max(cfg.eps_end, cfg.eps_start * cfg.eps_decay ** episode)
            env = scenario.env_for(int(s_env.integers(2**31)), s_env)
            rec = TransitionRecorder(agent, buffer, cfg.tick_credit, cfg.drop_credit)
            m = run_episode(env, select_dc, agent, [rec])
            row = {"episode": episode, "reward": rec.total_reward, "loss": last_loss,
                   "epsilon": agent.epsilon, "steps": rec.steps,
                   "acc_ratio": sum(m.accepted.values()) / max(1, sum(m.generated.values()))}
            curve.append(row)
            if on_episode:
                on_episode(row)
            episode += 1
        if len(buffer) < cfg.batch_size:
            continue
        losses = []
        for _ in range(cfg.updates_per_block):
            losses.append(train_batch(net, target, buffer.sample(cfg.batch_size, s_replay),
                                      adam, cfg.gamma, cfg.grad_clip))
            updates += 1
            if updates % cfg.target_sync == 0:
                sync_target(net, target)
        last_loss = float(np.mean(losses))
        log.info("block %d: loss %.4f, eps %.3f, last reward %.1f",
                 block, last_loss, agent.epsilon, curve[-1]["reward"])
    return net, curve


def save(net: DqnNet, path):
    nn.save_module(path, net, net.meta())


def load(path) -> DqnNet:
    arrays, meta = nn.load_arrays(path)
    if meta.get("kind") != "dqn":
        raise nn.CheckpointError(f"{path} is not a DQN checkpoint")
    net = DqnNet.from_meta(meta)
    nn.restore(net, arrays)
    return net
