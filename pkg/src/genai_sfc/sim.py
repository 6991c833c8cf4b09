"""Discrete-time SFC provisioning environment.

Requests live column-wise in numpy arrays so that state encoders and the
heuristic can query hundreds of live chains per decision without Python
loops. Each tick the engine asks the DC selector and the action agent for
decisions; an idle or invalid action on a DC makes that DC wait out the rest
of the tick. Time advances by ``tick_ms`` once every DC is waiting, nothing is
pending, or the per-tick action cap is hit.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields
from enum import Enum
from typing import Callable, NamedTuple, Protocol

import numpy as np

from .catalog import Catalog, DEFAULT_CATALOG
from .model import (
    EPS, Datacenter, LogicalLink, NetworkTopology, RunMetrics, SfcRequest, Status,
    PENDING, IN_TRANSIT, PROCESSING, ACCEPTED, DROPPED,
    can_install, install_vnf, release_bandwidth, reserve_bandwidth, uninstall_vnf,
)

log = logging.getLogger(__name__)


@dataclass
class SimConfig:
    tick_ms: float = 1.0
    dc_count: int = 4
    dc_cpu_range: tuple[float, float] = (12.0, 120.0)
    dc_storage: float = 2000.0
    dc_ram: float = 256.0
    link_bw: float = 1000.0
    link_prop_delay: float = 1.0
    request_count_multiplier: int = 1
    bundle_scale: float = 1.0
    max_ticks: int = 1000
    max_actions_per_tick: int = 64
    links: list[tuple[int, int]] | None = None  # None -> full mesh
    seed: int = 0

    def __post_init__(self):
        self.dc_cpu_range = tuple(float(x) for x in self.dc_cpu_range)
        if self.tick_ms <= 0:
            raise ValueError("tick_ms must be positive")
        if self.dc_count < 2:
            raise ValueError("dc_count must be at least 2")
        if self.max_ticks <= 0:
            raise ValueError("max_ticks must be positive")
        if self.max_actions_per_tick < 1:
            raise ValueError("max_actions_per_tick must be at least 1")
        if not 1 <= self.request_count_multiplier:
            raise ValueError("request_count_multiplier must be >= 1")
        if not 0 < self.bundle_scale <= 1:
            raise ValueError("bundle_scale must be in (0, 1]")
        lo, hi = self.dc_cpu_range
        if not 0 < lo <= hi:
            raise ValueError("dc_cpu_range must satisfy 0 < lo <= hi")

    @classmethod
    def field_names(cls) -> set[str]:
        return {f.name for f in fields(cls)}


class EventKind(Enum):
    SFC_ACCEPTED = "SfcAccepted"
    SFC_DROPPED = "SfcDropped"
    VNF_ALLOCATED = "VnfAllocated"
    VNF_UNINSTALLED = "VnfUninstalled"
    VNF_UNINSTALLED_ESSENTIAL = "VnfUninstalledEssential"
    INVALID_ACTION = "InvalidAction"
    IDLE = "Idle"


class SimEvent(NamedTuple):
    kind: EventKind
    tick: int
    request_id: int | None = None
    dc_id: int | None = None


REWARDS = {
    EventKind.SFC_ACCEPTED: 2.0,
    EventKind.SFC_DROPPED: -1.5,
    EventKind.VNF_UNINSTALLED_ESSENTIAL: -0.5,
    EventKind.INVALID_ACTION: -1.0,
}

WAITING = (EventKind.IDLE, EventKind.INVALID_ACTION)


def reward_of(events) -> float:
    return float(sum(REWARDS.get(e.kind, 0.0) for e in events))


def generate_bundles(rng: np.random.Generator, catalog: Catalog, multiplier: int,
                     dc_count: int, scale: float = 1.0) -> list[SfcRequest]:
    """Draw ``multiplier`` bundles of every chain type.

    Bundle sizes are uniform integers in the type's range (optionally scaled
    down), endpoints are distinct uniformly random DCs, and ranged bandwidths
    are fixed per request at draw time.
    """
    if multiplier < 1:
        raise ValueError("multiplier must be >= 1")
    out: list[SfcRequest] = []
    for _ in range(multiplier):
        for s_idx, sfc in enumerate(catalog.sfcs):
            lo, hi = sfc.bundle_range
            if scale != 1.0:
                lo, hi = max(1, round(lo * scale)), max(1, round(hi * scale))
            size = int(rng.integers(lo, hi + 1))
            chain = catalog.chain_indices(s_idx)
            for _ in range(size):
                src, dst = rng.choice(dc_count, size=2, replace=False)
                if sfc.fixed_bandwidth:
                    bw = sfc.bandwidth[0]
                else:
                    bw = float(rng.uniform(*sfc.bandwidth))
                out.append(SfcRequest(len(out), s_idx, int(src), int(dst), bw,
                                      sfc.e2e_limit, chain))
    return out


def build_topology(config: SimConfig, rng: np.random.Generator,
                   catalog: Catalog = DEFAULT_CATALOG) -> NetworkTopology:
    dcs = [Datacenter(i, float(rng.uniform(*config.dc_cpu_range)), config.dc_storage,
                      config.dc_ram, catalog) for i in range(config.dc_count)]
    if config.links is None:
        return NetworkTopology.full_mesh(dcs, config.link_bw, config.link_prop_delay)
    links = [LogicalLink((int(i), int(j)), config.link_bw, 0.0, config.link_prop_delay)
             for i, j in config.links]
    return NetworkTopology(dcs, links)


def _path_delays(direct: np.ndarray) -> np.ndarray:
    d = direct.copy()
    for k in range(len(d)):
        d = np.minimum(d, d[:, k:k + 1] + d[k:k + 1, :])
    return d


class SfcEnv:
    """The provisioning MDP. Mutations go through ``apply_action`` and ``advance_tick``."""

    def __init__(self, config: SimConfig, catalog: Catalog = DEFAULT_CATALOG,
                 requests: list[SfcRequest] | None = None,
                 topology: NetworkTopology | None = None):
        self.config = config
        self.catalog = catalog
        seq = np.random.SeedSequence(config.seed)
        topo_seed, req_seed = seq.spawn(2)
        if topology is None:
            topology = build_topology(config, np.random.default_rng(topo_seed), catalog)
        if requests is None:
            requests = generate_bundles(np.random.default_rng(req_seed), catalog,
                                        config.request_count_multiplier, config.dc_count,
                                        config.bundle_scale)
        self.topology = topology
        self.path_delay = _path_delays(topology.delay)
        self.t = 0
        self.proc_time = np.array([v.proc_time for v in catalog.vnfs])
        maxlen = max(len(s.chain) for s in catalog.sfcs)
        self._demand = np.array([[v.storage_demand, v.cpu_demand, v.ram_demand]
                                 for v in catalog.vnfs], dtype=float)
        self.chains = np.full((catalog.n_sfc, maxlen + 1), -1, dtype=np.int64)
        for s in range(catalog.n_sfc):
            ch = catalog.chain_indices(s)
            self.chains[s, :len(ch)] = ch
        self._load(requests)

    # -- request table ------------------------------------------------------------------

    def _load(self, requests: list[SfcRequest]):
        n = len(requests)
        self.n_requests = n
        self.sfc = np.array([r.sfc_type for r in requests], dtype=np.int64)
        self.source = np.array([r.source_dc for r in requests], dtype=np.int64)
        self.dest = np.array([r.dest_dc for r in requests], dtype=np.int64)
        self.bw = np.array([r.bandwidth for r in requests], dtype=np.float64)
        self.deadline = np.array([r.e2e_limit for r in requests], dtype=np.float64)
        self.chain_len = np.array([len(r.chain) for r in requests], dtype=np.int64)
        self.next_idx = np.array([r.next_vnf_index for r in requests], dtype=np.int64)
        self.elapsed = np.array([r.elapsed for r in requests], dtype=np.float64)
        self.status = np.array([int(r.status) for r in requests], dtype=np.int64)
        self.prev_dc = np.full(n, -1, dtype=np.int64)
        self.rem = np.zeros(n)
        self.final_transit = np.zeros(n, dtype=bool)
        self.allocations: list[list[tuple[int, int]]] = [list(r.allocations) for r in requests]
        for i, al in enumerate(self.allocations):
            if al:
                self.prev_dc[i] = al[-1][1]
        self.held_links: list[list[int]] = [[] for _ in range(n)]
        self.next_vnf = self._lookup_next()
        nd = len(self.topology.datacenters)
        self.alloc_count = np.zeros(nd, dtype=np.int64)
        self.drop_count = np.zeros(nd, dtype=np.int64)
        self.accepted_order: list[int] = []
        self.eligible = np.ones(nd, dtype=bool)

    def _lookup_next(self) -> np.ndarray:
        return self.chains[self.sfc, np.minimum(self.next_idx, self.chains.shape[1] - 1)]

    def request(self, i: int) -> SfcRequest:
        return SfcRequest(i, int(self.sfc[i]), int(self.source[i]), int(self.dest[i]),
                          float(self.bw[i]), float(self.deadline[i]),
                          self.catalog.chain_indices(int(self.sfc[i])),
                          int(self.next_idx[i]), list(self.allocations[i]),
                          float(self.elapsed[i]), Status(int(self.status[i])))

    def requests(self) -> list[SfcRequest]:
        return [self.request(i) for i in range(self.n_requests)]

    @property
    def n_dc(self) -> int:
        return len(self.topology.datacenters)

    def live_mask(self) -> np.ndarray:
        return self.status < ACCEPTED

    def pending_mask(self) -> np.ndarray:
        return self.status == PENDING

    def has_live(self) -> bool:
        return bool(np.any(self.status < ACCEPTED))

    def slack(self) -> np.ndarray:
        return self.deadline - self.elapsed

    def installed_matrix(self) -> np.ndarray:
        return np.stack([d.installed for d in self.topology.datacenters])

    def busy_matrix(self) -> np.ndarray:
        return np.stack([d.busy for d in self.topology.datacenters])

    def installable_matrix(self) -> np.ndarray:
        """[dc, vnf] -> True if one more instance fits under C1, C2 and RAM."""
        dcs = self.topology.datacenters
        inst = self.installed_matrix()
        cap = np.array([[d.storage_capacity, d.cpu_capacity, d.ram_capacity] for d in dcs])
        need = self._demand  # [vnf, (storage, cpu, ram)]
        used = inst @ need
        return np.all(used[:, None, :] + need[None, :, :] <= cap[:, None, :] + EPS, axis=2)

    def reachable(self, idx: np.ndarray, dc_ids=None) -> np.ndarray:
        """[len(idx), n_dc] mask: can the next VNF of each request be allocated on each DC?

        The first VNF may go anywhere; later VNFs need the previous DC itself or a
        direct link with at least the chain's bandwidth free.
        """
        fb = self.topology.free_bw()
        prev = self.prev_dc[idx]
        rows = fb[np.maximum(prev, 0)]
        if dc_ids is not None:
            rows = rows[:, dc_ids]
        ok = rows >= self.bw[idx, None] - EPS
        ok[prev < 0] = True
        return ok

    # -- actions ------------------------------------------------------------------------

    def decode(self, code: int) -> tuple[str, int | None]:
        n = self.catalog.n_vnf
        if code == 2 * n:
            return "idle", None
        if 0 <= code < n:
            return "place", code
        if n <= code < 2 * n:
            return "uninstall", code - n
        raise ValueError(f"action code {code} outside [0, {2 * n}]")

    def select_candidate(self, dc_id: int, v: int) -> int | None:
        """Pending request needing VNF ``v`` next that can reach ``dc_id``, least slack first."""
        idx = np.flatnonzero((self.status == PENDING) & (self.next_vnf == v))
        if idx.size == 0:
            return None
        ok = self.reachable(idx, [dc_id])[:, 0]
        idx = idx[ok]
        if idx.size == 0:
            return None
        # argmin returns the first minimum, i.e. the lowest id among equal slack
        return int(idx[np.argmin(self.deadline[idx] - self.elapsed[idx])])

    def apply_action(self, dc_id: int, code: int) -> tuple[list[SimEvent], float]:
        if not 0 <= dc_id < self.n_dc:
            raise ValueError(f"dc_id {dc_id} out of range")
        kind, v = self.decode(int(code))
        if kind == "idle":
            events = [SimEvent(EventKind.IDLE, self.t, None, dc_id)]
        elif kind == "place":
            events = [self._place(dc_id, v)]
        else:
            events = [self._uninstall(dc_id, v)]
        if events[0].kind in WAITING:
            self.eligible[dc_id] = False
        return events, reward_of(events)

    def _invalid(self, dc_id: int) -> SimEvent:
        return SimEvent(EventKind.INVALID_ACTION, self.t, None, dc_id)

    def _place(self, dc_id: int, v: int) -> SimEvent:
        r = self.select_candidate(dc_id, v)
        if r is None:
            return self._invalid(dc_id)
        dc = self.topology.datacenters[dc_id]
        if dc.idle(v) == 0:
            entry = self.catalog.vnfs[v]
            if not can_install(dc, entry):
                return self._invalid(dc_id)
            install_vnf(dc, entry)
        dc.busy[v] += 1
        prev = int(self.prev_dc[r])
        hop = 0.0
        if prev >= 0 and prev != dc_id:
            k = int(self.topology.link_index[prev, dc_id])
            reserve_bandwidth(self.topology.links[k], float(self.bw[r]))
            self.held_links[r].append(k)
            hop = self.topology.links[k].prop_delay
        elif prev < 0 and self.source[r] != dc_id:
            hop = float(self.path_delay[self.source[r], dc_id])
        self.allocations[r].append((int(self.next_idx[r]), dc_id))
        self.prev_dc[r] = dc_id
        if hop > 0:
            self.status[r] = IN_TRANSIT
            self.rem[r] = hop
        else:
            self.status[r] = PROCESSING
            self.rem[r] = self.proc_time[v]
        self.alloc_count[dc_id] += 1
        return SimEvent(EventKind.VNF_ALLOCATED, self.t, r, dc_id)

    def _uninstall(self, dc_id: int, v: int) -> SimEvent:
        dc = self.topology.datacenters[dc_id]
        if dc.installed[v] == 0 or dc.idle(v) == 0:
            return self._invalid(dc_id)
        essential = bool(np.any((self.status == PENDING) & (self.next_vnf == v)))
        uninstall_vnf(dc, self.catalog.vnfs[v])
        kind = EventKind.VNF_UNINSTALLED_ESSENTIAL if essential else EventKind.VNF_UNINSTALLED
        return SimEvent(kind, self.t, None, dc_id)

    # -- time ---------------------------------------------------------------------------

    def _release(self, r: int):
        for k in self.held_links[r]:
            release_bandwidth(self.topology.links[k], float(self.bw[r]))
        self.held_links[r].clear()

    def advance_tick(self) -> list[SimEvent]:
        dt = self.config.tick_ms
        events: list[SimEvent] = []
        st = self.status
        live = st < ACCEPTED
        transit = np.flatnonzero(st == IN_TRANSIT)
        proc = np.flatnonzero(st == PROCESSING)
        self.elapsed[live] += dt
        self.rem[transit] -= dt
        self.rem[proc] -= dt
        self.t += 1
        self.eligible[:] = True
        complete: list[int] = []
        for r in transit[self.rem[transit] <= EPS]:
            if self.final_transit[r]:
                complete.append(int(r))
            else:
                st[r] = PROCESSING
                self.rem[r] = self.proc_time[self.next_vnf[r]]
        for r in proc[self.rem[proc] <= EPS]:
            dc = self.topology.datacenters[self.prev_dc[r]]
            dc.busy[self.next_vnf[r]] -= 1
            self.next_idx[r] += 1
            if self.next_idx[r] == self.chain_len[r]:
                self.next_vnf[r] = -1
                hop = float(self.path_delay[self.prev_dc[r], self.dest[r]])
                if hop > 0:
                    st[r] = IN_TRANSIT
                    self.rem[r] = hop
                    self.final_transit[r] = True
                else:
                    complete.append(int(r))
            else:
                st[r] = PENDING
                self.next_vnf[r] = self.chains[self.sfc[r], self.next_idx[r]]
        for r in complete:
            # the instance is already free; mark the chain as past its last hop
            st[r] = IN_TRANSIT
            self.final_transit[r] = True
            if self.elapsed[r] <= self.deadline[r] + EPS:
                st[r] = ACCEPTED
                self._release(r)
                self.accepted_order.append(r)
                events.append(SimEvent(EventKind.SFC_ACCEPTED, self.t, r, int(self.prev_dc[r])))
        late = np.flatnonzero((st < ACCEPTED) & (self.elapsed > self.deadline + EPS))
        for r in late:
            self._drop(int(r))
            events.append(SimEvent(EventKind.SFC_DROPPED, self.t, int(r), self._blame(int(r))))
        return events

    def _blame(self, r: int) -> int:
        return int(self.prev_dc[r]) if self.prev_dc[r] >= 0 else int(self.source[r])

    def _drop(self, r: int):
        s = self.status[r]
        holds_instance = s == PROCESSING or (s == IN_TRANSIT and not self.final_transit[r])
        if holds_instance:
            self.topology.datacenters[self.prev_dc[r]].busy[self.next_vnf[r]] -= 1
        self.status[r] = DROPPED
        self._release(r)
        self.drop_count[self._blame(r)] += 1

    # -- bookkeeping --------------------------------------------------------------------

    def metrics(self) -> RunMetrics:
        names = [s.name for s in self.catalog.sfcs]
        m = RunMetrics.empty(names)
        for s, name in enumerate(names):
            mask = self.sfc == s
            m.generated[name] = int(mask.sum())
            acc = mask & (self.status == ACCEPTED)
            m.accepted[name] = int(acc.sum())
            m.dropped[name] = int((mask & (self.status == DROPPED)).sum())
            m.e2e_samples[name] = [float(x) for x in self.elapsed[acc]]
        m.accepted_bandwidth_mbps = float(self.bw[self.status == ACCEPTED].sum())
        m.ticks = self.t
        return m

    def snapshot(self) -> tuple:
        """Hashable deep view of all mutable state, for equality checks."""
        topo = tuple((tuple(d.installed), tuple(d.busy)) for d in self.topology.datacenters)
        links = tuple(l.bw_reserved for l in self.topology.links)
        arrays = tuple(a.tobytes() for a in (self.next_idx, self.elapsed, self.status,
                                              self.prev_dc, self.rem, self.final_transit))
        allocs = tuple(tuple(a) for a in self.allocations)
        held = tuple(tuple(h) for h in self.held_links)
        return (self.t, topo, links, arrays, allocs, held)

    def check_invariants(self):
        """Assert C1-C5 and the bandwidth conservation identity; used by tests."""
        for d in self.topology.datacenters:
            d.check_invariants()
        for l in self.topology.links:
            assert -EPS <= l.bw_reserved <= l.bw_capacity + EPS, "C4"
        expected = np.zeros(len(self.topology.links))
        for r in np.flatnonzero(self.live_mask()):
            for k in self.held_links[r]:
                expected[k] += self.bw[r]
        got = np.array([l.bw_reserved for l in self.topology.links])
        assert np.allclose(expected, got, atol=1e-6), "bandwidth conservation"
        for al in self.allocations:
            for k, (m, _) in enumerate(al):
                assert m == k, "C3"
        acc = self.status == int(ACCEPTED)
        n_alloc = np.fromiter(map(len, self.allocations), np.int64, self.n_requests)
        assert np.array_equal(n_alloc[acc], self.chain_len[acc]), "C3"
        assert np.all(self.elapsed[acc] <= self.deadline[acc] + EPS), "C5"
        # each busy instance is held by exactly one request
        busy = np.zeros((self.n_dc, self.catalog.n_vnf), dtype=np.int64)
        holding = ((self.status == PROCESSING)
                   | ((self.status == IN_TRANSIT) & ~self.final_transit))
        for r in np.flatnonzero(holding):
            busy[self.prev_dc[r], self.next_vnf[r]] += 1
        assert np.array_equal(busy, self.busy_matrix()), "busy accounting"


# -- episode driver -------------------------------------------------------------------------

class DcSelector(Protocol):
    def __call__(self, env: SfcEnv) -> int: ...


class ActionAgent(Protocol):
    def __call__(self, env: SfcEnv, dc_id: int) -> int: ...


@dataclass
class StepRecord:
    dc_id: int
    action: int
    events: list[SimEvent]
    reward: float
    tick_ended: bool
    done: bool


class EpisodeHook:
    """No-op base; override ``before`` and/or ``after``."""

    def before(self, env: SfcEnv, dc_id: int):
        pass

    def after(self, env: SfcEnv, step: StepRecord):
        pass

    def on_tick(self, env: SfcEnv, events: list[SimEvent], reward: float, done: bool):
        """A tick advanced with nothing pending, so no decision was taken."""


def run_episode(env: SfcEnv, dc_selector: Callable, action_agent: Callable,
                hooks: list[EpisodeHook] | tuple = ()) -> RunMetrics:
    """Drive ``env`` until every request is terminal or the tick budget runs out.

    Ticks with nothing pending skip the decision phase entirely. Otherwise
    decisions repeat until every DC has idled or acted invalidly, nothing is
    pending, or ``max_actions_per_tick`` is reached. Rewards of the tick's time
    advance are credited to the decision that ended it.
    """
    cap = env.config.max_actions_per_tick
    while env.has_live() and env.t < env.config.max_ticks:
        if not np.any(env.status == PENDING):
            events = env.advance_tick()
            done = not env.has_live() or env.t >= env.config.max_ticks
            for h in hooks:
                h.on_tick(env, events, reward_of(events), done)
            continue
        for k in range(cap):
            dc = int(dc_selector(env))
            for h in hooks:
                h.before(env, dc)
            code = int(action_agent(env, dc))
            events, reward = env.apply_action(dc, code)
            ended = (k == cap - 1 or not env.eligible.any()
                     or not np.any(env.status == PENDING))
            if ended:
                tick_events = env.advance_tick()
                events = events + tick_events
                reward += reward_of(tick_events)
            done = not env.has_live() or env.t >= env.config.max_ticks
            step = StepRecord(dc, code, events, reward, ended, done)
            for h in hooks:
                h.after(env, step)
            if ended:
                break
    m = env.metrics()
    m.tick_budget_exhausted = env.has_live()
    if m.tick_budget_exhausted:
        log.warning("tick budget %d exhausted with live requests", env.config.max_ticks)
    return m


def random_dc_selector(rng: np.random.Generator) -> Callable[[SfcEnv], int]:
    """Uniform choice among the DCs not yet waiting this tick."""
    def select(env: SfcEnv) -> int:
        ids = np.flatnonzero(env.eligible)
        return int(ids[rng.integers(len(ids))]) if ids.size else int(rng.integers(env.n_dc))
    return select
