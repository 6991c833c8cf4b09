"""Domain entities, constraint predicates and objective metrics.

Capacities are checked with inclusive inequalities throughout: a DC that is
filled exactly to its storage or compute budget is still valid, and so is a
link reserved exactly to capacity or a chain finishing exactly on its deadline.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .catalog import Catalog, DEFAULT_CATALOG, VnfCatalogEntry

EPS = 1e-9


class SfcError(Exception):
    """Base class for constraint violations raised by the domain mutators."""


class CapacityExceeded(SfcError):
    def __init__(self, constraint: str, dc_id: int, vnf: str):
        self.constraint = constraint
        self.dc_id = dc_id
        self.vnf = vnf
        super().__init__(f"DC {dc_id}: installing {vnf} violates {constraint}")


class NoIdleInstance(SfcError):
    pass


class NotInstalled(SfcError):
    pass


class BandwidthExceeded(SfcError):
    pass


class ReleaseUnderflow(SfcError):
    pass


class NoRequests(SfcError):
    pass


class Status(IntEnum):
    PENDING = 0
    IN_TRANSIT = 1
    PROCESSING = 2
    ACCEPTED = 3
    DROPPED = 4


# plain module aliases: Enum attribute lookup is slow in hot numpy comparisons
PENDING, IN_TRANSIT, PROCESSING, ACCEPTED, DROPPED = Status


@dataclass
class Datacenter:
    id: int
    cpu_capacity: float
    storage_capacity: float
    ram_capacity: float
    catalog: Catalog = field(default=DEFAULT_CATALOG, repr=False)
    installed: np.ndarray = None
    busy: np.ndarray = None

    def __post_init__(self):
        n = self.catalog.n_vnf
        if self.installed is None:
            self.installed = np.zeros(n, dtype=np.int64)
        if self.busy is None:
            self.busy = np.zeros(n, dtype=np.int64)
        self._cpu = np.array([v.cpu_demand for v in self.catalog.vnfs])
        self._sto = np.array([v.storage_demand for v in self.catalog.vnfs])
        self._ram = np.array([v.ram_demand for v in self.catalog.vnfs])

    @property
    def used_cpu(self) -> float:
        return float(self.installed @ self._cpu)

    @property
    def used_storage(self) -> float:
        return float(self.installed @ self._sto)

    @property
    def used_ram(self) -> float:
        return float(self.installed @ self._ram)

    def free_fractions(self) -> tuple[float, float, float]:
        return (
            1.0 - self.used_cpu / self.cpu_capacity,
            1.0 - self.used_storage / self.storage_capacity,
            1.0 - self.used_ram / self.ram_capacity,
        )

    def idle(self, v: int) -> int:
        return int(self.installed[v] - self.busy[v])

    def copy(self) -> "Datacenter":
        return Datacenter(self.id, self.cpu_capacity, self.storage_capacity,
                          self.ram_capacity, self.catalog,
                          self.installed.copy(), self.busy.copy())

    def check_invariants(self):
        assert self.used_storage <= self.storage_capacity + EPS, "C1"
        assert self.used_cpu <= self.cpu_capacity + EPS, "C2"
        assert self.used_ram <= self.ram_capacity + EPS, "RAM"
        assert np.all(self.busy >= 0) and np.all(self.busy <= self.installed)


@dataclass
class LogicalLink:
    endpoints: tuple[int, int]
    bw_capacity: float  # Mbps
    bw_reserved: float = 0.0
    prop_delay: float = 1.0  # ms

    def __post_init__(self):
        i, j = self.endpoints
        if i == j:
            raise ValueError("link endpoints must be distinct")
        self.endpoints = (min(i, j), max(i, j))
        if self.prop_delay < 0:
            raise ValueError("prop_delay must be non-negative")

    @property
    def bw_free(self) -> float:
        return self.bw_capacity - self.bw_reserved


@dataclass
class SfcRequest:
    """Read-only record of one request; the simulator stores requests column-wise."""
    id: int
    sfc_type: int
    source_dc: int
    dest_dc: int
    bandwidth: float
    e2e_limit: float
    chain: tuple[int, ...]
    next_vnf_index: int = 0
    allocations: list[tuple[int, int]] = field(default_factory=list)
    elapsed: float = 0.0
    status: Status = Status.PENDING

    @property
    def slack(self) -> float:
        return self.e2e_limit - self.elapsed


class NetworkTopology:
    def __init__(self, datacenters: list[Datacenter], links: list[LogicalLink]):
        self.datacenters = datacenters
        self.links = links
        n = len(datacenters)
        self.adjacency: dict[tuple[int, int], int] = {}
        self.link_index = np.full((n, n), -1, dtype=np.int64)
        for k, link in enumerate(links):
            i, j = link.endpoints
            if not (0 <= i < n and 0 <= j < n):
                raise ValueError(f"link {link.endpoints} references a missing DC")
            if (i, j) in self.adjacency:
                raise ValueError(f"duplicate link {link.endpoints}")
            self.adjacency[(i, j)] = k
            self.link_index[i, j] = self.link_index[j, i] = k
        self.delay = np.full((n, n), np.inf)
        np.fill_diagonal(self.delay, 0.0)
        for link in links:
            i, j = link.endpoints
            self.delay[i, j] = self.delay[j, i] = link.prop_delay

    @classmethod
    def full_mesh(cls, datacenters: list[Datacenter], bw: float, delay: float) -> "NetworkTopology":
        n = len(datacenters)
        links = [LogicalLink((i, j), bw, 0.0, delay) for i in range(n) for j in range(i + 1, n)]
        return cls(datacenters, links)

    def link(self, i: int, j: int) -> LogicalLink | None:
        k = self.link_index[i, j]
        return None if k < 0 else self.links[k]

    def free_bw(self) -> np.ndarray:
        """Pairwise free bandwidth; +inf on the diagonal, -inf where no link exists."""
        n = len(self.datacenters)
        out = np.full((n, n), -np.inf)
        np.fill_diagonal(out, np.inf)
        for link in self.links:
            i, j = link.endpoints
            out[i, j] = out[j, i] = link.bw_free
        return out

    def incident_free_fractions(self, dc_id: int) -> np.ndarray:
        return np.array([l.bw_free / l.bw_capacity for l in self.links if dc_id in l.endpoints])

    def copy(self) -> "NetworkTopology":
        return NetworkTopology([d.copy() for d in self.datacenters],
                               [LogicalLink(l.endpoints, l.bw_capacity, l.bw_reserved, l.prop_delay)
                                for l in self.links])


@dataclass
class RunMetrics:
    sfc_names: tuple[str, ...]
    generated: dict[str, int]
    accepted: dict[str, int]
    dropped: dict[str, int]
    e2e_samples: dict[str, list[float]]
    accepted_bandwidth_mbps: float = 0.0
    tick_budget_exhausted: bool = False
    ticks: int = 0

    @classmethod
    def empty(cls, names) -> "RunMetrics":
        names = tuple(names)
        return cls(names, {s: 0 for s in names}, {s: 0 for s in names},
                   {s: 0 for s in names}, {s: [] for s in names})

    def pending(self, name: str) -> int:
        return self.generated[name] - self.accepted[name] - self.dropped[name]

    @property
    def throughput_gbps(self) -> float:
        return self.accepted_bandwidth_mbps / 1000.0

    def per_type_ratio(self) -> dict[str, float | None]:
        return {s: (self.accepted[s] / self.generated[s] if self.generated[s] else None)
                for s in self.sfc_names}

    def mean_e2e(self) -> dict[str, float | None]:
        """Mean end-to-end delay over accepted requests only; None if none were accepted."""
        return {s: (float(np.mean(v)) if v else None) for s, v in self.e2e_samples.items()}


# --- constraint predicates and mutators -------------------------------------------------

def check_storage(dc: Datacenter, v: VnfCatalogEntry) -> bool:
    return dc.used_storage + v.storage_demand <= dc.storage_capacity + EPS


def check_compute(dc: Datacenter, v: VnfCatalogEntry) -> bool:
    return dc.used_cpu + v.cpu_demand <= dc.cpu_capacity + EPS


def check_ram(dc: Datacenter, v: VnfCatalogEntry) -> bool:
    return dc.used_ram + v.ram_demand <= dc.ram_capacity + EPS


def can_install(dc: Datacenter, v: VnfCatalogEntry) -> bool:
    return check_storage(dc, v) and check_compute(dc, v) and check_ram(dc, v)


def install_vnf(dc: Datacenter, v: VnfCatalogEntry) -> Datacenter:
    if not check_storage(dc, v):
        raise CapacityExceeded("C1", dc.id, v.vnf_type)
    if not check_compute(dc, v):
        raise CapacityExceeded("C2", dc.id, v.vnf_type)
    if not check_ram(dc, v):
        raise CapacityExceeded("RAM", dc.id, v.vnf_type)
    dc.installed[dc.catalog.vnf_index(v.vnf_type)] += 1
    return dc


def uninstall_vnf(dc: Datacenter, v: VnfCatalogEntry) -> Datacenter:
    k = dc.catalog.vnf_index(v.vnf_type)
    if dc.installed[k] == 0:
        raise NotInstalled(f"DC {dc.id} has no {v.vnf_type} installed")
    if dc.installed[k] == dc.busy[k]:
        raise NoIdleInstance(f"DC {dc.id}: every {v.vnf_type} instance is busy")
    dc.installed[k] -= 1
    return dc


def reserve_bandwidth(link: LogicalLink, mbps: float) -> LogicalLink:
    if mbps <= 0:
        raise ValueError("reservation must be positive")
    if link.bw_reserved + mbps > link.bw_capacity + EPS:
        raise BandwidthExceeded(
            f"link {link.endpoints}: {mbps} Mbps requested, {link.bw_free} free")
    link.bw_reserved += mbps
    return link


def release_bandwidth(link: LogicalLink, mbps: float) -> LogicalLink:
    if mbps > link.bw_reserved + EPS:
        raise ReleaseUnderflow(f"link {link.endpoints}: release {mbps} > reserved {link.bw_reserved}")
    link.bw_reserved = max(0.0, link.bw_reserved - mbps)
    return link


def check_deadline(req: SfcRequest) -> bool:
    return req.elapsed <= req.e2e_limit + EPS


def acceptance_ratio(m: RunMetrics) -> float:
    total = sum(m.generated.values())
    if total == 0:
        raise NoRequests("no requests were generated")
    return sum(m.accepted.values()) / total


def throughput(m: RunMetrics, requests=None) -> float:
    """Accepted bandwidth in Gbps, from the request records when given."""
    if requests is None:
        return m.throughput_gbps
    return sum(r.bandwidth for r in requests if r.status == Status.ACCEPTED) / 1000.0
