"""VNF and SFC catalogs for the 5G-core chain workloads."""

from __future__ import annotations

from dataclasses import dataclass

VNF_TYPES: tuple[str, ...] = ("NAT", "FW", "VOC", "TM", "WO", "IDPS")
SFC_TYPES: tuple[str, ...] = ("CG", "AR", "VoIP", "VS", "MIoT", "Ind4.0")


@dataclass(frozen=True)
class VnfCatalogEntry:
    vnf_type: str
    cpu_demand: float  # GHz
    storage_demand: float  # GB
    ram_demand: float  # GB
    proc_time: float  # ms

    def __post_init__(self):
        if min(self.cpu_demand, self.storage_demand, self.ram_demand) <= 0:
            raise ValueError(f"{self.vnf_type}: resource demands must be positive")
        if self.proc_time <= 0:
            raise ValueError(f"{self.vnf_type}: proc_time must be positive")


@dataclass(frozen=True)
class SfcType:
    name: str
    chain: tuple[str, ...]
    bandwidth: tuple[float, float]  # Mbps; lo == hi for fixed-rate chains
    e2e_limit: float  # ms
    bundle_range: tuple[int, int]

    def __post_init__(self):
        if not self.chain:
            raise ValueError(f"{self.name}: empty chain")
        if self.e2e_limit <= 0:
            raise ValueError(f"{self.name}: e2e_limit must be positive")
        lo, hi = self.bundle_range
        if lo > hi or lo < 0:
            raise ValueError(f"{self.name}: bad bundle range {self.bundle_range}")
        if self.bandwidth[0] > self.bandwidth[1] or self.bandwidth[0] <= 0:
            raise ValueError(f"{self.name}: bad bandwidth {self.bandwidth}")

    @property
    def fixed_bandwidth(self) -> bool:
        return self.bandwidth[0] == self.bandwidth[1]


# Non-normative defaults: a 64 GHz DC fits roughly 10 mixed instances.
DEFAULT_VNFS: tuple[VnfCatalogEntry, ...] = (
    VnfCatalogEntry("NAT", 4.0, 120.0, 16.0, 1.0),
    VnfCatalogEntry("FW", 6.0, 160.0, 24.0, 1.0),
    VnfCatalogEntry("VOC", 8.0, 200.0, 32.0, 2.0),
    VnfCatalogEntry("TM", 4.0, 120.0, 16.0, 1.0),
    VnfCatalogEntry("WO", 6.0, 180.0, 24.0, 2.0),
    VnfCatalogEntry("IDPS", 8.0, 200.0, 32.0, 1.0),
)

DEFAULT_SFCS: tuple[SfcType, ...] = (
    SfcType("CG", ("NAT", "FW", "VOC", "WO", "IDPS"), (4.0, 4.0), 80.0, (40, 55)),
    SfcType("AR", ("NAT", "FW", "TM", "VOC", "IDPS"), (100.0, 100.0), 10.0, (1, 4)),
    SfcType("VoIP", ("NAT", "FW", "TM", "FW", "NAT"), (0.064, 0.064), 100.0, (100, 200)),
    SfcType("VS", ("NAT", "FW", "TM", "VOC", "IDPS"), (4.0, 4.0), 100.0, (50, 100)),
    SfcType("MIoT", ("NAT", "FW", "IDPS"), (1.0, 50.0), 5.0, (10, 15)),
    SfcType("Ind4.0", ("NAT", "FW"), (70.0, 70.0), 8.0, (1, 4)),
)


@dataclass(frozen=True)
class Catalog:
    vnfs: tuple[VnfCatalogEntry, ...] = DEFAULT_VNFS
    sfcs: tuple[SfcType, ...] = DEFAULT_SFCS

    def __post_init__(self):
        names = [v.vnf_type for v in self.vnfs]
        if len(set(names)) != len(names):
            raise ValueError("duplicate VNF types in catalog")
        for s in self.sfcs:
            missing = set(s.chain) - set(names)
            if missing:
                raise ValueError(f"{s.name}: chain uses unknown VNFs {sorted(missing)}")

    @property
    def n_vnf(self) -> int:
        return len(self.vnfs)

    @property
    def n_sfc(self) -> int:
        return len(self.sfcs)

    @property
    def n_actions(self) -> int:
        return 2 * self.n_vnf + 1

    def vnf_index(self, name: str) -> int:
        for i, v in enumerate(self.vnfs):
            if v.vnf_type == name:
                return i
        raise KeyError(name)

    def sfc_index(self, name: str) -> int:
        for i, s in enumerate(self.sfcs):
            if s.name == name:
                return i
        raise KeyError(name)

    def chain_indices(self, sfc: int) -> tuple[int, ...]:
        return tuple(self.vnf_index(v) for v in self.sfcs[sfc].chain)

    def vnf(self, name: str) -> VnfCatalogEntry:
        return self.vnfs[self.vnf_index(name)]


DEFAULT_CATALOG = Catalog()
