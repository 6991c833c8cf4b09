"""Discrete-time SFC provisioning simulator with a DQN action policy and a VAE-based DC selector."""

from .catalog import DEFAULT_CATALOG, Catalog, SfcType, VnfCatalogEntry
from .model import RunMetrics, Status, acceptance_ratio, throughput
from .sim import EventKind, SfcEnv, SimConfig, run_episode

__all__ = [
    "Catalog", "DEFAULT_CATALOG", "EventKind", "RunMetrics", "SfcEnv", "SfcType", "SimConfig",
    "Status", "VnfCatalogEntry", "acceptance_ratio", "run_episode", "throughput",
]
