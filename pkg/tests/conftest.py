import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from genai_sfc.catalog import DEFAULT_CATALOG
from genai_sfc.model import Datacenter, LogicalLink, NetworkTopology, SfcRequest
from genai_sfc.sim import SfcEnv, SimConfig

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def make_env(requests=(), dc_count=2, cpu=120.0, storage=2000.0, ram=256.0, link_bw=1000.0,
             delay=1.0, catalog=DEFAULT_CATALOG, **cfg):
    """Hand-built environment: identical DCs, full mesh, the given requests only."""
    config = SimConfig(dc_count=dc_count, link_bw=link_bw, link_prop_delay=delay, **cfg)
    dcs = [Datacenter(i, cpu, storage, ram, catalog) for i in range(dc_count)]
    topo = NetworkTopology.full_mesh(dcs, link_bw, delay)
    return SfcEnv(config, catalog, list(requests), topo)


def request(i, sfc_name, src=0, dst=1, bw=None, catalog=DEFAULT_CATALOG, elapsed=0.0):
    s = catalog.sfc_index(sfc_name)
    t = catalog.sfcs[s]
    return SfcRequest(i, s, src, dst, t.bandwidth[0] if bw is None else bw, t.e2e_limit,
                      catalog.chain_indices(s), elapsed=elapsed)


@pytest.fixture
def catalog():
    return DEFAULT_CATALOG


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
