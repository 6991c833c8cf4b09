import copy

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from genai_sfc.catalog import DEFAULT_CATALOG
from genai_sfc.model import (
    CapacityExceeded, BandwidthExceeded, Datacenter, LogicalLink, NoIdleInstance, NoRequests,
    NotInstalled, ReleaseUnderflow, RunMetrics, SfcError, SfcRequest, Status, acceptance_ratio,
    check_compute, check_deadline, check_storage, install_vnf, release_bandwidth,
    reserve_bandwidth, throughput, uninstall_vnf,
)

CAT = DEFAULT_CATALOG
NAT = CAT.vnf("NAT")
FW = CAT.vnf("FW")


def dc(cpu=120.0, storage=2000.0, ram=256.0):
    return Datacenter(0, cpu, storage, ram, CAT)


def metrics(generated, accepted=None, dropped=None):
    m = RunMetrics.empty(s.name for s in CAT.sfcs)
    m.generated.update(generated)
    m.accepted.update(accepted or {})
    m.dropped.update(dropped or {})
    return m


# -- storage / compute predicates -----------------------------------------------------------

def test_empty_dc_has_room_for_any_vnf():
    assert all(check_storage(dc(), v) for v in CAT.vnfs)


def test_storage_boundary_is_inclusive():
    d = dc(storage=NAT.storage_demand)
    assert check_storage(d, NAT)
    d = dc(storage=NAT.storage_demand - 1)
    assert not check_storage(d, NAT)


def test_small_dc_still_fits_one_instance():
    d = dc(cpu=12.0)
    assert all(check_compute(d, v) for v in CAT.vnfs if v.cpu_demand <= 12)


def test_compute_full_and_exact_fit():
    d = dc(cpu=2 * NAT.cpu_demand)
    install_vnf(d, NAT)
    assert check_compute(d, NAT)  # exact fit
    install_vnf(d, NAT)
    assert not check_compute(d, NAT)


# -- install / uninstall -----------------------------------------------------------------

def test_install_twice():
    d = dc()
    install_vnf(d, NAT)
    install_vnf(d, NAT)
    assert d.installed[CAT.vnf_index("NAT")] == 2


def test_install_reports_storage_violation():
    d = dc(storage=NAT.storage_demand - 1)
    with pytest.raises(CapacityExceeded) as e:
        install_vnf(d, NAT)
    assert e.value.constraint == "C1"


def test_install_reports_compute_violation():
    d = dc(cpu=NAT.cpu_demand - 1)
    with pytest.raises(CapacityExceeded) as e:
        install_vnf(d, NAT)
    assert e.value.constraint == "C2"


def test_install_reports_ram_violation():
    d = dc(ram=NAT.ram_demand - 1)
    with pytest.raises(CapacityExceeded) as e:
        install_vnf(d, NAT)
    assert e.value.constraint == "RAM"


def test_uninstall_cases():
    d = dc()
    install_vnf(d, NAT)
    uninstall_vnf(d, NAT)
    assert d.installed[0] == 0
    with pytest.raises(NotInstalled):
        uninstall_vnf(d, NAT)
    install_vnf(d, NAT)
    d.busy[0] = 1
    with pytest.raises(NoIdleInstance):
        uninstall_vnf(d, NAT)


# -- bandwidth -----------------------------------------------------------------------------

def test_reserve_and_boundaries():
    link = LogicalLink((0, 1), 1000.0)
    reserve_bandwidth(link, 100)
    assert link.bw_reserved == 100
    reserve_bandwidth(link, 900)
    assert link.bw_free == 0
    link = LogicalLink((0, 1), 1000.0, 900.0)
    with pytest.raises(BandwidthExceeded):
        reserve_bandwidth(link, 100 + 1e-3)
    with pytest.raises(ValueError):
        reserve_bandwidth(link, 0)


def test_release_cases():
    link = LogicalLink((0, 1), 1000.0, 100.0)
    release_bandwidth(link, 0)
    assert link.bw_reserved == 100
    release_bandwidth(link, 100)
    assert link.bw_reserved == 0
    link = LogicalLink((0, 1), 1000.0, 100.0)
    with pytest.raises(ReleaseUnderflow):
        release_bandwidth(link, 101)


def test_link_endpoints_normalised_and_distinct():
    assert LogicalLink((3, 1), 10.0).endpoints == (1, 3)
    with pytest.raises(ValueError):
        LogicalLink((2, 2), 10.0)


# -- deadline and metrics --------------------------------------------------------------------

def _req(name, elapsed):
    s = CAT.sfc_index(name)
    return SfcRequest(0, s, 0, 1, 1.0, CAT.sfcs[s].e2e_limit, CAT.chain_indices(s), elapsed=elapsed)


def test_deadline_examples():
    assert check_deadline(_req("CG", 80.0))
    assert not check_deadline(_req("AR", 10.5))
    assert check_deadline(_req("AR", 0.0))


def test_acceptance_ratio_examples():
    gen = {s.name: 1 for s in CAT.sfcs}
    assert acceptance_ratio(metrics(gen, gen)) == 1.0
    assert acceptance_ratio(metrics(gen)) == 0.0
    m = metrics({"CG": 40, "VoIP": 100, "MIoT": 10}, {"CG": 40, "VoIP": 100})
    assert acceptance_ratio(m) == pytest.approx(140 / 150)
    with pytest.raises(NoRequests):
        acceptance_ratio(metrics({}))


@given(st.lists(st.integers(0, 50), min_size=6, max_size=6), st.integers(0, 5), st.data())
def test_acceptance_ratio_monotone_in_accepted(gen, k, data):
    names = [s.name for s in CAT.sfcs]
    if sum(gen) == 0:
        gen[0] = 1
    acc = [data.draw(st.integers(0, g)) for g in gen]
    i = k % 6
    more = list(acc)
    more[i] = min(gen[i], acc[i] + 1)
    a = acceptance_ratio(metrics(dict(zip(names, gen)), dict(zip(names, acc))))
    b = acceptance_ratio(metrics(dict(zip(names, gen)), dict(zip(names, more))))
    assert 0.0 <= a <= b <= 1.0


def _accepted(name, n):
    s = CAT.sfc_index(name)
    return [SfcRequest(i, s, 0, 1, CAT.sfcs[s].bandwidth[0], CAT.sfcs[s].e2e_limit,
                       CAT.chain_indices(s), status=Status.ACCEPTED) for i in range(n)]


def test_throughput_examples():
    m = metrics({})
    assert throughput(m, _accepted("Ind4.0", 1)) == pytest.approx(0.070)
    assert throughput(m, _accepted("CG", 10)) == pytest.approx(0.040)
    assert throughput(m, []) == 0.0


def test_mean_e2e_is_none_without_accepted():
    m = metrics({"AR": 2})
    m.e2e_samples["CG"] = [10.0, 20.0]
    e2e = m.mean_e2e()
    assert e2e["AR"] is None
    assert e2e["CG"] == 15.0


# -- constraint fuzz over the mutators ------------------------------------------------------

OPS = st.tuples(st.sampled_from(["install", "uninstall", "reserve", "release", "busy", "free"]),
                st.integers(0, 2), st.integers(0, 5), st.floats(0.0, 600.0))


def _state(dcs, links):
    return ([(d.installed.tolist(), d.busy.tolist()) for d in dcs],
            [l.bw_reserved for l in links])


@settings(max_examples=50)
@given(st.lists(OPS, min_size=200, max_size=200),
       st.lists(st.floats(12.0, 120.0), min_size=3, max_size=3))
def test_mutator_fuzz_keeps_constraints(ops, cpus):
    # 50 examples x 200 calls = 10^4 mutator calls
    dcs = [Datacenter(i, c, 2000.0, 256.0, CAT) for i, c in enumerate(cpus)]
    links = [LogicalLink((0, 1), 1000.0), LogicalLink((1, 2), 1000.0), LogicalLink((0, 2), 1000.0)]
    for op, i, v, mbps in ops:
        d, link, entry = dcs[i], links[i], CAT.vnfs[v]
        before = _state(dcs, links)
        try:
            if op == "install":
                install_vnf(d, entry)
            elif op == "uninstall":
                uninstall_vnf(d, entry)
            elif op == "reserve":
                reserve_bandwidth(link, mbps)
            elif op == "release":
                release_bandwidth(link, mbps)
            elif op == "busy" and d.idle(v) > 0:
                d.busy[v] += 1
            elif op == "free" and d.busy[v] > 0:
                d.busy[v] -= 1
        except (SfcError, ValueError):
            assert _state(dcs, links) == before
        for x in dcs:
            x.check_invariants()
        for l in links:
            assert -1e-9 <= l.bw_reserved <= l.bw_capacity + 1e-9
