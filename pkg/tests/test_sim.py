import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_env, request
from genai_sfc.catalog import DEFAULT_CATALOG
from genai_sfc.model import (
    ACCEPTED, DROPPED, IN_TRANSIT, PENDING, PROCESSING, LogicalLink, NetworkTopology,
    Datacenter, NoRequests, acceptance_ratio,
)
from genai_sfc.sim import (
    EpisodeHook, EventKind, SfcEnv, SimConfig, SimEvent, generate_bundles, random_dc_selector,
    reward_of, run_episode,
)

CAT = DEFAULT_CATALOG
NV = CAT.n_vnf
IDLE = 2 * NV
NAT, FW, WO = CAT.vnf_index("NAT"), CAT.vnf_index("FW"), CAT.vnf_index("WO")


def ev(kind):
    return SimEvent(kind, 0, None, None)


# -- config --------------------------------------------------------------------------------

@pytest.mark.parametrize("kw", [dict(tick_ms=0), dict(dc_count=1), dict(max_ticks=0),
                                dict(request_count_multiplier=0), dict(bundle_scale=0)])
def test_sim_config_rejects(kw):
    with pytest.raises(ValueError):
        SimConfig(**kw)


def test_sim_config_defaults():
    c = SimConfig()
    assert (c.tick_ms, c.dc_cpu_range, c.dc_storage, c.dc_ram, c.link_bw, c.link_prop_delay) == \
        (1.0, (12.0, 120.0), 2000.0, 256.0, 1000.0, 1.0)


# -- bundle generation -----------------------------------------------------------------------

@given(st.integers(0, 2**32 - 1))
def test_bundle_sizes_within_ranges(seed):
    reqs = generate_bundles(np.random.default_rng(seed), CAT, 1, 4)
    counts = np.bincount([r.sfc_type for r in reqs], minlength=CAT.n_sfc)
    for s, t in enumerate(CAT.sfcs):
        assert t.bundle_range[0] <= counts[s] <= t.bundle_range[1]
    for r in reqs:
        assert r.source_dc != r.dest_dc
        assert 0 <= r.source_dc < 4 and 0 <= r.dest_dc < 4
        lo, hi = CAT.sfcs[r.sfc_type].bandwidth
        assert lo <= r.bandwidth <= hi
        assert r.status == PENDING


def test_cg_bundle_always_in_range():
    for seed in range(200):
        reqs = generate_bundles(np.random.default_rng(seed), CAT, 1, 2)
        n = sum(r.sfc_type == CAT.sfc_index("CG") for r in reqs)
        assert 40 <= n <= 55


def test_multiplier_two_is_two_independent_draws():
    one = generate_bundles(np.random.default_rng(7), CAT, 1, 4)
    two = generate_bundles(np.random.default_rng(7), CAT, 2, 4)
    assert [(r.sfc_type, r.source_dc, r.dest_dc, r.bandwidth) for r in two[:len(one)]] == \
        [(r.sfc_type, r.source_dc, r.dest_dc, r.bandwidth) for r in one]
    counts = np.bincount([r.sfc_type for r in two], minlength=CAT.n_sfc)
    for s, t in enumerate(CAT.sfcs):
        assert 2 * t.bundle_range[0] <= counts[s] <= 2 * t.bundle_range[1]


def test_generation_is_seeded():
    a = generate_bundles(np.random.default_rng(3), CAT, 2, 4)
    b = generate_bundles(np.random.default_rng(3), CAT, 2, 4)
    assert a == b


def test_miot_bandwidth_varies_and_is_fixed_per_request():
    env = SfcEnv(SimConfig(seed=5))
    miot = env.bw[env.sfc == CAT.sfc_index("MIoT")]
    assert len(set(miot.tolist())) > 1
    assert np.all((miot >= 1) & (miot <= 50))


# -- actions -------------------------------------------------------------------------------

def test_place_first_vnf_at_source():
    env = make_env([request(0, "Ind4.0", src=0, dst=1)])
    events, reward = env.apply_action(0, NAT)
    assert events[0].kind is EventKind.VNF_ALLOCATED and events[0].request_id == 0
    assert reward == 0.0
    assert env.status[0] == PROCESSING
    assert env.topology.datacenters[0].busy[NAT] == 1


def test_idle_is_free_and_changes_nothing():
    env = make_env([request(0, "Ind4.0")])
    before = env.snapshot()
    events, reward = env.apply_action(1, IDLE)
    assert events[0].kind is EventKind.IDLE and reward == 0.0
    assert env.snapshot() == before


def test_place_without_demand_is_invalid():
    env = make_env([request(0, "Ind4.0")])
    before = env.snapshot()
    events, reward = env.apply_action(0, WO)
    assert events[0].kind is EventKind.INVALID_ACTION and reward == -1.0
    assert env.snapshot() == before


def test_place_without_capacity_is_invalid():
    env = make_env([request(0, "Ind4.0")], cpu=CAT.vnfs[NAT].cpu_demand - 1)
    events, _ = env.apply_action(0, NAT)
    assert events[0].kind is EventKind.INVALID_ACTION


def test_uninstall_cases():
    env = make_env([request(0, "Ind4.0"), request(1, "Ind4.0")])
    assert env.apply_action(0, NV + NAT)[0][0].kind is EventKind.INVALID_ACTION
    env.apply_action(0, NAT)  # request 0 now busy on a NAT
    assert env.apply_action(0, NV + NAT)[0][0].kind is EventKind.INVALID_ACTION


def test_essential_uninstall_classification():
    env = make_env([request(0, "Ind4.0"), request(1, "Ind4.0")])
    from genai_sfc.model import install_vnf
    install_vnf(env.topology.datacenters[1], CAT.vnfs[NAT])
    install_vnf(env.topology.datacenters[1], CAT.vnfs[WO])
    ev1, r1 = env.apply_action(1, NV + NAT)  # both requests still need NAT
    assert ev1[0].kind is EventKind.VNF_UNINSTALLED_ESSENTIAL and r1 == -0.5
    ev2, r2 = env.apply_action(1, NV + WO)
    assert ev2[0].kind is EventKind.VNF_UNINSTALLED and r2 == 0.0


def test_reuses_idle_instance_before_installing():
    env = make_env([request(0, "Ind4.0"), request(1, "Ind4.0")], cpu=CAT.vnfs[NAT].cpu_demand)
    env.apply_action(0, NAT)
    for _ in range(2):
        env.advance_tick()
    assert env.topology.datacenters[0].idle(NAT) == 1
    events, _ = env.apply_action(0, NAT)
    assert events[0].kind is EventKind.VNF_ALLOCATED
    assert env.topology.datacenters[0].installed[NAT] == 1


def test_cross_dc_hop_reserves_bandwidth_until_terminal():
    env = make_env([request(0, "Ind4.0", src=0, dst=1)])
    env.apply_action(0, NAT)
    env.advance_tick()  # NAT done
    assert env.status[0] == PENDING
    env.apply_action(1, FW)
    assert env.topology.links[0].bw_reserved == 70.0
    assert env.status[0] == IN_TRANSIT
    events = []
    while env.has_live():
        events += env.advance_tick()
    assert [e.kind for e in events] == [EventKind.SFC_ACCEPTED]
    assert env.elapsed[0] == 3.0  # 1 ms NAT + 1 ms hop + 1 ms FW
    assert env.topology.links[0].bw_reserved == 0.0


def test_missing_link_blocks_cross_dc_placement():
    dcs = [Datacenter(i, 120.0, 2000.0, 256.0, CAT) for i in range(3)]
    topo = NetworkTopology(dcs, [LogicalLink((0, 1), 1000.0), LogicalLink((1, 2), 1000.0)])
    env = SfcEnv(SimConfig(dc_count=3), CAT, [request(0, "Ind4.0", src=0, dst=1)], topo)
    env.apply_action(0, NAT)
    env.advance_tick()
    assert env.apply_action(2, FW)[0][0].kind is EventKind.INVALID_ACTION
    assert env.apply_action(1, FW)[0][0].kind is EventKind.VNF_ALLOCATED


def test_bandwidth_shortage_blocks_placement():
    env = make_env([request(0, "Ind4.0")], link_bw=50.0)
    env.apply_action(0, NAT)
    env.advance_tick()
    assert env.apply_action(1, FW)[0][0].kind is EventKind.INVALID_ACTION
    assert env.apply_action(0, FW)[0][0].kind is EventKind.VNF_ALLOCATED


# -- candidate selection --------------------------------------------------------------------

def test_candidate_min_slack():
    env = make_env([request(0, "VS", elapsed=60.0), request(1, "CG", elapsed=77.0)])
    assert env.select_candidate(0, NAT) == 1  # slack 3 ms beats 40 ms


def test_candidate_none_and_tie():
    env = make_env([request(0, "Ind4.0"), request(1, "Ind4.0")])
    assert env.select_candidate(0, WO) is None
    assert env.select_candidate(0, NAT) == 0


# -- time ------------------------------------------------------------------------------------

def test_last_vnf_finishing_in_time_is_accepted():
    env = make_env([request(0, "Ind4.0", src=0, dst=0 + 1)])
    env.apply_action(1, NAT)  # transit source -> 1
    kinds = []
    for _ in range(2):
        kinds += [e.kind for e in env.advance_tick()]
    env.apply_action(1, FW)
    kinds += [e.kind for e in env.advance_tick()]
    assert kinds == [EventKind.SFC_ACCEPTED]
    assert env.status[0] == ACCEPTED


def test_ar_at_deadline_drops_after_one_tick():
    env = make_env([request(0, "AR", elapsed=10.0)])
    events = env.advance_tick()
    assert [e.kind for e in events] == [EventKind.SFC_DROPPED]
    assert env.status[0] == DROPPED and env.elapsed[0] > 10.0


def test_quiet_tick_emits_nothing():
    env = make_env([])
    assert env.advance_tick() == []


def test_drop_mid_processing_frees_instance():
    env = make_env([request(0, "MIoT", elapsed=4.0, bw=10.0)])
    env.apply_action(0, NAT)
    env.advance_tick()
    env.apply_action(1, FW)  # transit, holds FW on DC 1
    events = env.advance_tick()
    assert [e.kind for e in events] == [EventKind.SFC_DROPPED]
    assert env.topology.datacenters[1].busy.sum() == 0
    assert env.topology.links[0].bw_reserved == 0.0
    env.check_invariants()


# -- rewards -----------------------------------------------------------------------------

def test_reward_examples():
    assert reward_of([ev(EventKind.SFC_ACCEPTED)]) == 2.0
    assert reward_of([ev(EventKind.SFC_DROPPED), ev(EventKind.INVALID_ACTION)]) == -2.5
    assert reward_of([ev(EventKind.IDLE)]) == 0.0
    assert reward_of([ev(EventKind.VNF_UNINSTALLED_ESSENTIAL)]) == -0.5


# -- episodes ------------------------------------------------------------------------------

def _random_agent(seed):
    rng = np.random.default_rng(seed)
    return lambda env, dc: int(rng.integers(2 * env.catalog.n_vnf + 1))


class Trace(EpisodeHook):
    def __init__(self):
        self.steps = []

    def after(self, env, step):
        self.steps.append((step.dc_id, step.action, tuple(step.events), step.reward))

    def on_tick(self, env, events, reward, done):
        self.steps.append(("tick", tuple(events), reward))


def test_no_requests_means_ratio_undefined():
    env = make_env([])
    m = run_episode(env, lambda e: 0, lambda e, d: IDLE)
    assert env.t == 0
    with pytest.raises(NoRequests):
        acceptance_ratio(m)


def test_single_request_scripted_agent_accepts():
    env = make_env([request(0, "Ind4.0", src=0, dst=1)])

    def agent(e, dc):
        return int(e.next_vnf[0]) if e.status[0] == PENDING and dc == 0 else IDLE

    m = run_episode(env, lambda e: 0 if e.eligible[0] else 1, agent)
    assert acceptance_ratio(m) == 1.0
    assert m.mean_e2e()["Ind4.0"] == 3.0  # NAT, FW, hop to destination


def test_episode_is_deterministic():
    def run():
        env = SfcEnv(SimConfig(dc_count=3, bundle_scale=0.3, seed=11))
        t = Trace()
        m = run_episode(env, random_dc_selector(np.random.default_rng(1)), _random_agent(2), [t])
        return m, t.steps

    (m1, t1), (m2, t2) = run(), run()
    assert t1 == t2
    assert m1 == m2


def test_idle_waits_out_the_tick_for_that_dc_only():
    env = make_env([request(0, "Ind4.0")], dc_count=3)
    env.apply_action(1, IDLE)
    assert env.eligible.tolist() == [True, False, True]
    env.advance_tick()
    assert env.eligible.all()


def test_tick_budget_is_flagged_not_raised():
    env = SfcEnv(SimConfig(dc_count=2, bundle_scale=0.2, max_ticks=3, seed=1))
    m = run_episode(env, lambda e: 0, lambda e, d: IDLE)
    assert m.tick_budget_exhausted
    for s in m.generated:
        assert m.accepted[s] + m.dropped[s] + m.pending(s) == m.generated[s]


class Checker(EpisodeHook):
    """Checks invariants after every decision and every tick."""

    def __init__(self):
        self.snap = None
        self.invalid = 0

    def before(self, env, dc_id):
        self.snap = env.snapshot()

    def after(self, env, step):
        if step.events[0].kind is EventKind.INVALID_ACTION:
            self.invalid += 1
            if not step.tick_ended:
                assert env.snapshot() == self.snap
        self._check(env, step.events)

    def on_tick(self, env, events, reward, done):
        self._check(env, events)

    def _check(self, env, events):
        env.check_invariants()
        for e in events:
            if e.kind is EventKind.SFC_DROPPED:
                assert env.elapsed[e.request_id] > env.deadline[e.request_id]
            if e.kind is EventKind.SFC_ACCEPTED:
                assert env.elapsed[e.request_id] <= env.deadline[e.request_id]
        for s in range(env.catalog.n_sfc):
            mine = env.sfc == s
            n_live = int((mine & (env.status < ACCEPTED)).sum())
            n_term = int((mine & (env.status >= ACCEPTED)).sum())
            assert n_live + n_term == int(mine.sum())


@settings(max_examples=8)
@given(st.integers(0, 2**31 - 1))
def test_random_episode_keeps_invariants(seed):
    env = SfcEnv(SimConfig(dc_count=3, bundle_scale=0.3, seed=seed))
    chk = Checker()
    m = run_episode(env, random_dc_selector(np.random.default_rng(seed)), _random_agent(seed), [chk])
    assert chk.invalid > 0
    assert not m.tick_budget_exhausted
    for s in m.generated:
        assert m.accepted[s] + m.dropped[s] == m.generated[s]
