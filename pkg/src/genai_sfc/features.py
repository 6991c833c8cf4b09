"""State encoders shared by the DQN and the DC-value model.

Layouts (normative; checkpoints depend on them):

* DC resources, 17 floats: free cpu/storage/ram fractions, installed count per
  VNF type, busy count per VNF type, mean and min free-bandwidth fraction over
  incident links.
* DC chain view, 36 floats: per SFC type the allocatable-pending count, then
  per SFC type the min normalised slack of those, then per SFC type their
  summed bandwidth over link capacity; then per VNF type the number of
  pending requests that can reach this DC and need that VNF next, then per VNF
  type the min normalised slack of those, then per VNF type a 0/1 flag saying
  a placement here would succeed (demand exists and an idle instance or room
  to install one is available).
* Network view, 24 floats: per SFC type the live count, accepted fraction,
  min normalised slack over live requests and mean chain progress.

Counts are divided by a cap and clamped to [0, 1]; per-DC counts use a
smaller cap than network-wide ones so that a handful of requests registers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ACCEPTED, PENDING
from .sim import SfcEnv


@dataclass
class FeatureConfig:
    count_cap: float = 200.0  # network-wide request counts
    dc_count_cap: float = 10.0  # per-DC allocatable-request counts
    instance_cap: float = 16.0


def dims(n_vnf: int = 6, n_sfc: int = 6) -> tuple[int, int, int]:
    return 3 + 2 * n_vnf + 2, 3 * n_sfc + 3 * n_vnf, 4 * n_sfc


def dc_resources(env: SfcEnv, fc: FeatureConfig, dc_ids=None) -> np.ndarray:
    dcs = env.topology.datacenters
    if dc_ids is None:
        dc_ids = range(len(dcs))
    links = env.topology.links
    rows = []
    for d in dc_ids:
        dc = dcs[d]
        inc = [l.bw_free / l.bw_capacity for l in links if d in l.endpoints]
        rows.append(np.concatenate([
            dc.free_fractions(),
            np.minimum(dc.installed / fc.instance_cap, 1.0),
            np.minimum(dc.busy / fc.instance_cap, 1.0),
            [np.mean(inc) if inc else 1.0, np.min(inc) if inc else 1.0],
        ]))
    return np.clip(np.array(rows, dtype=np.float32), 0.0, 1.0)


def dc_chains(env: SfcEnv, fc: FeatureConfig, dc_ids=None) -> np.ndarray:
    nd = env.n_dc
    cols = np.arange(nd) if dc_ids is None else np.asarray(dc_ids)
    ns, nv = env.catalog.n_sfc, env.catalog.n_vnf
    out = np.zeros((len(cols), 3 * ns + 3 * nv), dtype=np.float32)
    out[:, ns:2 * ns] = 1.0
    vo = 3 * ns
    out[:, vo + nv:vo + 2 * nv] = 1.0
    p = np.flatnonzero(env.status == PENDING)
    if p.size == 0:
        return out
    reach = env.reachable(p, cols)
    nvnf = env.next_vnf[p]
    idle = env.installed_matrix() - env.busy_matrix()
    usable = (idle > 0) | env.installable_matrix()
    alloc = reach & usable[cols][:, nvnf].T
    sfc = env.sfc[p]
    onehot_s = (sfc[:, None] == np.arange(ns)).astype(np.float64)
    onehot_v = (nvnf[:, None] == np.arange(nv)).astype(np.float64)
    af = alloc.astype(np.float64)
    out[:, :ns] = np.minimum((onehot_s.T @ af).T / fc.dc_count_cap, 1.0)
    slack_n = np.clip((env.deadline[p] - env.elapsed[p]) / env.deadline[p], 0.0, 1.0)
    by_sfc = np.ones((ns, len(cols)))
    np.minimum.at(by_sfc, sfc, np.where(alloc, slack_n[:, None], 1.0))
    out[:, ns:2 * ns] = by_sfc.T
    out[:, 2 * ns:3 * ns] = np.minimum(
        (onehot_s.T @ (af * env.bw[p, None])).T / env.config.link_bw, 1.0)
    demand = (onehot_v.T @ reach.astype(np.float64)).T
    out[:, vo:vo + nv] = np.minimum(demand / fc.dc_count_cap, 1.0)
    by_vnf = np.ones((nv, len(cols)))
    np.minimum.at(by_vnf, nvnf, np.where(reach, slack_n[:, None], 1.0))
    out[:, vo + nv:vo + 2 * nv] = by_vnf.T
    out[:, vo + 2 * nv:] = (demand > 0) & usable[cols]
    return out


def network_view(env: SfcEnv, fc: FeatureConfig) -> np.ndarray:
    ns = env.catalog.n_sfc
    live = env.status < ACCEPTED
    sfc = env.sfc
    n = np.bincount(sfc, minlength=ns)
    n_live = np.bincount(sfc[live], minlength=ns)
    n_acc = np.bincount(sfc[env.status == ACCEPTED], minlength=ns)
    slack_n = np.clip((env.deadline - env.elapsed) / env.deadline, 0.0, 1.0)
    min_slack = np.ones(ns)
    np.minimum.at(min_slack, sfc[live], slack_n[live])
    prog = np.bincount(sfc[live], weights=(env.next_idx / env.chain_len)[live], minlength=ns)
    out = np.concatenate([
        np.minimum(n_live / fc.count_cap, 1.0),
        n_acc / np.maximum(n, 1),
        min_slack,
        prog / np.maximum(n_live, 1),
    ])
    return out.astype(np.float32)


def dc_state_matrix(env: SfcEnv, fc: FeatureConfig, dc_ids=None) -> np.ndarray:
    """Per-DC state vectors (resources followed by chain view), one row per DC."""
    return np.concatenate([dc_resources(env, fc, dc_ids), dc_chains(env, fc, dc_ids)], axis=1)
