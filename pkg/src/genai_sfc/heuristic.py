"""Rule-based baseline: serve the most urgent chain with the nearest usable instance."""

from __future__ import annotations

import numpy as np

from .model import PENDING, can_install
from .sim import SfcEnv


def heuristic_step(env: SfcEnv) -> tuple[int, int]:
    """Return ``(dc_id, action_code)`` for the current state.

    Takes the pending request with the least slack (lowest id on ties). If a
    reachable DC has an idle instance of its next VNF, allocate on the nearest
    one by propagation delay; otherwise install on the reachable DC with the
    largest free compute fraction. When nothing fits, reclaims room by
    uninstalling one idle instance (of the type least demanded by pending
    requests) on the reachable DC that would have the most compute once its idle
    instances were gone. Idles when none of this is possible.
    """
    idle_code = 2 * env.catalog.n_vnf
    pending = np.flatnonzero(env.status == PENDING)
    if pending.size == 0:
        return 0, idle_code
    r = int(pending[np.argmin(env.deadline[pending] - env.elapsed[pending])])
    v = int(env.next_vnf[r])
    here = int(env.prev_dc[r]) if env.prev_dc[r] >= 0 else int(env.source[r])
    reach = env.reachable(np.array([r]))[0]
    dcs = env.topology.datacenters

    with_idle = [d for d in range(env.n_dc) if reach[d] and dcs[d].idle(v) > 0]
    if with_idle:
        best = min(with_idle, key=lambda d: (env.path_delay[here, d], d))
        return best, v

    entry = env.catalog.vnfs[v]
    fits = [d for d in range(env.n_dc) if reach[d] and can_install(dcs[d], entry)]
    if fits:
        best = min(fits, key=lambda d: (-dcs[d].free_fractions()[0], d))
        return best, v

    nv = env.catalog.n_vnf
    demand = np.bincount(env.next_vnf[pending], minlength=nv)
    cpu = np.array([x.cpu_demand for x in env.catalog.vnfs])
    best, best_room = None, -np.inf
    for d in range(env.n_dc):
        if not reach[d]:
            continue
        idle = dcs[d].installed - dcs[d].busy
        idle[v] = 0
        if not idle.any():
            continue
        room = dcs[d].cpu_capacity - dcs[d].used_cpu + float(idle @ cpu)
        if room > best_room:
            best, best_room = d, room
    if best is not None:
        idle = dcs[best].installed - dcs[best].busy
        idle[v] = 0
        types = [t for t in range(nv) if idle[t] > 0]
        victim = min(types, key=lambda t: (demand[t], -idle[t], t))
        return best, nv + victim
    return here, idle_code


class HeuristicPolicy:
    """Adapter exposing ``heuristic_step`` as a DC selector plus action agent."""

    def __init__(self):
        self._planned: tuple[int, int] | None = None

    def select_dc(self, env: SfcEnv) -> int:
        dc, code = heuristic_step(env)
        if code == 2 * env.catalog.n_vnf and env.eligible.any():
            # a global wait: idle every DC in turn so the tick can end
            dc = int(np.flatnonzero(env.eligible)[0])
        self._planned = (dc, code)
        return dc

    def act(self, env: SfcEnv, dc_id: int) -> int:
        if self._planned is None or self._planned[0] != dc_id:
            self._planned = None
            return heuristic_step(env)[1]
        code = self._planned[1]
        self._planned = None
        return code
