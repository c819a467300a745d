"""Per-TTI RT control: guaranteed RBs, EDF sharing of free RBs and the
three-state anomaly-mitigation FSM.

FSM per service, driven by the head-of-line age q (TTIs):

* q >= q_u            -> B, n_req += 1 (capped at n_cell_rb)
* q_l <= q < q_u      -> C with n_req kept if coming from B or C; A stays A
* q < q_l or empty    -> A, n_req = 0
"""
from __future__ import annotations

import heapq
from collections import deque
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

from .domain import CellConfig, Packet, ServiceSpec
from .errors import ConfigError

STATE_A, STATE_B, STATE_C = "A", "B", "C"
DEFAULT_ETA = 0.75
DEFAULT_TAU = 0.3


@dataclass(frozen=True)
class ServiceRtState:
    fsm: str = STATE_A
    n_req: int = 0
    n_min_i: int = 0
    q: int = 0
    q_u: int = 1
    q_l: int = 0


def thresholds(w_th: float, t_slot: float, eta: float = DEFAULT_ETA, tau: float = DEFAULT_TAU) -> tuple[int, int]:
    """(q_u, q_l) = (floor(eta*Q_T), floor(tau*Q_T)) with Q_T = floor(w_th/t_slot)."""
    if not (0 < eta <= 1 and 0 < tau <= 1):
        raise ConfigError(f"eta and tau must be in (0,1], got {eta}, {tau}")
    q_t = int(w_th / t_slot + 1e-9)
    q_u, q_l = int(eta * q_t + 1e-9), int(tau * q_t + 1e-9)
    if not q_u > q_l >= 0:
        raise ConfigError(f"need q_u > q_l (got {q_u}, {q_l}) for w_th={w_th}, eta={eta}, tau={tau}")
    return q_u, q_l


def initial_states(
    specs: Sequence[ServiceSpec], cell: CellConfig, eta: float = DEFAULT_ETA, tau: float = DEFAULT_TAU
) -> list[ServiceRtState]:
    out = []
    for s in specs:
        q_u, q_l = thresholds(s.w_th, cell.t_slot, eta, tau)
        out.append(ServiceRtState(q_u=q_u, q_l=q_l))
    return out


def fsm_step(state: ServiceRtState, q: int, empty: bool = False, n_req_cap: int | None = None) -> ServiceRtState:
    """Advance one service's FSM given its head-of-line age ``q``."""
    if q < 0:
        raise ValueError("q must be >= 0")
    if empty or q < state.q_l:
        return replace(state, fsm=STATE_A, n_req=0, q=q)
    if q >= state.q_u:
        n_req = state.n_req + 1
        if n_req_cap is not None:
            n_req = min(n_req, n_req_cap)
        return replace(state, fsm=STATE_B, n_req=n_req, q=q)
    if state.fsm == STATE_A:
        return replace(state, q=q)
    return replace(state, fsm=STATE_C, q=q)


def mitigate(states: Sequence[ServiceRtState], n_min: Sequence[int]) -> list[int]:
    """Move guaranteed RBs from services in A to services in B or C.

    ``sum(n_req)`` over borrowers single-RB transfers are made, round-robin
    over donors and borrowers in id order. A donor down to one RB leaves the
    donor list; the loop ends early once no donor is left.
    """
    out = list(n_min)
    donors = [m for m, s in enumerate(states) if s.fsm == STATE_A]
    borrowers = [m for m, s in enumerate(states) if s.fsm in (STATE_B, STATE_C)]
    if not donors or not borrowers:
        return out
    n_ite = sum(states[b].n_req for b in borrowers)
    j_d = j_b = done = 0
    while done < n_ite and donors:
        d = donors[j_d]
        if out[d] <= 1:
            donors.pop(j_d)
            if j_d >= len(donors):
                j_d = 0
            continue
        b = borrowers[j_b]
        out[d] -= 1
        out[b] += 1
        done += 1
        j_d = (j_d + 1) % len(donors)
        j_b = (j_b + 1) % len(borrowers)
    return out


class ServiceQueue:
    """FIFO of one service's packets with a running count of RBs to drain it."""

    __slots__ = ("packets", "need_rbs", "bits")

    def __init__(self):
        self.packets: deque[Packet] = deque()
        self.need_rbs = 0
        self.bits = 0

    def push(self, pkt: Packet) -> None:
        self.packets.append(pkt)
        self.need_rbs += pkt.rbs_needed()
        self.bits += pkt.bits_remaining

    def __len__(self):
        return len(self.packets)

    def head_age(self, tti: int) -> int:
        return tti - self.packets[0].arrival_tti if self.packets else 0

    def transmit(self, rbs: int, tti: int) -> list[Packet]:
        """Spend ``rbs`` RBs on head packets in FIFO order; return the completed ones.

        One RB carries bits of a single packet, so the last RB of a packet may
        be partly empty.
        """
        done = []
        q = self.packets
        while rbs > 0 and q:
            pkt = q[0]
            need = pkt.rbs_needed()
            use = min(rbs, need)
            rbs -= use
            self.need_rbs -= use
            pkt.rbs_used += use
            sent = min(pkt.bits_remaining, use * pkt.bits_per_rb)
            pkt.bits_remaining -= sent
            self.bits -= sent
            if pkt.bits_remaining == 0:
                q.popleft()
                done.append(pkt)
        return done


def edf_allocate_free(
    free_rbs: int,
    backlogged: dict[int, Iterable[tuple[float, int]]],
) -> dict[int, int]:
    """Share ``free_rbs`` packet by packet, earliest head deadline first.

    ``backlogged`` maps service id to its still-pending packets in FIFO order
    as (absolute deadline, RBs needed). Ties go to the lower service id.
    """
    grants = {sid: 0 for sid in backlogged}
    iters = {sid: iter(pkts) for sid, pkts in backlogged.items()}
    heap = []
    for sid, it in iters.items():
        nxt = next(it, None)
        if nxt is not None:
            heap.append((nxt[0], sid, nxt[1]))
    heapq.heapify(heap)
    while free_rbs > 0 and heap:
        deadline, sid, need = heapq.heappop(heap)
        give = min(free_rbs, need)
        grants[sid] += give
        free_rbs -= give
        if give == need:
            nxt = next(iters[sid], None)
            if nxt is not None:
                heapq.heappush(heap, (nxt[0], sid, nxt[1]))
    return grants


def _pending_after(queue: ServiceQueue, skip_rbs: int, w_th: float, t_slot: float):
    """(deadline, rbs) of packets left once ``skip_rbs`` head RBs are already granted."""
    for pkt in queue.packets:
        need = pkt.rbs_needed()
        if skip_rbs >= need:
            skip_rbs -= need
            continue
        # rounded so that mathematically equal deadlines tie exactly
        yield round(pkt.arrival_tti * t_slot + w_th, 12), need - skip_rbs
        skip_rbs = 0


def edf_share(
    free_rbs: int,
    queues: Sequence[ServiceQueue],
    granted: Sequence[int],
    specs: Sequence[ServiceSpec],
    t_slot: float,
) -> list[int]:
    """EDF sharing of ``free_rbs`` over whatever the guaranteed grants left queued."""
    backlog = {
        m: _pending_after(q, granted[m], specs[m].w_th, t_slot)
        for m, q in enumerate(queues)
        if q.need_rbs > granted[m]
    }
    extra = edf_allocate_free(free_rbs, backlog)
    return [granted[m] + extra.get(m, 0) for m in range(len(queues))]


@dataclass
class TickResult:
    grants: list[int]
    states: list[ServiceRtState]
    n_min_i: list[int]


def rt_tick(
    queues: Sequence[ServiceQueue],
    n_min: Sequence[int],
    states: Sequence[ServiceRtState],
    cell: CellConfig,
    specs: Sequence[ServiceSpec],
    tti: int,
    mitigation: bool = True,
) -> TickResult:
    """One TTI of RT control; call once per TTI after arrivals are enqueued.

    Head ages -> FSM -> mitigation -> guaranteed grants min(demand, n_min_i)
    -> EDF sharing of the RBs nobody used.
    """
    new_states = []
    for q, s in zip(queues, states):
        age = q.head_age(tti)
        new_states.append(fsm_step(s, age, empty=not q.packets, n_req_cap=cell.n_cell_rb))
    n_min_i = mitigate(new_states, n_min) if mitigation else list(n_min)
    new_states = [replace(s, n_min_i=n) for s, n in zip(new_states, n_min_i)]
    granted = [min(q.need_rbs, n) for q, n in zip(queues, n_min_i)]
    free = cell.n_cell_rb - sum(granted)
    grants = edf_share(free, queues, granted, specs, cell.t_slot) if free > 0 else granted
    return TickResult(grants, new_states, n_min_i)


def edf_only_tick(queues: Sequence[ServiceQueue], cell: CellConfig, specs: Sequence[ServiceSpec]) -> list[int]:
    """All RBs shared by EDF with no guarantees."""
    return edf_share(cell.n_cell_rb, queues, [0] * len(queues), specs, cell.t_slot)

