"""Traffic inputs: trace CSV ingestion, UE grouping, synthetic generators and
rolling observation windows.

A trace CSV has the header ``tti,ue_id,bits,rbs`` and one row per (TTI, UE)
with the incoming bits and the RBs the real scheduler used (0 if unknown).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, NamedTuple, Sequence

import numpy as np

from .errors import BadGeneratorParams, EmptyTrace, InsufficientHistory, ParseError, TooFewUes

TRACE_HEADER = ("tti", "ue_id", "bits", "rbs")


class TraceRecord(NamedTuple):
    tti: int
    ue_id: int
    bits: int
    rbs: int


def load_trace(path: str | Path) -> list[TraceRecord]:
    """Parse a trace CSV; records come back sorted by (tti, ue_id)."""
    records = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise EmptyTrace(f"{path}: empty file")
        if tuple(h.strip() for h in header) != TRACE_HEADER:
            raise ParseError(1, f"expected header {','.join(TRACE_HEADER)}, got {','.join(header)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise ParseError(lineno, f"expected 4 fields, got {len(row)}")
            try:
                tti, ue, bits, rbs = (int(x) for x in row)
            except ValueError as exc:
                raise ParseError(lineno, f"non-integer field: {exc}") from None
            if tti < 0 or bits < 0 or rbs < 0:
                raise ParseError(lineno, "tti, bits and rbs must be non-negative")
            records.append(TraceRecord(tti, ue, bits, rbs))
    if not records:
        raise EmptyTrace(f"{path}: no records")
    records.sort(key=lambda r: (r.tti, r.ue_id))
    return records


def write_trace(path: str | Path, records: Sequence[TraceRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for r in sorted(records, key=lambda r: (r.tti, r.ue_id)):
            w.writerow((r.tti, r.ue_id, r.bits, r.rbs))


@dataclass(frozen=True)
class GroupedStreams:
    groups: list[list[int]]  # ue ids per service
    bits: np.ndarray  # (n_services, n_ttis) incoming bits per TTI


def group_ues(records: Sequence[TraceRecord], n_services: int) -> GroupedStreams:
    """Split UEs into ``n_services`` contiguous groups ordered by total volume.

    UEs are sorted by descending total bits (ties by ue id); each group gets
    ``n_ues // n_services`` UEs and the remainder goes to the last group.
    """
    if n_services < 1:
        raise TooFewUes("n_services must be >= 1")
    totals: dict[int, int] = {}
    n_ttis = 0
    for r in records:
        totals[r.ue_id] = totals.get(r.ue_id, 0) + r.bits
        n_ttis = max(n_ttis, r.tti + 1)
    if len(totals) < n_services:
        raise TooFewUes(f"{len(totals)} distinct UEs for {n_services} services")
    order = sorted(totals, key=lambda u: (-totals[u], u))
    size = len(order) // n_services
    groups = [order[i * size:(i + 1) * size] for i in range(n_services - 1)]
    groups.append(order[(n_services - 1) * size:])
    owner = {ue: g for g, members in enumerate(groups) for ue in members}
    bits = np.zeros((n_services, n_ttis), dtype=np.int64)
    for r in records:
        bits[owner[r.ue_id], r.tti] += r.bits
    return GroupedStreams(groups, bits)


# ---------------------------------------------------------------------------
# arrival streams


@dataclass(frozen=True)
class ArrivalStream:
    """Per-TTI incoming bits plus the packets that make them up.

    Packet arrays are sorted by arrival TTI; ``pkt_bpr`` is the number of bits
    one RB carries for that packet (fixed per packet, as with a single MCS).
    """

    x_d: np.ndarray
    pkt_tti: np.ndarray
    pkt_size: np.ndarray
    pkt_bpr: np.ndarray
    offsets: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        offsets = np.searchsorted(self.pkt_tti, np.arange(len(self.x_d) + 1), side="left")
        object.__setattr__(self, "offsets", offsets)

    @property
    def n_ttis(self) -> int:
        return len(self.x_d)

    def rbs_needed(self) -> np.ndarray:
        return -(-self.pkt_size // self.pkt_bpr)


class _Table:
    """Discrete distribution given as an int or {values, probs}."""

    def __init__(self, spec: Any, name: str):
        if isinstance(spec, (int, np.integer)):
            self.values = np.array([int(spec)], dtype=np.int64)
            self.probs = np.array([1.0])
        elif isinstance(spec, Mapping) and "values" in spec:
            self.values = np.asarray(spec["values"], dtype=np.int64)
            self.probs = np.asarray(spec.get("probs", np.full(len(self.values), 1 / len(self.values))), dtype=float)
        elif isinstance(spec, (list, tuple)) and spec and all(len(p) == 2 for p in spec):
            self.values = np.array([int(v) for v, _ in spec], dtype=np.int64)
            self.probs = np.array([float(p) for _, p in spec])
        else:
            raise BadGeneratorParams(f"{name}: expected an int or a {{values, probs}} table, got {spec!r}")
        if self.values.size == 0 or self.values.shape != self.probs.shape:
            raise BadGeneratorParams(f"{name}: values and probs must be nonempty and equally long")
        if np.any(self.values < 1):
            raise BadGeneratorParams(f"{name}: values must be >= 1")
        if np.any(self.probs < 0) or abs(self.probs.sum() - 1) > 1e-9:
            raise BadGeneratorParams(f"{name}: probs must be non-negative and sum to 1")

    @property
    def mean(self) -> float:
        return float(self.values @ self.probs)

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if len(self.values) == 1:
            return np.full(n, self.values[0], dtype=np.int64)
        return rng.choice(self.values, size=n, p=self.probs)


def _nonneg(params: Mapping[str, Any], key: str, default: float | None = None) -> float:
    if key not in params:
        if default is None:
            raise BadGeneratorParams(f"missing parameter {key!r}")
        return default
    try:
        v = float(params[key])
    except (TypeError, ValueError):
        raise BadGeneratorParams(f"{key} must be a number, got {params[key]!r}") from None
    if not v >= 0:
        raise BadGeneratorParams(f"{key} must be >= 0, got {v}")
    return v


def _prob(params: Mapping[str, Any], key: str) -> float:
    v = _nonneg(params, key)
    if v > 1:
        raise BadGeneratorParams(f"{key} must be a probability, got {v}")
    return v


SYNTHETIC_KINDS = ("constant", "poisson_batch", "on_off")


def gen_synthetic(kind: str, params: Mapping[str, Any], n_ttis: int, seed: int) -> ArrivalStream:
    """Generate a deterministic synthetic arrival stream.

    Kinds and their parameters (``pkt_size`` and ``bits_per_rb`` accept an int
    or a ``{values, probs}`` table):

    * ``constant``: ``bits`` per TTI, cut into packets of ``pkt_size``
      (default ``bits``); a remainder becomes one smaller packet.
    * ``poisson_batch``: Poisson(``lam``) packets per TTI.
    * ``on_off``: two-state Markov source starting OFF; OFF->ON with
      probability ``p_on`` and ON->OFF with ``p_off`` per TTI; Poisson
      packet counts with mean ``lam_on`` (ON) or ``lam_off`` (OFF, default 0).
    """
    if kind not in SYNTHETIC_KINDS:
        raise BadGeneratorParams(f"unknown kind {kind!r}; expected one of {SYNTHETIC_KINDS}")
    if int(n_ttis) < 1:
        raise BadGeneratorParams("n_ttis must be >= 1")
    n_ttis = int(n_ttis)
    bpr = _Table(params.get("bits_per_rb", 1), "bits_per_rb")
    count_rng, size_rng, chan_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3))

    if kind == "constant":
        bits = int(_nonneg(params, "bits"))
        pkt = int(params.get("pkt_size", bits) or 1)
        if pkt < 1:
            raise BadGeneratorParams("pkt_size must be >= 1")
        sizes_one = [pkt] * (bits // pkt) + ([bits % pkt] if bits % pkt else [])
        counts = np.full(n_ttis, len(sizes_one), dtype=np.int64)
        sizes = np.tile(np.asarray(sizes_one, dtype=np.int64), n_ttis)
    else:
        size_tab = _Table(params.get("pkt_size"), "pkt_size") if "pkt_size" in params else None
        if size_tab is None:
            raise BadGeneratorParams("missing parameter 'pkt_size'")
        if kind == "poisson_batch":
            lam = np.full(n_ttis, _nonneg(params, "lam"))
        else:
            p_on, p_off = _prob(params, "p_on"), _prob(params, "p_off")
            lam_on, lam_off = _nonneg(params, "lam_on"), _nonneg(params, "lam_off", 0.0)
            u = count_rng.random(n_ttis)
            on = np.zeros(n_ttis, dtype=bool)
            state = False
            for t in range(n_ttis):
                state = (u[t] >= p_off) if state else (u[t] < p_on)
                on[t] = state
            lam = np.where(on, lam_on, lam_off)
        counts = count_rng.poisson(lam).astype(np.int64)
        sizes = size_tab.draw(size_rng, int(counts.sum()))

    pkt_tti = np.repeat(np.arange(n_ttis, dtype=np.int64), counts)
    x_d = np.bincount(pkt_tti, weights=sizes, minlength=n_ttis).astype(np.int64) if len(sizes) else np.zeros(n_ttis, np.int64)
    return ArrivalStream(x_d, pkt_tti, sizes.astype(np.int64), bpr.draw(chan_rng, len(sizes)))


def trace_streams(
    records: Sequence[TraceRecord], n_services: int, bits_per_rb: Any = 1, seed: int = 0
) -> list[ArrivalStream]:
    """Arrival streams per service from a trace, one packet per (TTI, UE) row.

    A row's bits-per-RB is ``bits // rbs`` when the trace knows the RBs,
    otherwise it is drawn from the ``bits_per_rb`` table.
    """
    grouped = group_ues(records, n_services)
    owner = {ue: g for g, members in enumerate(grouped.groups) for ue in members}
    fallback = _Table(bits_per_rb, "bits_per_rb")
    rng = np.random.default_rng(seed)
    n_ttis = grouped.bits.shape[1]
    out = []
    for g in range(n_services):
        rows = [r for r in records if owner[r.ue_id] == g and r.bits > 0]
        tti = np.array([r.tti for r in rows], dtype=np.int64)
        size = np.array([r.bits for r in rows], dtype=np.int64)
        drawn = fallback.draw(rng, len(rows))
        bpr = np.array([max(1, r.bits // r.rbs) if r.rbs else int(b) for r, b in zip(rows, drawn)], dtype=np.int64)
        out.append(ArrivalStream(grouped.bits[g].copy(), tti, size, bpr))
    return out


def tile_stream(stream: ArrivalStream, n_ttis: int) -> ArrivalStream:
    """Repeat (or cut) a stream so that it covers exactly ``n_ttis`` TTIs."""
    reps = -(-n_ttis // stream.n_ttis)
    shift = np.repeat(np.arange(reps, dtype=np.int64) * stream.n_ttis, len(stream.pkt_tti))
    tti = np.tile(stream.pkt_tti, reps) + shift
    keep = tti < n_ttis
    return ArrivalStream(
        np.tile(stream.x_d, reps)[:n_ttis],
        tti[keep],
        np.tile(stream.pkt_size, reps)[keep],
        np.tile(stream.pkt_bpr, reps)[keep],
    )


def make_source(source: Mapping[str, Any], n_ttis: int, seed: int) -> ArrivalStream:
    """Build a stream from a service's source descriptor.

    Synthetic kinds go to :func:`gen_synthetic`. ``{"kind": "trace", "path":
    ..., "group": g, "n_groups": G}`` takes UE group ``g`` of a trace CSV,
    repeated as needed to cover ``n_ttis``.
    """
    params = dict(source)
    kind = params.pop("kind", None)
    if kind == "trace":
        try:
            path, group, n_groups = params["path"], int(params["group"]), int(params["n_groups"])
        except (KeyError, TypeError, ValueError):
            raise BadGeneratorParams("trace source needs path, group and n_groups") from None
        if not 0 <= group < n_groups:
            raise BadGeneratorParams(f"group {group} outside 0..{n_groups - 1}")
        streams = trace_streams(load_trace(path), n_groups, params.get("bits_per_rb", 1), seed)
        return tile_stream(streams[group], int(n_ttis))
    return gen_synthetic(kind, params, n_ttis, seed)


# ---------------------------------------------------------------------------
# observation windows


@dataclass
class ServiceHistory:
    """Per-TTI telemetry of one service, appended to by the simulator.

    ``completed`` rows are (completion_tti, size_bits, rbs_used).
    ``rb_demand`` is the RBs needed to drain the queue after arrivals,
    ``rbs_granted`` the RBs actually granted and ``queued_bits`` the backlog
    after arrivals.
    """

    service_id: int
    x_d: np.ndarray
    completed: np.ndarray  # (J, 3) int64
    rb_demand: np.ndarray | None = None
    rbs_granted: np.ndarray | None = None
    queued_bits: np.ndarray | None = None

    @property
    def n_ttis(self) -> int:
        return len(self.x_d)


@dataclass(frozen=True)
class SampleWindow:
    service_id: int
    end_tti: int
    x_d: np.ndarray
    packets: np.ndarray  # (J, 2): size_bits, rbs_used
    rb_demand: np.ndarray | None = None
    rbs_granted: np.ndarray | None = None
    queued_bits: np.ndarray | None = None

    @property
    def t_obs(self) -> int:
        return len(self.x_d)


def history_from_stream(stream: ArrivalStream, service_id: int = 0) -> ServiceHistory:
    """History of a stream whose packets each complete in their arrival TTI."""
    completed = np.column_stack([stream.pkt_tti, stream.pkt_size, stream.rbs_needed()]).astype(np.int64)
    demand = np.bincount(stream.pkt_tti, weights=stream.rbs_needed(), minlength=stream.n_ttis).astype(np.int64)
    return ServiceHistory(service_id, stream.x_d, completed.reshape(-1, 3), rb_demand=demand,
                          rbs_granted=demand.copy(), queued_bits=stream.x_d.copy())


def window(history: ServiceHistory, end_tti: int, t_obs: int) -> SampleWindow:
    """The last ``t_obs`` TTIs ending at ``end_tti`` (inclusive)."""
    if t_obs < 1 or end_tti < t_obs - 1:
        raise InsufficientHistory(f"end_tti={end_tti} leaves fewer than t_obs={t_obs} TTIs")
    if end_tti >= history.n_ttis:
        raise InsufficientHistory(f"end_tti={end_tti} beyond recorded history ({history.n_ttis} TTIs)")
    lo = end_tti - t_obs + 1
    comp = history.completed
    mask = (comp[:, 0] >= lo) & (comp[:, 0] <= end_tti)

    def cut(a):
        return None if a is None else a[lo:end_tti + 1].copy()

    return SampleWindow(
        history.service_id, end_tti, history.x_d[lo:end_tti + 1].copy(), comp[mask][:, 1:3].copy(),
        cut(history.rb_demand), cut(history.rbs_granted), cut(history.queued_bits),
    )
