"""Deterministic TTI-loop simulator of one cell serving several uRLLC services.

Each TTI: arrivals are enqueued, the mode's controller grants RBs, queues
transmit FIFO, and completed packets are recorded with delay
``(completion_tti - arrival_tti + 1) * t_slot``. Every ``t_out`` TTIs, once
``t_obs`` TTIs of history exist, the near-RT allocator recomputes the
guarantees from the trailing window.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Any, NamedTuple

import numpy as np

from .domain import CellConfig, Packet, ServiceSpec, validate_config
from .capacity import concat_samples, truncated_sample_set
from .errors import ConfigError, EmptyRecords, Infeasible, InsufficientSamples, NoStableBound
from .near_rt import allocate_guaranteed, equal_split
from .rb_estimator import EmpiricalEstimator, MdnEstimator, PessimisticEstimator, build_features
from .rt_ctl import (
    DEFAULT_ETA,
    DEFAULT_TAU,
    ServiceQueue,
    edf_only_tick,
    initial_states,
    rt_tick,
)
from .snc import DEFAULT_SHRINK, ServiceSampleSet, algorithm1_delay_bound
from .trace_io import ArrivalStream, ServiceHistory, history_from_stream, make_source, window

MODES = ("oranus", "ref1_edf_only", "ref2_dedicated_snc", "ref3_snc_rt_no_mitigation")
ESTIMATORS = ("pessimistic", "empirical", "mdn")


def service_seed(seed: int, service_id: int) -> int:
    return int(np.random.SeedSequence([seed, service_id]).generate_state(1)[0])


@dataclass(frozen=True)
class SimRun:
    mode: str
    cell: CellConfig
    specs: tuple[ServiceSpec, ...]
    horizon: int
    seed: int = 0
    eta: float = DEFAULT_ETA
    tau: float = DEFAULT_TAU
    estimator: str = "empirical"
    delta_shrink: float = DEFAULT_SHRINK
    fixed_n_min: tuple[int, ...] | None = None
    streams: tuple[ArrivalStream, ...] | None = field(default=None, compare=False, repr=False)
    mdn_model: Any = field(default=None, compare=False, repr=False)

    def check(self) -> "SimRun":
        validate_config(self.cell, self.specs)
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.estimator not in ESTIMATORS:
            raise ConfigError(f"unknown estimator {self.estimator!r}; expected one of {ESTIMATORS}")
        if self.estimator == "mdn" and self.mdn_model is None:
            raise ConfigError("estimator 'mdn' needs a trained model")
        if self.horizon < self.cell.t_obs + self.cell.t_out:
            raise ConfigError(f"horizon ({self.horizon}) must be >= t_obs + t_out ({self.cell.t_obs + self.cell.t_out})")
        if self.fixed_n_min is not None:
            if len(self.fixed_n_min) != len(self.specs) or sum(self.fixed_n_min) > self.cell.n_cell_rb:
                raise ConfigError("fixed_n_min must have one entry per service and fit in the cell")
        if self.streams is not None:
            if len(self.streams) != len(self.specs) or any(s.n_ttis < self.horizon for s in self.streams):
                raise ConfigError("need one stream per service covering the horizon")
        return self


class DelayRecord(NamedTuple):
    service_id: int
    arrival_tti: int
    completion_tti: int
    delay_s: float
    excess_norm: float


def _excess(delays_s: np.ndarray, w_th: float) -> np.ndarray:
    ex = (np.asarray(delays_s, dtype=float) - w_th) / w_th
    # delays are whole TTIs; snap float noise so that w == w_th reads as 0
    ex[np.abs(ex) < 1e-9] = 0.0
    return ex


def violation_probability(delays_s, w_th: float) -> float:
    """Fraction of delays strictly above ``w_th``; 0.0 for an empty input."""
    d = np.asarray(delays_s, dtype=float)
    if d.size == 0:
        return 0.0
    return float(np.mean(_excess(d, w_th) > 0))


@dataclass(frozen=True)
class Ccdf:
    """Right-continuous empirical CCDF, P[X > x], of the normalized delay excess."""

    x: np.ndarray
    p: np.ndarray
    _sorted: np.ndarray = field(repr=False)

    def __call__(self, x) -> np.ndarray | float:
        n = self._sorted.size
        out = 1.0 - np.searchsorted(self._sorted, x, side="right") / n
        return float(out) if np.ndim(out) == 0 else out


def ccdf(excess) -> Ccdf:
    s = np.sort(np.asarray(excess, dtype=float))
    if s.size == 0:
        raise EmptyRecords("no delay records")
    x = np.unique(s)
    p = 1.0 - np.searchsorted(s, x, side="right") / s.size
    return Ccdf(x, p, s)


def dedicated_delays(stream: ArrivalStream, n_rbs: int, horizon: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """FIFO queue with ``n_rbs`` dedicated RBs every TTI, solved in closed form.

    RB slots are numbered ``tti * n_rbs + k``; packet j occupies the
    ``r_j`` consecutive slots starting at ``max(end of packet j-1,
    arrival_j * n_rbs)``. Returns (completion_tti, delay_ttis) per packet.
    Packets that would finish after ``horizon`` are still reported.
    """
    if n_rbs < 1:
        raise ValueError("n_rbs must be >= 1")
    tti = stream.pkt_tti
    if horizon is not None:
        tti = tti[tti < horizon]
    r = stream.rbs_needed()[: tti.size]
    cum = np.cumsum(r)
    end = cum + np.maximum.accumulate(tti * n_rbs - (cum - r))
    completion = (end - 1) // n_rbs
    return completion, completion - tti + 1


@dataclass
class SimResult:
    mode: str
    cell: CellConfig
    specs: tuple[ServiceSpec, ...]
    service_id: np.ndarray
    arrival_tti: np.ndarray
    completion_tti: np.ndarray
    rbs_granted: np.ndarray  # (M, horizon)
    n_min_i: np.ndarray  # (M, horizon)
    rb_demand: np.ndarray  # (M, horizon)
    allocations: list[dict]
    runtime_s: float
    backlog_bits: list[int]
    decision_features: list[tuple[int, np.ndarray]] = field(default_factory=list)

    @property
    def delay_s(self) -> np.ndarray:
        return (self.completion_tti - self.arrival_tti + 1) * self.cell.t_slot

    def delays(self, service_id: int) -> np.ndarray:
        return self.delay_s[self.service_id == service_id]

    def excess(self) -> np.ndarray:
        """Normalized excess (w - w_th) / w_th per record."""
        w_th = {s.id: s.w_th for s in self.specs}
        per = np.array([w_th[int(s)] for s in self.service_id], dtype=float)
        return _excess(self.delay_s / per, 1.0) if per.size else np.zeros(0)

    def violation(self) -> dict[int, float]:
        return {s.id: violation_probability(self.delays(s.id), s.w_th) for s in self.specs}

    def records(self):
        ex = self.excess()
        d = self.delay_s
        for i in range(self.service_id.size):
            yield DelayRecord(int(self.service_id[i]), int(self.arrival_tti[i]), int(self.completion_tti[i]), float(d[i]), float(ex[i]))

    def utilization(self) -> np.ndarray:
        return self.rbs_granted.sum(axis=0)

    def extra_rb_labels(self) -> np.ndarray:
        """(horizon, M) extra RBs each service had available beyond its effective
        guarantee, NaN where its demand did not exceed that guarantee.

        Available means whatever the other services' grants left over:
        ``n_cell_rb - n_min_i[m] - sum of the others' grants``, clipped at 0.
        """
        others = self.rbs_granted.sum(axis=0)[None, :] - self.rbs_granted
        avail = np.clip(self.cell.n_cell_rb - self.n_min_i - others, 0, None).astype(float)
        return np.where(self.rb_demand > self.n_min_i, avail, np.nan).T

    def mdn_dataset(self) -> tuple[np.ndarray, np.ndarray]:
        """(features, labels) rows: each TTI after a near-RT decision is paired
        with the features that decision saw; rows without any label are dropped."""
        labels = self.extra_rb_labels()
        xs, ys = [], []
        for start, feats in self.decision_features:
            stop = min(start + self.cell.t_out, labels.shape[0])
            y = labels[start:stop]
            keep = ~np.all(np.isnan(y), axis=1)
            ys.append(y[keep])
            xs.append(np.repeat(feats[None, :], int(keep.sum()), axis=0))
        if not xs:
            n = len(self.specs)
            return np.zeros((0, 8 * n)), np.zeros((0, n))
        return np.concatenate(xs), np.concatenate(ys)


class Simulator:
    def __init__(self, run: SimRun):
        self.run_spec = run.check()
        cell, specs = run.cell, run.specs
        self.cell, self.specs = cell, specs
        self.n = len(specs)
        if run.streams is not None:
            self.streams = list(run.streams)
        else:
            self.streams = [make_source(s.source, run.horizon, service_seed(run.seed, s.id)) for s in specs]
        self.queues = [ServiceQueue() for _ in specs]
        self.states = initial_states(specs, cell, run.eta, run.tau)
        self.n_min = list(run.fixed_n_min) if run.fixed_n_min is not None else list(equal_split(cell.n_cell_rb, self.n))
        h = run.horizon
        self.rb_demand = np.zeros((self.n, h), dtype=np.int64)
        self.queued_bits = np.zeros((self.n, h), dtype=np.int64)
        self.rbs_granted = np.zeros((self.n, h), dtype=np.int64)
        self.n_min_i = np.zeros((self.n, h), dtype=np.int64)
        self.completed: list[list[tuple[int, int, int]]] = [[] for _ in specs]
        self.rec_sid: list[int] = []
        self.rec_arr: list[int] = []
        self.rec_done: list[int] = []
        self.allocations: list[dict] = []
        self.decision_features: list[tuple[int, np.ndarray]] = []
        self.tti = -1

    # -- controller pieces -------------------------------------------------
    def _grants(self, tti: int) -> tuple[list[int], list[int]]:
        mode = self.run_spec.mode
        if mode == "ref1_edf_only":
            return edf_only_tick(self.queues, self.cell, self.specs), [0] * self.n
        if mode == "ref2_dedicated_snc":
            return [min(q.need_rbs, n) for q, n in zip(self.queues, self.n_min)], list(self.n_min)
        res = rt_tick(self.queues, self.n_min, self.states, self.cell, self.specs, tti, mitigation=(mode == "oranus"))
        self.states = res.states
        return res.grants, res.n_min_i

    def history(self, m: int, upto: int) -> ServiceHistory:
        comp = np.asarray(self.completed[m], dtype=np.int64).reshape(-1, 3)
        sl = slice(0, upto + 1)
        return ServiceHistory(
            self.specs[m].id,
            self.streams[m].x_d[sl],
            comp,
            rb_demand=self.rb_demand[m, sl],
            rbs_granted=self.rbs_granted[m, sl],
            queued_bits=self.queued_bits[m, sl],
        )

    def _estimator(self, windows):
        run = self.run_spec
        if run.mode == "ref2_dedicated_snc" or run.estimator == "pessimistic":
            return PessimisticEstimator()
        if run.estimator == "mdn":
            return MdnEstimator(run.mdn_model, windows, self.cell.t_out)
        return EmpiricalEstimator.from_windows(windows, self.cell.n_cell_rb)

    def _near_rt(self, tti: int) -> None:
        windows = [window(self.history(m, tti), tti, self.cell.t_obs) for m in range(self.n)]
        entry = {"tti": tti + 1}
        try:
            alloc = allocate_guaranteed(windows, self._estimator(windows), self.cell, self.specs, self.run_spec.delta_shrink)
        except Infeasible as exc:
            entry.update(n_min=list(self.n_min), objective=None, iterations=0, error=str(exc))
        else:
            self.n_min = list(alloc.n_min)
            entry.update(
                n_min=list(alloc.n_min),
                objective=alloc.objective,
                w=list(alloc.w),
                iterations=alloc.iterations,
                error=None,
            )
        self.allocations.append(entry)
        self.decision_features.append((tti + 1, build_features(windows, self.n_min, self.cell.t_out)))

    # -- main loop ---------------------------------------------------------
    def step_tti(self, tti: int) -> None:
        if tti != self.tti + 1:
            raise ValueError(f"TTIs must advance by one (expected {self.tti + 1}, got {tti})")
        self.tti = tti
        for m, (st, q) in enumerate(zip(self.streams, self.queues)):
            lo, hi = st.offsets[tti], st.offsets[tti + 1]
            sid = self.specs[m].id
            for j in range(lo, hi):
                size = int(st.pkt_size[j])
                q.push(Packet(sid, size, tti, size, int(st.pkt_bpr[j])))
            self.rb_demand[m, tti] = q.need_rbs
            self.queued_bits[m, tti] = q.bits
        grants, n_min_i = self._grants(tti)
        for m, q in enumerate(self.queues):
            self.rbs_granted[m, tti] = grants[m]
            self.n_min_i[m, tti] = n_min_i[m]
            if grants[m]:
                sid = self.specs[m].id
                for pkt in q.transmit(grants[m], tti):
                    self.rec_sid.append(sid)
                    self.rec_arr.append(pkt.arrival_tti)
                    self.rec_done.append(tti)
                    self.completed[m].append((tti, pkt.size_bits, pkt.rbs_used))
        if (
            self.run_spec.mode != "ref1_edf_only"
            and self.run_spec.fixed_n_min is None
            and tti + 1 >= self.cell.t_obs
            and (tti + 1) % self.cell.t_out == 0
        ):
            self._near_rt(tti)

    def run(self) -> SimResult:
        t0 = time.perf_counter()
        for tti in range(self.tti + 1, self.run_spec.horizon):
            self.step_tti(tti)
        return self.result(time.perf_counter() - t0)

    def result(self, runtime_s: float = 0.0) -> SimResult:
        return SimResult(
            self.run_spec.mode,
            self.cell,
            self.specs,
            np.asarray(self.rec_sid, dtype=np.int64),
            np.asarray(self.rec_arr, dtype=np.int64),
            np.asarray(self.rec_done, dtype=np.int64),
            self.rbs_granted,
            self.n_min_i,
            self.rb_demand,
            self.allocations,
            runtime_s,
            [q.bits for q in self.queues],
            list(self.decision_features),
        )


def run(spec: SimRun) -> SimResult:
    return Simulator(spec).run()


@dataclass(frozen=True)
class ValidationPoint:
    service_id: int
    t_obs: int
    seed: int
    n_rbs: int
    w_model: float
    w_sim: float
    n_packets: int

    @property
    def rel_error(self) -> float:
        """(W_model - W_sim) / W_sim in percent."""
        return (self.w_model - self.w_sim) / self.w_sim * 100.0


def delay_quantile(delays_s, epsilon: float) -> float:
    """Smallest delay d with P[w > d] <= epsilon over the sample."""
    d = np.asarray(delays_s, dtype=float)
    if d.size == 0:
        raise EmptyRecords("no delays to take a quantile of")
    return float(np.quantile(d, 1.0 - epsilon, method="inverted_cdf"))


def snc_validation(
    spec: ServiceSpec,
    n_rbs: int,
    t_obs: int,
    horizon: int,
    seed: int = 0,
    t_slot: float = 1e-3,
    delta_shrink: float = DEFAULT_SHRINK,
    stream: ArrivalStream | None = None,
) -> ValidationPoint:
    """Bound from the first ``t_obs`` TTIs vs. the simulated (1 - epsilon) delay
    quantile of every packet arriving afterwards, for one service with
    ``n_rbs`` dedicated RBs and no sharing (pessimistic pi)."""
    if horizon <= t_obs:
        raise ConfigError("horizon must exceed t_obs")
    if stream is None:
        stream = make_source(spec.source, horizon, service_seed(seed, spec.id))
    win = window(history_from_stream(stream, spec.id), t_obs - 1, t_obs)
    x_con = concat_samples(win.packets)
    if x_con.size == 0:
        w_model = math.inf
    else:
        try:
            samples = truncated_sample_set(x_con, n_rbs, [1.0])
        except InsufficientSamples:
            samples = ServiceSampleSet.single([n_rbs * x_con.mean()])
        try:
            w_model = algorithm1_delay_bound(win.x_d, samples, spec.epsilon, t_slot, delta_shrink).w_bound
        except NoStableBound:
            w_model = math.inf
    _, d = dedicated_delays(stream, n_rbs, horizon)
    after = stream.pkt_tti[: d.size] >= t_obs
    w_sim = delay_quantile(d[after] * t_slot, spec.epsilon)
    return ValidationPoint(spec.id, t_obs, seed, n_rbs, w_model, w_sim, int(after.sum()))
