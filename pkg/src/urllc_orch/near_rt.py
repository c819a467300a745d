"""Near-RT guaranteed-RB allocation.

The allocator minimizes g = max_m W_m / W_m^th, where W_m is the delay bound
of service m under a candidate guarantee vector. Starting from the equal
split, each committed step moves one guaranteed RB from the service with the
smallest ratio to the one with the largest; the descent stops when g no
longer improves.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .capacity import concat_samples, truncated_sample_set
from .domain import CellConfig, ServiceSpec
from .errors import Infeasible, InsufficientSamples, NoStableBound, SearchSpaceTooLarge
from .rb_estimator import RbEstimator
from .snc import DEFAULT_SHRINK, ServiceSampleSet, algorithm1_delay_bound
from .trace_io import SampleWindow

DEFAULT_ENUM_CAP = 100_000


@dataclass(frozen=True)
class Allocation:
    n_min: tuple[int, ...]
    w: tuple[float, ...]
    objective: float
    iterations: int = 0
    trajectory: tuple[float, ...] = field(default=(), compare=False)
    hit_cap: bool = False


def objective_g(w: Sequence[float], w_th: Sequence[float]) -> float:
    """Worst normalized delay bound; an unstable service (W = inf) gives inf."""
    if len(w) != len(w_th):
        raise ValueError("w and w_th must have equal length")
    return max(wm / th for wm, th in zip(w, w_th))


def n_compositions(n_cell_rb: int, n_services: int) -> int:
    """Number of guarantee vectors with every entry >= 1 summing to n_cell_rb."""
    return math.comb(n_cell_rb - 1, n_services - 1)


class BoundEvaluator:
    """Delay bounds per service for candidate allocations, with memoization.

    A service with no arrivals in its window gets W = 0. A service whose
    window holds fewer per-RB samples than its guarantee gets a single
    capacity sample of ``n_min * mean per-RB capacity``. Unstable services
    get W = inf.
    """

    def __init__(
        self,
        windows: Sequence[SampleWindow],
        specs: Sequence[ServiceSpec],
        cell: CellConfig,
        estimator: RbEstimator,
        delta_shrink: float = DEFAULT_SHRINK,
    ):
        if len(windows) != len(specs):
            raise ValueError("one window per service is required")
        self.cell = cell
        self.specs = list(specs)
        self.estimator = estimator
        self.delta_shrink = delta_shrink
        self.x_d = [np.asarray(w.x_d) for w in windows]
        self.x_con = [concat_samples(w.packets) for w in windows]
        self._cache: dict[tuple, float] = {}
        self.evaluations = 0

    def bound(self, m: int, allocation: Sequence[int]) -> float:
        if not np.any(self.x_d[m]):
            return 0.0
        x_con = self.x_con[m]
        if x_con.size == 0:
            return math.inf
        n_m = int(allocation[m])
        pi = np.asarray(self.estimator.pi(m, allocation, self.cell.n_cell_rb - n_m), dtype=float)
        key = (m, n_m, pi.tobytes())
        if key in self._cache:
            return self._cache[key]
        try:
            samples = truncated_sample_set(x_con, n_m, pi)
        except InsufficientSamples:
            samples = ServiceSampleSet.single([n_m * x_con.mean()])
        try:
            w = algorithm1_delay_bound(
                self.x_d[m], samples, self.specs[m].epsilon, self.cell.t_slot, self.delta_shrink
            ).w_bound
        except NoStableBound:
            w = math.inf
        self.evaluations += 1
        self._cache[key] = w
        return w

    def bounds(self, allocation: Sequence[int]) -> tuple[float, ...]:
        return tuple(self.bound(m, allocation) for m in range(len(self.specs)))

    def ratios(self, w: Sequence[float]) -> list[float]:
        return [wm / s.w_th for wm, s in zip(w, self.specs)]


def equal_split(n_cell_rb: int, n_services: int) -> tuple[int, ...]:
    """floor(n_cell_rb / |M|) each, plus one of the leftover RBs for each of the
    first ``n_cell_rb mod |M|`` services, so that every RB is guaranteed."""
    base, extra = divmod(n_cell_rb, n_services)
    return tuple(base + (1 if m < extra else 0) for m in range(n_services))


def allocate_guaranteed(
    windows: Sequence[SampleWindow],
    estimator: RbEstimator,
    cell: CellConfig,
    specs: Sequence[ServiceSpec],
    delta_shrink: float = DEFAULT_SHRINK,
    max_iter: int | None = None,
    evaluator: BoundEvaluator | None = None,
) -> Allocation:
    """Descent over guarantee vectors by single-RB moves.

    The initial equal split is always committed. After each commit the
    receiver is the service with the largest ratio and the donor the one with
    the smallest ratio that still has more than one RB (lowest index on
    ties); the walk stops when the candidate does not strictly improve g,
    when receiver and donor coincide or when no donor is left. The number of
    bound evaluations is capped at ``n_cell_rb * |M|`` by default.
    """
    n_srv = len(specs)
    if n_srv < 1:
        raise ValueError("at least one service is required")
    if cell.n_cell_rb < n_srv:
        raise ValueError("n_cell_rb must be >= number of services")
    ev = evaluator or BoundEvaluator(windows, specs, cell, estimator, delta_shrink)
    cap = max_iter if max_iter is not None else cell.n_cell_rb * n_srv

    cand = equal_split(cell.n_cell_rb, n_srv)
    w = ev.bounds(cand)
    if all(math.isinf(x) for x in w):
        raise Infeasible("no service has a stable delay bound at the equal split")
    best = cand
    best_w = w
    best_g = objective_g(w, [s.w_th for s in specs])
    trajectory = [best_g]
    iterations, hit_cap = 1, False
    while True:
        ratios = ev.ratios(best_w)
        receiver = max(range(n_srv), key=lambda m: (ratios[m], -m))
        donors = sorted((m for m in range(n_srv) if m != receiver and best[m] > 1), key=lambda m: (ratios[m], m))
        if not donors or ratios[donors[0]] >= ratios[receiver]:
            break
        donor = donors[0]
        cand = list(best)
        cand[receiver] += 1
        cand[donor] -= 1
        cand = tuple(cand)
        if iterations >= cap:
            hit_cap = True
            break
        iterations += 1
        w = ev.bounds(cand)
        g = objective_g(w, [s.w_th for s in specs])
        if g < best_g:
            best, best_w, best_g = cand, w, g
            trajectory.append(g)
        else:
            break
    return Allocation(best, tuple(best_w), best_g, iterations, tuple(trajectory), hit_cap)


def brute_force_allocate(
    windows: Sequence[SampleWindow],
    estimator: RbEstimator,
    cell: CellConfig,
    specs: Sequence[ServiceSpec],
    delta_shrink: float = DEFAULT_SHRINK,
    enum_cap: int = DEFAULT_ENUM_CAP,
    evaluator: BoundEvaluator | None = None,
) -> Allocation:
    """Exhaustive search over every guarantee vector (entries >= 1, sum = n_cell_rb).

    Ties go to the lexicographically smallest vector. ``iterations`` is the
    number of vectors enumerated.
    """
    n_srv = len(specs)
    size = n_compositions(cell.n_cell_rb, n_srv)
    if size > enum_cap:
        raise SearchSpaceTooLarge(f"{size} allocations exceed the enumeration cap {enum_cap}")
    ev = evaluator or BoundEvaluator(windows, specs, cell, estimator, delta_shrink)
    w_th = [s.w_th for s in specs]
    best, best_w, best_g, count = None, None, math.inf, 0
    for cuts in itertools.combinations(range(1, cell.n_cell_rb), n_srv - 1):
        edges = (0, *cuts, cell.n_cell_rb)
        cand = tuple(b - a for a, b in zip(edges[:-1], edges[1:]))
        count += 1
        w = ev.bounds(cand)
        g = objective_g(w, w_th)
        if best is None or g < best_g:
            best, best_w, best_g = cand, w, g
    return Allocation(best, tuple(best_w), best_g, count, (best_g,))
