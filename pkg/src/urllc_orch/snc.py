"""Empirical-MGF stochastic network calculus for a single queue.

Arrivals and service are described by sample vectors (bits per TTI). Both
envelopes have zero burst offset, so the burst terms only show up inside the
delay-bound expression::

    W(theta, delta) = 2 t_slot [ln(eps/2) + ln(1 - e^{-theta delta})]
                      / (ln M_C(-theta) + delta theta t_slot)

where ``M_C(-theta) = sum_n pi_n / T_n sum_i exp(-theta c_{n,i})``.
Every MGF is evaluated as a log-sum-exp over (unique value, log weight) pairs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import EmptySampleSet, NoStableBound, NumericOverflow

DEFAULT_SHRINK = 0.9
DEFAULT_THETA_MIN = 1e-8


@dataclass(frozen=True)
class EnvelopeSolution:
    theta: float
    delta: float
    rho_a: float
    rho_s: float
    w_bound: float
    iterations: int = 0


@dataclass(frozen=True)
class ServiceSampleSet:
    """Capacity samples per extra-RB region n = 0..N_add and their PMF pi."""

    sets: tuple[np.ndarray, ...]
    pi: np.ndarray

    def __post_init__(self):
        sets = tuple(np.asarray(s, dtype=float) for s in self.sets)
        pi = np.asarray(self.pi, dtype=float)
        if len(sets) != len(pi):
            raise ValueError(f"{len(sets)} sample vectors but {len(pi)} probabilities")
        if np.any(pi < 0) or abs(pi.sum() - 1) > 1e-9:
            raise ValueError("pi must be a probability vector")
        for s in sets:
            if s.size and s.min() < 0:
                raise ValueError("capacity samples must be >= 0")
        object.__setattr__(self, "sets", sets)
        object.__setattr__(self, "pi", pi)

    @property
    def counts(self) -> np.ndarray:
        return np.array([len(s) for s in self.sets], dtype=np.int64)

    @property
    def n_add(self) -> int:
        return len(self.sets) - 1

    @classmethod
    def single(cls, samples: Sequence[float]) -> "ServiceSampleSet":
        """One region holding all the probability mass (no extra RBs)."""
        return cls((np.asarray(samples, dtype=float),), np.array([1.0]))


class _Mgf:
    """log E[exp(sign*theta*X)] for an empirical law given as (values, log weights)."""

    __slots__ = ("values", "logw")

    def __init__(self, values: np.ndarray, logw: np.ndarray):
        self.values = values
        self.logw = logw

    @classmethod
    def from_samples(cls, samples) -> "_Mgf":
        x = np.asarray(samples, dtype=float)
        if x.size == 0:
            raise ValueError("sample vector is empty")
        vals, counts = np.unique(x, return_counts=True)
        return cls(vals, np.log(counts) - math.log(x.size))

    @classmethod
    def from_sample_set(cls, samples: ServiceSampleSet) -> "_Mgf":
        vals, logws = [], []
        for s, p in zip(samples.sets, samples.pi):
            if p <= 0:
                continue
            if s.size == 0:
                raise EmptySampleSet("a region with positive probability has no samples")
            v, c = np.unique(s, return_counts=True)
            vals.append(v)
            logws.append(np.log(c) + math.log(p) - math.log(s.size))
        if not vals:
            raise EmptySampleSet("no nonempty sample vector with positive probability")
        return cls(np.concatenate(vals), np.concatenate(logws))

    def log_mgf(self, theta: float) -> float:
        out = float(logsumexp(theta * self.values + self.logw))
        if not math.isfinite(out):
            raise NumericOverflow(f"log-MGF not representable at theta={theta}")
        return out


def _check_theta(theta: float) -> None:
    if not theta > 0:
        raise ValueError(f"theta must be > 0, got {theta}")


def arrival_rate_param(x_d, theta: float, t_slot: float) -> float:
    """rho_A = ln(mean_i exp(theta d_i)) / (theta t_slot), in bits/s."""
    _check_theta(theta)
    return _Mgf.from_samples(x_d).log_mgf(theta) / (theta * t_slot)


def log_service_mgf(samples: ServiceSampleSet, theta: float) -> float:
    """ln sum_n (pi_n / T_n) sum_i exp(-theta c_{n,i})."""
    _check_theta(theta)
    return _Mgf.from_sample_set(samples).log_mgf(-theta)


def service_rate_param(samples: ServiceSampleSet, theta: float, t_slot: float) -> float:
    """rho_S = -ln M_C(-theta) / (theta t_slot), in bits/s."""
    return -log_service_mgf(samples, theta) / (theta * t_slot)


def _objective(log_mc: float, theta: float, delta: float, epsilon: float, t_slot: float) -> float:
    denom = log_mc + delta * theta * t_slot
    if denom >= 0:
        return math.inf
    td = theta * delta
    if td <= 0:
        return math.inf
    num = 2.0 * t_slot * (math.log(epsilon / 2.0) + math.log(-math.expm1(-td)))
    return num / denom


def delay_bound_objective(theta: float, delta: float, samples: ServiceSampleSet, epsilon: float, t_slot: float) -> float:
    """Delay bound W(theta, delta) in seconds; +inf at infeasible points."""
    _check_theta(theta)
    if not delta > 0:
        raise ValueError(f"delta must be > 0, got {delta}")
    if not 0 < epsilon < 1:
        raise ValueError(f"epsilon must be in (0,1), got {epsilon}")
    return _objective(log_service_mgf(samples, theta), theta, delta, epsilon, t_slot)


def algorithm1_delay_bound(
    x_d,
    samples: ServiceSampleSet,
    epsilon: float,
    t_slot: float,
    delta_shrink: float = DEFAULT_SHRINK,
    theta_min: float = DEFAULT_THETA_MIN,
) -> EnvelopeSolution:
    """Greedy theta search maximizing theta*delta with delta on the stability boundary.

    theta starts at 1 and is multiplied by ``delta_shrink`` each step. At every
    stable theta (rho_S > rho_A) the slack is ``delta = (rho_S - rho_A)/2``;
    the search stops at the first stable step whose theta*delta does not
    improve on the best so far. ``theta_min`` bounds the descent.
    """
    if not 0 < delta_shrink < 1:
        raise ValueError(f"delta_shrink must be in (0,1), got {delta_shrink}")
    if not theta_min > 0:
        raise ValueError("theta_min must be > 0")
    if not 0 < epsilon < 1:
        raise ValueError(f"epsilon must be in (0,1), got {epsilon}")
    arr = _Mgf.from_samples(x_d)
    srv = _Mgf.from_sample_set(samples)

    theta, y, best, it = 1.0, 0.0, None, 0
    while True:
        theta *= delta_shrink
        if theta < theta_min:
            break
        it += 1
        rho_a = arr.log_mgf(theta) / (theta * t_slot)
        log_mc = srv.log_mgf(-theta)
        rho_s = -log_mc / (theta * t_slot)
        if rho_s > rho_a:
            delta = (rho_s - rho_a) / 2
            y_z = theta * delta
            if y_z > y:
                y, best = y_z, (theta, delta, rho_a, rho_s, log_mc)
            else:
                break
    if best is None:
        raise NoStableBound("arrival rate exceeds service rate for every probed theta")
    theta, delta, rho_a, rho_s, log_mc = best
    w = _objective(log_mc, theta, delta, epsilon, t_slot)
    return EnvelopeSolution(theta, delta, rho_a, rho_s, w, it)


def grid_oracle_delay_bound(
    x_d,
    samples: ServiceSampleSet,
    epsilon: float,
    t_slot: float,
    n_theta: int = 200,
    n_delta: int = 200,
    theta_range: tuple[float, float] = (1e-6, 1.0),
) -> float:
    """Brute-force minimum of the delay bound over a (theta, delta) grid.

    theta runs over ``n_theta`` log-spaced points of ``theta_range``; for each
    stable theta, delta runs over ``n_delta`` evenly spaced points of
    (0, (rho_S - rho_A)/2]. Returns +inf when no grid point is stable.
    """
    if n_theta < 2 or n_delta < 1:
        raise ValueError("grid too small")
    arr = _Mgf.from_samples(x_d)
    srv = _Mgf.from_sample_set(samples)
    best = math.inf
    log_eps = math.log(epsilon / 2.0)
    frac = np.arange(1, n_delta + 1) / n_delta
    for theta in np.geomspace(theta_range[0], theta_range[1], n_theta):
        theta = float(theta)
        rho_a = arr.log_mgf(theta) / (theta * t_slot)
        log_mc = srv.log_mgf(-theta)
        rho_s = -log_mc / (theta * t_slot)
        if not rho_s > rho_a:
            continue
        delta = frac * (rho_s - rho_a) / 2
        denom = log_mc + delta * theta * t_slot
        with np.errstate(divide="ignore"):
            num = 2.0 * t_slot * (log_eps + np.log(-np.expm1(-theta * delta)))
            w = np.where(denom < 0, num / np.where(denom < 0, denom, -1.0), np.inf)
        best = min(best, float(np.min(w)))
    return best
