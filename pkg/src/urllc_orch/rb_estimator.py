"""Estimators of pi_{m,n}: the probability that service m finds n RBs beyond
its guarantee available in a TTI where it needs more than the guarantee.

Three interchangeable estimators share the ``pi(m, allocation, n_add)``
interface: pessimistic (all mass at n=0), empirical (counterfactual counting
over recent RB demand) and MDN-based (see :mod:`urllc_orch.mdn`).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np
from scipy.special import ndtr

from .trace_io import SampleWindow


@dataclass(frozen=True)
class GmmParams:
    weights: np.ndarray
    means: np.ndarray
    stds: np.ndarray

    def __post_init__(self):
        w, mu, sd = (np.asarray(a, dtype=float).ravel() for a in (self.weights, self.means, self.stds))
        if not (w.shape == mu.shape == sd.shape) or w.size == 0:
            raise ValueError("weights, means and stds must be equally long and nonempty")
        if np.any(w < 0) or abs(w.sum() - 1) > 1e-9:
            raise ValueError("mixture weights must be non-negative and sum to 1")
        if np.any(sd <= 0):
            raise ValueError("standard deviations must be > 0")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "stds", sd)

    @property
    def k(self) -> int:
        return self.weights.size


def region_probabilities(gmm: GmmParams, n_add: int) -> np.ndarray:
    """Mass of the mixture on unit-width regions around 0..n_add.

    Region n is [n - 0.5, n + 0.5]; the outer regions absorb the tails,
    (-inf, 0.5] for n = 0 and [n_add - 0.5, inf) for n = n_add.
    """
    if n_add < 0:
        raise ValueError("n_add must be >= 0")
    edges = np.arange(n_add + 2, dtype=float) - 0.5
    edges[0], edges[-1] = -np.inf, np.inf
    z = (edges[None, :] - gmm.means[:, None]) / gmm.stds[:, None]
    cdf = ndtr(z)
    pi = gmm.weights @ np.diff(cdf, axis=1)
    return np.clip(pi, 0.0, None)


def empirical_pi(history, n_add: int) -> np.ndarray:
    """Relative frequency of each extra-RB count; counts above n_add fold into n_add.

    An empty history yields the pessimistic PMF (all mass at n = 0).
    """
    h = np.asarray(history, dtype=np.int64).ravel()
    pi = np.zeros(n_add + 1)
    if h.size == 0:
        pi[0] = 1.0
        return pi
    if np.any(h < 0):
        raise ValueError("extra-RB counts must be >= 0")
    counts = np.bincount(np.minimum(h, n_add), minlength=n_add + 1)
    return counts / h.size


class RbEstimator(Protocol):
    name: str

    def pi(self, m: int, allocation: Sequence[int], n_add: int) -> np.ndarray: ...


class PessimisticEstimator:
    """Never counts on extra RBs."""

    name = "pessimistic"

    def pi(self, m, allocation, n_add):
        pi = np.zeros(n_add + 1)
        pi[0] = 1.0
        return pi


class EmpiricalEstimator:
    """Counterfactual frequency counting over a recorded RB-demand history.

    For a candidate allocation, service m is conditioned on TTIs where its
    demand exceeded its guarantee; in such a TTI every other service is
    assumed to be served first, so the RBs left over for m are
    ``n_cell_rb - n_m - sum of the others' demand`` (clipped at 0).
    """

    name = "empirical"

    def __init__(self, rb_demand: np.ndarray, n_cell_rb: int):
        self.rb_demand = np.asarray(rb_demand, dtype=np.int64)
        if self.rb_demand.ndim != 2:
            raise ValueError("rb_demand must be (n_services, n_ttis)")
        self.n_cell_rb = n_cell_rb
        self._total = self.rb_demand.sum(axis=0)

    @classmethod
    def from_windows(cls, windows: Sequence[SampleWindow], n_cell_rb: int) -> "EmpiricalEstimator":
        if any(w.rb_demand is None for w in windows):
            raise ValueError("windows carry no rb_demand telemetry")
        return cls(np.stack([w.rb_demand for w in windows]), n_cell_rb)

    def extra_available(self, m: int, allocation: Sequence[int]) -> np.ndarray:
        own = self.rb_demand[m]
        need = own > allocation[m]
        others = self._total[need] - own[need]
        return np.maximum(self.n_cell_rb - allocation[m] - others, 0)

    def pi(self, m, allocation, n_add):
        return empirical_pi(self.extra_available(m, allocation), n_add)


def build_features(windows: Sequence[SampleWindow], allocation: Sequence[int], t_out: int) -> np.ndarray:
    """Flattened MDN input, 8 values per service.

    Per service, over the last ``t_out`` TTIs of its window: mean RBs granted,
    25/50/75th percentiles of incoming bits and of enqueued bits, then the
    candidate guarantee.
    """
    feats = []
    for w, n_min in zip(windows, allocation):
        x_d = w.x_d[-t_out:]
        q = w.queued_bits[-t_out:] if w.queued_bits is not None else x_d
        util = float(np.mean(w.rbs_granted[-t_out:])) if w.rbs_granted is not None else 0.0
        feats.append([util, *np.percentile(x_d, [25, 50, 75]), *np.percentile(q, [25, 50, 75]), float(n_min)])
    return np.asarray(feats, dtype=float).ravel()


class MdnEstimator:
    """pi from a trained mixture density network, conditioned on the candidate allocation."""

    name = "mdn"

    def __init__(self, model, windows: Sequence[SampleWindow], t_out: int):
        self.model = model
        self.windows = list(windows)
        self.t_out = t_out
        self._cache: dict[tuple[int, ...], list[GmmParams]] = {}

    def gmms(self, allocation: Sequence[int]) -> list[GmmParams]:
        key = tuple(int(a) for a in allocation)
        if key not in self._cache:
            from .mdn import mdn_forward

            self._cache[key] = mdn_forward(self.model, build_features(self.windows, key, self.t_out))
        return self._cache[key]

    def pi(self, m, allocation, n_add):
        return region_probabilities(self.gmms(allocation)[m], n_add)
