"""Shared configuration and packet types.

Units: rates in bits/s, delays in seconds, queue ages in TTIs.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

from .errors import ConfigError


@dataclass(frozen=True)
class CellConfig:
    n_cell_rb: int
    t_slot: float = 1e-3
    t_out: int = 1000
    t_obs: int = 4000
    rng_seed: int = 0

    def check(self) -> None:
        if self.n_cell_rb < 1:
            raise ConfigError(f"n_cell_rb must be >= 1, got {self.n_cell_rb}")
        if not self.t_slot > 0:
            raise ConfigError(f"t_slot must be > 0, got {self.t_slot}")
        if self.t_out < 1:
            raise ConfigError(f"t_out must be >= 1, got {self.t_out}")
        if self.t_obs < 1:
            raise ConfigError(f"t_obs must be >= 1, got {self.t_obs}")
        if self.t_obs < self.t_out:
            raise ConfigError(f"t_obs ({self.t_obs}) must be >= t_out ({self.t_out})")
        if not 0 <= self.rng_seed < 2**64:
            raise ConfigError(f"rng_seed must fit in 64 bits, got {self.rng_seed}")


@dataclass(frozen=True)
class ServiceSpec:
    """SLA of one uRLLC service plus the descriptor of its traffic source.

    ``source`` is a mapping understood by :func:`urllc_orch.trace_io.make_source`,
    e.g. ``{"kind": "poisson_batch", "lam": 2, "pkt_size": 400, "bits_per_rb": 120}``.
    """

    id: int
    w_th: float
    epsilon: float
    source: Mapping[str, Any] = field(default_factory=dict, compare=False)

    def check(self, t_slot: float) -> None:
        if not 0 < self.epsilon < 1:
            raise ConfigError(f"service {self.id}: epsilon must be in (0,1), got {self.epsilon}")
        # small slack so that w_th == t_slot survives float noise
        if self.w_th < t_slot * (1 - 1e-12):
            raise ConfigError(f"service {self.id}: w_th ({self.w_th}) must be >= t_slot ({t_slot})")

    def budget_ttis(self, t_slot: float) -> int:
        """Largest whole number of TTIs a packet may wait, floor(w_th / t_slot)."""
        return int(self.w_th / t_slot + 1e-9)


@dataclass(slots=True)
class Packet:
    service_id: int
    size_bits: int
    arrival_tti: int
    bits_remaining: int
    bits_per_rb: int
    rbs_used: int = 0

    def rbs_needed(self) -> int:
        return -(-self.bits_remaining // self.bits_per_rb)


def validate_config(
    cell: CellConfig, services: Sequence[ServiceSpec]
) -> tuple[CellConfig, tuple[ServiceSpec, ...]]:
    """Check every invariant and return the configuration unchanged.

    Raises ConfigError naming the first violated invariant.
    """
    cell.check()
    services = tuple(services)
    if not services:
        raise ConfigError("at least one service is required")
    ids = [s.id for s in services]
    if len(set(ids)) != len(ids):
        raise ConfigError(f"service ids must be unique, got {ids}")
    for s in services:
        s.check(cell.t_slot)
    if cell.n_cell_rb < len(services):
        raise ConfigError(
            f"n_cell_rb ({cell.n_cell_rb}) < number of services ({len(services)}): "
            "equal split would leave a service with 0 RBs"
        )
    return cell, services
