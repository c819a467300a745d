"""Two-timescale RB orchestration for uRLLC services in a RAN cell.

A near-RT controller sets guaranteed RBs per service from stochastic
network calculus delay bounds; a per-TTI controller grants them, shares the
rest by EDF and temporarily moves guarantees toward services falling behind.
"""
from .domain import CellConfig, Packet, ServiceSpec, validate_config
from .errors import OrchError

__version__ = "0.1.0"

__all__ = ["CellConfig", "Packet", "ServiceSpec", "validate_config", "OrchError", "__version__"]
