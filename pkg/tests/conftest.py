import numpy as np
import pytest

from urllc_orch.domain import CellConfig, ServiceSpec

BPR = {"values": [100, 150, 250]}


def poisson_source(lam=1.0, sizes=(300, 1200), probs=(0.5, 0.5), bpr=BPR):
    return {"kind": "poisson_batch", "lam": lam, "pkt_size": {"values": list(sizes), "probs": list(probs)}, "bits_per_rb": bpr}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_cell():
    return CellConfig(n_cell_rb=30, t_out=200, t_obs=400)


@pytest.fixture
def three_services():
    return (
        ServiceSpec(0, 0.003, 1e-3, poisson_source(0.6)),
        ServiceSpec(1, 0.01, 1e-3, poisson_source(0.8)),
        ServiceSpec(2, 0.02, 1e-3, poisson_source(1.0)),
    )


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
