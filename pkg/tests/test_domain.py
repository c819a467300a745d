import pytest

from urllc_orch.domain import CellConfig, Packet, ServiceSpec, validate_config
from urllc_orch.errors import ConfigError


def test_valid_config_round_trips():
    cell = CellConfig(n_cell_rb=60)
    specs = [ServiceSpec(0, 0.005, 1e-3), ServiceSpec(1, 0.01, 1e-3)]
    out_cell, out_specs = validate_config(cell, specs)
    assert out_cell is cell
    assert out_specs == tuple(specs)


@pytest.mark.parametrize(
    "cell, specs, needle",
    [
        (CellConfig(2), [ServiceSpec(i, 0.01, 1e-3) for i in range(3)], "n_cell_rb"),
        (CellConfig(10), [ServiceSpec(0, 0.01, 1e-3), ServiceSpec(0, 0.02, 1e-3)], "unique"),
        (CellConfig(10), [ServiceSpec(0, 0.01, 0.0)], "epsilon"),
        (CellConfig(10), [ServiceSpec(0, 0.01, 1.0)], "epsilon"),
        (CellConfig(10), [ServiceSpec(0, 0.0005, 1e-3)], "w_th"),
        (CellConfig(10), [], "at least one"),
        (CellConfig(10, t_obs=500, t_out=1000), [ServiceSpec(0, 0.01, 1e-3)], "t_obs"),
        (CellConfig(0), [ServiceSpec(0, 0.01, 1e-3)], "n_cell_rb"),
        (CellConfig(10, t_slot=0.0), [ServiceSpec(0, 0.01, 1e-3)], "t_slot"),
    ],
)
def test_invalid_configs_name_the_invariant(cell, specs, needle):
    with pytest.raises(ConfigError, match=needle):
        validate_config(cell, specs)


def test_w_th_equal_to_one_slot_is_allowed():
    validate_config(CellConfig(1), [ServiceSpec(0, 1e-3, 0.1)])


def test_budget_ttis_floors():
    assert ServiceSpec(0, 0.0075, 1e-3).budget_ttis(1e-3) == 7
    assert ServiceSpec(0, 0.003, 1e-3).budget_ttis(1e-3) == 3


def test_packet_rbs_needed_is_ceiling():
    p = Packet(0, 1000, 0, 1000, 300)
    assert p.rbs_needed() == 4
    p.bits_remaining = 600
    assert p.rbs_needed() == 2
