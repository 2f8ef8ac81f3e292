import cmath
import math

import pytest

import fiotrace


def test_builtins_listed():
    assert fiotrace.builtin_names() == [
        "rotation", "halfwave", "fiberpair", "shift_along_x", "parabola_tangency", "pdo_conormal",
    ]


def test_check_verdicts():
    assert fiotrace.check_scenario("rotation").exit_code == 0
    sh = fiotrace.check_scenario("shift_along_x")
    assert sh.exit_code == 2
    assert sh.condition1 and not sh.condition2
    assert sh.g_min < 1e-6
    pb = fiotrace.check_scenario("parabola_tangency")
    assert not pb.condition1
    assert pb.tangent_gap == 1
    assert fiotrace.check_scenario("rotation", canonical=True).exit_code == 0


def test_rotation_amplitude():
    a = math.pi / 3
    c = fiotrace.check_scenario("rotation", params={"a": a})
    b = c.amplitude([[2.0, 2.0 * math.cos(a)], [5.0, 5.0 * math.cos(a)]])
    for v in b:
        assert abs(v - 1 / (2 * math.pi * math.sin(a))) < 1e-9


def test_halfwave_amplitude_phase():
    c = fiotrace.check_scenario("halfwave")
    assert c.traced_order == 0.5
    (b,) = c.amplitude([[4.0, 0.0]])
    assert abs(cmath.phase(b) - math.pi / 4) < 1e-9
    assert abs(abs(b) - 2 / (2 * math.pi)) < 1e-9


def test_forced_pdo_rows_fail():
    c = fiotrace.check_scenario("pdo_conormal")
    with pytest.raises(RuntimeError):
        c.amplitude([[0.3, 1.0]])
    assert c.amplitude([[0.3, 1.0]], force=True) == [None]


def test_config_round_trip_and_errors():
    ini = fiotrace.scenario_ini("halfwave")
    assert fiotrace.normalize_ini(ini) == ini
    assert fiotrace.check_config(ini, params={"t": 2.0}).exit_code == 0
    with pytest.raises(fiotrace.ConfigError, match="line 3"):
        fiotrace.check_config('[phase]\nphi = "x[1]*th[1]"\nn_theta = 0\n')


def test_zero_amplitude_kernel():
    ini = fiotrace.scenario_ini("rotation").replace('re = "1"', 're = "0"')
    c = fiotrace.check_config(ini)
    out = c.oracle("trace_kernel", "0.5,0.7")
    assert out["values"] == [0j]
