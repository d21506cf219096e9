import numpy as np
import pytest
from hypothesis import given, strategies as st

from berrygrip import kernels
from berrygrip.sensing import (FIELD_2020, PROCEDURE, AdcModel, NoiseModel, SaturationError,
                               SensorCalibration, SensorRangeError, adc_dequantize, adc_quantize,
                               check_setpoint, force_to_voltage, preset, two_point_calibrate,
                               voltage_to_force, write_calibration_csv)


def test_procedure_calibration():
    cal = two_point_calibrate((0.0, 3.0), (3.9, 4.5))
    assert cal.slope == pytest.approx(1.5 / 3.9, rel=1e-15)
    assert round(cal.slope, 4) == 0.3846
    assert cal.v_ref == 3.0
    assert preset("procedure") == PROCEDURE


def test_calibration_errors():
    with pytest.raises(ValueError):
        two_point_calibrate((0.0, 3.0), (1.0, 3.0))
    with pytest.raises(ValueError):
        two_point_calibrate((0.0, 3.0), (0.0, 4.0))
    with pytest.raises(KeyError):
        preset("nope")


def test_field_preset():
    assert FIELD_2020.slope == 5.232 and FIELD_2020.v_ref == 3.0
    assert FIELD_2020.saturation_force == pytest.approx(2 / 5.232)


def test_forward_examples():
    assert force_to_voltage(0.0, PROCEDURE) == 3.0
    assert force_to_voltage(3.9, PROCEDURE) == pytest.approx(4.5, abs=1e-12)
    assert force_to_voltage(100.0, PROCEDURE) == 5.0
    with pytest.raises(SensorRangeError):
        force_to_voltage(-0.1, PROCEDURE)


def test_inverse_examples():
    assert voltage_to_force(3.0, PROCEDURE) == 0.0
    assert voltage_to_force(4.5, PROCEDURE) == pytest.approx(3.9, abs=1e-12)
    with pytest.raises(SaturationError) as e:
        voltage_to_force(5.0, PROCEDURE)
    assert e.value.force_lower_bound == pytest.approx(2 / PROCEDURE.slope)
    with pytest.raises(SensorRangeError):
        voltage_to_force(2.9, PROCEDURE)


@given(st.floats(0.0, 1.0), st.sampled_from(["procedure", "field-2020"]))
def test_roundtrip(frac, name):
    cal = preset(name)
    f = frac * cal.saturation_force * (1 - 1e-9)
    assert abs(voltage_to_force(force_to_voltage(f, cal), cal) - f) <= 1e-12


@given(st.floats(1.0, 1e6))
def test_saturation_constant(mult):
    assert force_to_voltage(PROCEDURE.saturation_force * mult, PROCEDURE) == 5.0


def test_setpoint_saturation_flag():
    assert check_setpoint(0.78, PROCEDURE) == pytest.approx(3 + 0.78 * PROCEDURE.slope)
    check_setpoint(0.38, FIELD_2020)
    for sp in (0.383, 0.491, 1.472):
        with pytest.raises(SaturationError):
            check_setpoint(sp, FIELD_2020)


def test_adc():
    adc = AdcModel()
    assert adc_quantize(0.0, adc) == 0
    assert adc_quantize(5.0, adc) == 1023
    assert adc_quantize(3.0, adc) == 614
    with pytest.raises(SensorRangeError):
        adc_quantize(5.1, adc)
    with pytest.raises(ValueError):
        AdcModel(bits=0)


@given(st.lists(st.floats(0.0, 5.0), min_size=1, max_size=50), st.integers(1, 16))
def test_adc_idempotent_and_monotone(vs, bits):
    adc = AdcModel(bits=bits)
    v = np.sort(np.array(vs))
    q = adc_quantize(v, adc)
    assert np.array_equal(adc_quantize(adc_dequantize(q, adc), adc), q)
    assert np.all(np.diff(q) >= 0)


def test_noise_reproducible():
    a = NoiseModel(0.005, 3).sample(7, 100)
    b = NoiseModel(0.005, 3).sample(7, 100)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, NoiseModel(0.005, 4).sample(7, 100))
    assert np.array_equal(NoiseModel(0.0).sample(1, 5), np.zeros((5, 3)))
    with pytest.raises(ValueError):
        NoiseModel(-1.0)


def test_noise_is_what_the_loop_sees(cfg):
    # before contact the measured voltage is v_ref + noise, so the logged
    # error is threshold - max(v_ref + noise)
    lc = cfg.setup.constants(0.01)
    key = kernels.trial_keys(7, [3])[0]
    tr = kernels.run_trajectory(20.0, 0.6, 3.3, key, lc)
    z = NoiseModel(cfg.setup.noise_sd, 3).sample(7, len(tr.error))
    assert np.max(np.abs(tr.error - (3.3 - (cfg.cal.v_ref + z).max(axis=1)))) <= 1e-12


def test_noise_statistics():
    z = NoiseModel(1.0, 0).sample(0, 20000, 1)[:, 0]
    assert abs(z.mean()) < 4 / np.sqrt(z.size)
    assert abs(z.std() - 1) < 0.03


def test_calibration_csv(tmp_path):
    p = tmp_path / "c.csv"
    write_calibration_csv(p, PROCEDURE, [0.0, 3.9, 10.0])
    lines = p.read_text().splitlines()
    assert lines[0] == "force_N,voltage_V"
    assert lines[1:] == ["0,3", "3.9,4.5", "10,5"]


def test_calibration_invariants():
    with pytest.raises(ValueError):
        SensorCalibration(slope=0.0)
    with pytest.raises(ValueError):
        SensorCalibration(slope=1.0, v_ref=6.0)
