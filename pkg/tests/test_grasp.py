import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from berrygrip import fixtures
from berrygrip.finger import DomainError, contact_retraction
from berrygrip.grasp import (SHAPES, ConeTestSpec, ContactModel, UnknownShapeError,
                             finger_force_from_push_pull, fingertip_force, fit_stiffness_table,
                             forward_push_pull, load_fingertip_csv, load_retention_csv, retention_query)


def test_forward_examples():
    assert forward_push_pull(0.0, 3, 15.0, 0.5) == (0.0, 0.0)
    push, pull = forward_push_pull(4.92, 3, 15.0, 0.5)
    s, c = math.sin(math.radians(7.5)), math.cos(math.radians(7.5))
    assert push == pytest.approx(3 * 4.92 * (s + 0.5 * c), rel=1e-15)
    assert pull == pytest.approx(3 * 4.92 * (-s + 0.5 * c), rel=1e-15)
    # three-decimal reference figures
    assert push == pytest.approx(9.244, abs=1e-3) and pull == pytest.approx(5.391, abs=1e-3)
    _, pull0 = forward_push_pull(2.0, 3, 15.0, math.tan(math.radians(7.5)))
    assert abs(pull0) < 1e-15


def test_inverse_examples():
    assert finger_force_from_push_pull(3.3, 3.3, 3, 15.0) == 0.0
    push, pull = forward_push_pull(4.92, 3, 15.0, 0.5)
    assert finger_force_from_push_pull(push, pull, 3, 15.0) == pytest.approx(4.92, rel=1e-12)
    with pytest.raises(ValueError):
        finger_force_from_push_pull(1, 0, 1, 15.0)
    with pytest.raises(ValueError):
        finger_force_from_push_pull(1, 0, 3, 180.0)


@given(st.floats(0, 10), st.sampled_from([5.0, 15.0, 45.0]), st.floats(0, 1), st.sampled_from([2, 3, 4]))
def test_roundtrip_property(f, th, mu, n):
    push, pull = forward_push_pull(f, n, th, mu)
    assert push >= pull
    back = finger_force_from_push_pull(push, pull, n, th)
    assert abs(back - f) <= 1e-9 * max(f, 1e-300) or back == f


def test_cone_spec_validation():
    ConeTestSpec()
    for bad in (dict(cone_angle=0), dict(n_fingers=1), dict(friction=-0.1)):
        with pytest.raises(ValueError):
            ConeTestSpec(**bad)


def test_anchor_and_linear_model(cfg):
    m = cfg.contact
    assert fingertip_force(9.0, 47.0, m) == 4.92
    dl0 = contact_retraction(47.0, m.gripper, m.cmap)
    assert fingertip_force(7.0, 47.0, m) == pytest.approx(m.stiffness * (7.0 - dl0), rel=1e-12)
    assert fingertip_force(dl0 - 0.1, 47.0, m) == 0.0
    with pytest.raises(DomainError):
        fingertip_force(9.0, 60.0, m)
    with pytest.raises(DomainError):
        fingertip_force(11.0, 21.0, m)


def test_monotone_in_retraction(cfg):
    dl = np.round(np.arange(0, 10.0001, 0.1), 10)
    for d in (9.0, 21.0, 30.0, 47.0):
        f = fingertip_force(dl, d, cfg.contact)
        assert np.all(np.diff(f) >= 0)
        assert np.all(np.diff(f[f > 0]) > 0)


def test_nondecreasing_in_diameter(cfg):
    # larger objects are touched earlier, so at fixed retraction they see more force
    ds = np.linspace(9, 47, 39)
    for dl in (5.0, 7.0, 9.0):
        f = np.array([fingertip_force(dl, d, cfg.contact) for d in ds])
        assert np.all(np.diff(f) >= 0)


def test_stiffness_table_fit(tmp_path, cfg):
    m = cfg.contact
    rows = ["retraction_mm,diameter_mm,force_N"]
    for d, k in ((21.0, 0.5), (47.0, 0.8)):
        dl0 = contact_retraction(d, m.gripper, m.cmap)
        for dl in (5.0, 7.0, 9.0):
            rows.append(f"{dl},{d},{max(0.0, k * (dl - dl0))!r}")
    p = tmp_path / "f17.csv"
    p.write_text("\n".join(rows) + "\n")
    fm = fit_stiffness_table(load_fingertip_csv(p), m)
    assert fm.diameters == (21.0, 47.0)
    assert np.allclose(fm.stiffness_table, (0.5, 0.8), rtol=1e-12)
    assert fm.stiffness_at(34.0) == pytest.approx(0.65)


def test_retention_fixture_values():
    data = fixtures.retention_4mm()
    want = {"sphere": 2.75, "cylinder": 3.72, "cube": 4.96, "upright cone": 6.84,
            "inverted cone": 10.84, "icosahedron": 6.65, "stellated dodecahedron": 18.94}
    assert {r.shape: r.force for r in data} == want
    assert retention_query(data, "stellated dodecahedron", 4.0) == 18.94
    assert retention_query(data, "sphere", 4.0) == 2.75
    with pytest.raises(UnknownShapeError):
        retention_query(data, "torus", 4.0)
    with pytest.raises(DomainError):
        retention_query(data, "sphere", 5.0)


def test_retention_interpolation(tmp_path):
    p = tmp_path / "r.csv"
    p.write_text("shape,retraction_mm,force_N\nsphere,2,1.0\nsphere,4,3.0\ncube,,2.0\n")
    data = load_retention_csv(p)
    assert retention_query(data, "sphere", 3.0) == 2.0
    with pytest.raises(ValueError):
        retention_query(data, "cube", 3.0)
    p.write_text("shape,retraction_mm,force_N\ntorus,2,1.0\n")
    with pytest.raises(UnknownShapeError):
        load_retention_csv(p)
    assert len(SHAPES) == 7
