import math
import warnings

import numpy as np
import pytest

from holistic2d.consistency import (
    ManufacturedField,
    convergence_order,
    error_field,
    spacings,
    truncation_error,
)
from holistic2d.models import ModelKind, ModelSpec

M_LIST = [8, 16, 32, 64]


def test_manufactured_derivatives():
    f = ManufacturedField.mixed()
    X, Y = np.meshgrid(np.linspace(0, 6, 7), np.linspace(0, 6, 7), indexing="ij")
    eps = 1e-5
    num = (f(X + eps, Y) - f(X - eps, Y)) / (2 * eps)
    np.testing.assert_allclose(f.derivative(X, Y, 1, 0), num, atol=1e-8)
    num_y2 = (f(X, Y + eps) - 2 * f(X, Y) + f(X, Y - eps)) / eps ** 2
    np.testing.assert_allclose(f.derivative(X, Y, 0, 2), num_y2, atol=1e-4)


def test_sin_sin_laplacian():
    f = ManufacturedField.sin_sin()
    X, Y = np.meshgrid([0.3, 1.1], [0.7, 2.0], indexing="ij")
    np.testing.assert_allclose(f.laplacian(X, Y), -2 * f(X, Y), atol=1e-14)


def test_requires_full_coupling():
    with pytest.raises(ValueError):
        truncation_error(ModelSpec(ModelKind.CENTERED2, gamma=0.5), ManufacturedField.sin_sin(), math.pi / 4)


def test_spacing_must_divide_period():
    with pytest.raises(ValueError):
        truncation_error(ModelSpec(ModelKind.CENTERED2), ManufacturedField.sin_sin(), 0.3)


def test_centered2_leading_term():
    f = ManufacturedField.sin_sin()
    h = spacings([64])[0]
    err, X, Y, u = error_field(ModelSpec(ModelKind.CENTERED2), f, h)
    lead = h ** 2 / 12 * (f.derivative(X, Y, 4, 0) + f.derivative(X, Y, 0, 4))
    assert np.max(np.abs(err - lead)) < 1e-3 * np.max(np.abs(lead))


@pytest.mark.parametrize("kind,order,tol", [
    (ModelKind.CENTERED2, 2.0, 0.1),
    (ModelKind.HOLISTIC_G3A3, 4.0, 0.1),
    (ModelKind.CENTERED4, 4.0, 0.1),
    (ModelKind.HOLISTIC_G4A4, 6.0, 0.2),
])
def test_linear_orders(kind, order, tol):
    res = convergence_order(ModelSpec(kind), ManufacturedField.sin_sin(), spacings(M_LIST))
    assert res.order == pytest.approx(order, abs=tol)
    assert res.coefficient_ratio == pytest.approx(1.0, abs=0.05)


def test_order_hierarchy_with_mixed_field():
    f = ManufacturedField.mixed()
    orders = [convergence_order(ModelSpec(k), f, spacings([16, 32, 64, 128])).order
              for k in (ModelKind.CENTERED2, ModelKind.HOLISTIC_G3A3, ModelKind.HOLISTIC_G4A4)]
    assert orders[0] < orders[1] < orders[2]


def test_nonlinear_consistency_term():
    f = ManufacturedField.sin_sin(amplitude=0.3)
    res = convergence_order(ModelSpec(ModelKind.HOLISTIC_G3A3, 1.0, 1.0), f, spacings([32, 64, 128, 256]),
                            part="nonlinear")
    assert res.order == pytest.approx(2.0, abs=0.1)
    assert res.coefficient_ratio == pytest.approx(1.0, abs=0.05)


@pytest.mark.parametrize("kind", [k for k in ModelKind if k is not ModelKind.CONSTRUCTED])
def test_errors_vanish_with_h(kind):
    f = ManufacturedField.mixed()
    errs = [truncation_error(ModelSpec(kind, 1.0, 2.0), f, h) for h in spacings([8, 16, 32])]
    assert errs[0] > errs[1] > errs[2]


def test_fit_validation():
    m, f = ModelSpec(ModelKind.CENTERED2), ManufacturedField.sin_sin()
    with pytest.raises(ValueError, match="at least 4"):
        convergence_order(m, f, spacings([8, 16, 32]))
    with pytest.raises(ValueError, match="geometric"):
        convergence_order(m, f, spacings([8, 16, 32, 48]))


def test_round_off_floor_excluded():
    m = ModelSpec(ModelKind.HOLISTIC_G4A4)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        res = convergence_order(m, ManufacturedField.sin_sin(), spacings([16, 32, 64, 128, 256, 512]))
    assert res.excluded
    assert any("round-off" in str(w.message) for w in caught)
    assert res.order == pytest.approx(6.0, abs=0.2)


def test_result_export(tmp_path):
    res = convergence_order(ModelSpec(ModelKind.CENTERED2), ManufacturedField.sin_sin(), spacings(M_LIST))
    res.to_csv(tmp_path / "c.csv")
    res.to_json(tmp_path / "c.json", {"extra": 1})
    assert (tmp_path / "c.csv").read_text().startswith("h,error,in_fit")
    import json

    d = json.loads((tmp_path / "c.json").read_text())
    assert d["extra"] == 1 and d["model"] == "centered2" and len(d["points"]) == 4
