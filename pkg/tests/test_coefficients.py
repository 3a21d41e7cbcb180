import json
from fractions import Fraction

import numpy as np
import pytest

from conftest import built
from holistic2d.coefficients import (
    TABLE1,
    TABLE2,
    DictionaryError,
    analytic_table1_row,
    coefficient_error_table,
    dictionary,
    extract_coefficients,
    last_digit_unit,
    load_model,
    match_order,
    save_model,
    table1_row,
)
from holistic2d.grid import MacroGrid
from holistic2d.models import T_D2, T_D4, ModelKind, ModelSpec, rhs
from holistic2d.polynomial import Poly

F = Fraction


@pytest.fixture(scope="module")
def error_table():
    return coefficient_error_table((2, 4, 8))


@pytest.mark.parametrize("n", [2, 4])
def test_table1_rows(n):
    assert table1_row(built(n)) == TABLE1[n]


def test_analytic_row():
    assert analytic_table1_row() == TABLE1[None]


def test_order_one_slot_is_exact(manifold_n4):
    tab = extract_coefficients(manifold_n4.g, {(1, 0): [T_D2]})
    m = tab[(1, 0)]
    assert m.coefficients == [F(1)]
    assert m.residual == Poly.zero()
    assert m.exact and m.unique and m.complete


def test_incomplete_dictionary_reported(manifold_n4):
    with pytest.raises(DictionaryError, match="incomplete"):
        extract_coefficients(manifold_n4.g, {(2, 0): [T_D2]})
    tab = extract_coefficients(manifold_n4.g, {(2, 0): [T_D2]}, strict=False)
    assert not tab[(2, 0)].complete


def test_match_exact_combination():
    u0 = Poly.symbol(0, 0)
    target = T_D2.fn(u0).scale(F(2, 3)) + T_D4.fn(u0).scale(F(-5, 7))
    m = match_order(target, [T_D2, T_D4])
    assert m.coefficients == [F(2, 3), F(-5, 7)]


def test_dependent_dictionary_uses_reference():
    dic = dictionary()
    coeffs, terms = zip(*dic[(2, 1)])
    u0 = Poly.symbol(0, 0)
    target = Poly.zero()
    for c, t in zip(coeffs, terms):
        target = target + t.fn(u0).scale(c)
    m = match_order(target, terms, coeffs, (2, 1))
    assert not m.unique
    assert m.complete
    # the reference itself is the closest decomposition of its own expansion
    assert max(abs(float(a) - float(b)) for a, b in zip(m.coefficients, coeffs)) < 1e-12


def test_last_digit_unit():
    assert last_digit_unit("0.021") == pytest.approx(0.001)
    assert last_digit_unit("0.0000061") == pytest.approx(1e-7)
    assert last_digit_unit("3") == 1.0


def test_error_table_examples(error_table):
    assert error_table.entry(2, (1, 1)).error == pytest.approx(0.062, abs=2e-3)
    assert error_table.entry(4, (2, 0)).error == pytest.approx(0.0052, abs=2e-4)
    assert error_table.entry(8, (1, 2)).error == pytest.approx(0.0000061, abs=2e-7)


def test_error_table_decay(error_table):
    assert error_table.quadratic
    assert error_table.entry(2, (2, 1)).source.startswith("oracle")
    d = error_table.as_dict()
    assert len(d["entries"]) == 15
    assert set(d["closest_decomposition_errors"]) == {"2:gamma^2*alpha", "4:gamma^2*alpha", "8:gamma^2*alpha"}


def test_error_table_published_cells(error_table):
    for e in error_table.entries:
        if e.source == "analytic":
            assert e.published == TABLE2[e.n][e.order]
            assert e.published_match, (e.n, e.label, e.error)


def test_model_file_round_trip(tmp_path, manifold_n2):
    table = extract_coefficients(manifold_n2.g, strict=False)
    path = tmp_path / "m.json"
    save_model(path, manifold_n2, table, {"command": "test"})
    data = json.loads(path.read_text())
    assert data["n"] == 2 and data["orders"] == [3, 3]
    assert data["coefficients"]["2,0"]["terms"][0]["coeff"] == "-1/16"
    model = load_model(path, gamma=0.8, alpha=3.0)
    direct = ModelSpec.constructed(manifold_n2.g, 0.8, 3.0, n=2)
    g = MacroGrid.odd_periodic(6)
    u = g.sample(lambda x, y: np.sin(x) * np.sin(2 * y))
    np.testing.assert_allclose(rhs(model, u).values, rhs(direct, u).values, atol=1e-12)
    assert model.describe()["constructed"]["n"] == 2


def test_load_rejects_other_files(tmp_path):
    p = tmp_path / "x.json"
    p.write_text("{}")
    with pytest.raises(ValueError):
        load_model(p)


def test_constructed_model_matches_catalogue_at_low_order():
    g = MacroGrid.odd_periodic(6)
    u = g.sample(lambda x, y: 0.9 * np.sin(x) * np.sin(y))
    a = rhs(ModelSpec.constructed(built(3, 2, 2, 2).g, 1.0, 4.0), u)
    b = rhs(ModelSpec(ModelKind.CENTERED2, 1.0, 4.0), u)
    np.testing.assert_allclose(a.values, b.values, atol=1e-12)
