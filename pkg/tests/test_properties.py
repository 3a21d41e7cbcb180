"""Randomised invariants of stencils, models and the subgrid construction."""
from fractions import Fraction

import numpy as np
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import built
from holistic2d.grid import GridField, MacroGrid, StencilId, apply_stencil_field
from holistic2d.models import ModelKind, ModelSpec, rhs, rhs_full
from holistic2d.polynomial import Poly
from holistic2d.subgrid import build_correction_system, max_residual

kinds = st.sampled_from([k for k in ModelKind if k is not ModelKind.CONSTRUCTED])
stencils = st.sampled_from(list(StencilId))
elements = st.integers(3, 9)
reals = st.floats(-2.0, 2.0, allow_nan=False)
params = st.tuples(st.floats(0.0, 1.0), st.floats(0.0, 30.0))
orders = st.tuples(st.integers(2, 4), st.integers(1, 3), st.integers(1, 2))


@st.composite
def odd_fields(draw):
    m = draw(elements)
    grid = MacroGrid.odd_periodic(m)
    vals = draw(arrays(float, grid.shape, elements=reals))
    return GridField(grid, vals)


@given(stencils, elements, elements, st.floats(-1e3, 1e3))
def test_stencils_annihilate_constants(s, mx, my, c):
    grid = MacroGrid.periodic(mx, my)
    out = apply_stencil_field(GridField(grid, np.full(grid.shape, c)), s)
    assert np.max(np.abs(out.values)) <= 1e-12 * max(1.0, abs(c))


@given(odd_fields(), kinds, params)
def test_odd_symmetry_preserved(u, kind, p):
    grid = u.grid
    out = rhs_full(ModelSpec(kind, *p), u.full(), grid.h)
    m = grid.mx
    scale = 1e-10 * max(1.0, float(np.max(np.abs(out))))
    assert np.max(np.abs(out[0, :])) <= scale and np.max(np.abs(out[:, m])) <= scale
    # odd about x = 0 and y = 0 on the full period
    assert np.allclose(out[1:, :], -out[:0:-1, :], atol=scale)
    assert np.allclose(out[:, 1:], -out[:, :0:-1], atol=scale)


@given(odd_fields(), kinds, params)
def test_rhs_sign_equivariance(u, kind, p):
    model = ModelSpec(kind, *p)
    a = rhs(model, u.with_values(-u.values)).values
    b = rhs(model, u).values
    assert np.allclose(a, -b, atol=1e-9 * max(1.0, float(np.max(np.abs(b)))))


@given(orders)
def test_construction_invariants(o):
    n, pg, pa = o
    man = built(n, pg, pa)
    u0 = Poly.symbol(0, 0)
    # sign equivariance of the evolution
    for _, p in man.g.items():
        assert p.substitute_sign() == -p
    # amplitude condition at every order
    for order, f in man.v.fields.items():
        assert f.node_poly(0, 0) == (u0 if order == (0, 0) else Poly.zero())
    # zero-residual postcondition
    assert max_residual(man) == 0.0


@given(st.integers(2, 5), st.fractions(min_value=-10, max_value=10, max_denominator=50),
       st.sampled_from(["rational", "float"]))
def test_constant_residual_identity(n, c, mode):
    s = build_correction_system(n, mode)
    rhs_vec = np.array([s.ar.coerce(c if k == "pde" else Fraction(0)) for k in s.row_kind], dtype=s.ar.dtype)
    x = s.solve(rhs_vec)[:, 0]
    if mode == "rational":
        assert all(v == 0 for v in x[:-1])
        assert Fraction(int(x[-1].p), int(x[-1].q)) == -c
    else:
        assert np.max(np.abs(x[:-1].astype(float))) < 1e-10
        assert abs(float(x[-1]) + float(c)) < 1e-10
