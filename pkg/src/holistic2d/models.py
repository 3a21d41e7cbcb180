"""Macroscale discrete models of the 2D Ginzburg-Landau equation and their simulation.

Every model is a sum of groups ``gamma**a * alpha**b * h**(2b - 2) * sum_t c_t T_t(u)``
where the terms ``T_t`` are stencil expressions.  The terms are generic over
numeric arrays and symbolic :class:`~holistic2d.polynomial.Poly` grids, so the
same catalogue drives time stepping, Jacobians and coefficient extraction.
"""
from __future__ import annotations

import csv
import enum
import json
import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .grid import (
    GridField,
    MacroGrid,
    delta2,
    delta2x,
    delta2x_delta2y,
    delta2y,
    delta4,
    delta6,
    laplacian4,
    mu_delta3_x,
    mu_delta3_y,
    mu_delta_x,
    mu_delta_y,
    shift,
)
from .polynomial import Poly, Series2

F = Fraction


class ModelKind(str, enum.Enum):
    HOLISTIC_G3A3 = "holistic_g3a3"
    HOLISTIC_G4A4 = "holistic_g4a4"
    CENTERED2 = "centered2"
    CENTERED4 = "centered4"
    CONSTRUCTED = "constructed"


@dataclass(frozen=True)
class Term:
    label: str
    fn: Callable


def _t(label, fn):
    return Term(label, fn)


# -- term catalogue ----------------------------------------------------------

def _sq(f):
    return f * f


def _cube(f):
    return f * f * f


def _dot(ax, bx, ay, by):
    # braces products pair the x and y components of directional differences
    return ax * bx + ay * by


def _d4x(u):
    return delta2x(delta2x(u))


def _d4y(u):
    return delta2y(delta2y(u))


T_U = _t("u", lambda u: u)
T_U3 = _t("u^3", _cube)
T_D2 = _t("d2 u", delta2)
T_D4 = _t("d4 u", delta4)
T_D6 = _t("d6 u", delta6)
T_LAP4 = _t("lap4 u", laplacian4)
T_D2U3 = _t("d2 u^3", lambda u: delta2(_cube(u)))
T_U2D2U = _t("u^2 d2 u", lambda u: _sq(u) * delta2(u))

GAMMA2_ALPHA_TERMS = [
    _t("u^2 d2 u", lambda u: _sq(u) * delta2(u)),
    _t("u^2 d4 u", lambda u: _sq(u) * delta4(u)),
    _t("u^2 dx2dy2 u", lambda u: _sq(u) * delta2x_delta2y(u)),
    _t("u d2(u^2)", lambda u: u * delta2(_sq(u))),
    _t("u {d2 u}.{d2 u}", lambda u: u * (_sq(delta2x(u)) + _sq(delta2y(u)))),
    _t("u (dx2 u)(dy2 u)", lambda u: u * delta2x(u) * delta2y(u)),
    _t("u |mu d u|^2", lambda u: u * (_sq(mu_delta_x(u)) + _sq(mu_delta_y(u)))),
    _t("(mu_y dx2 u)(mu_y u^2)", lambda u: mu_delta_y(delta2x(u)) * mu_delta_y(_sq(u))),
    _t("(mu_x dy2 u)(mu_x u^2)", lambda u: mu_delta_x(delta2y(u)) * mu_delta_x(_sq(u))),
    _t("(mu d u^2).(mu d u)", lambda u: mu_delta_x(_sq(u)) * mu_delta_x(u) + mu_delta_y(_sq(u)) * mu_delta_y(u)),
    _t("(mu d3 u).(mu d u^2)", lambda u: mu_delta3_x(u) * mu_delta_x(_sq(u)) + mu_delta3_y(u) * mu_delta_y(_sq(u))),
    _t("(d2 u^2)(dx2dy2 u)", lambda u: delta2(_sq(u)) * delta2x_delta2y(u)),
    _t("{d4 u}.{d2 u^2}", lambda u: _dot(_d4x(u), delta2x(_sq(u)), _d4y(u), delta2y(_sq(u)))),
    _t("(dx2 u^2)(dy2 u)", lambda u: delta2x(_sq(u)) * delta2y(u)),
    _t("(dy2 u^2)(dx2 u)", lambda u: delta2y(_sq(u)) * delta2x(u)),
    _t("{d2 u^2}.{d2 u}", lambda u: _dot(delta2x(_sq(u)), delta2x(u), delta2y(_sq(u)), delta2y(u))),
    _t("d4 u^3", lambda u: delta4(_cube(u))),
    _t("d2 u^3", lambda u: delta2(_cube(u))),
    _t("dx2dy2 u^3", lambda u: delta2x_delta2y(_cube(u))),
]
GAMMA2_ALPHA_COEFFS = [F(c, 720) for c in (222, 24, -3, -102, 36, 6, -144, -6, -6, 12, 12)] + [
    F(-3, 2 * 720), F(3, 720), F(-3, 720), F(-3, 720), F(9, 720), F(-8, 720), F(-6, 720), F(1, 720)
]
#: terms whose definition relies on the mean-difference operators
MU_TERMS = {t.label for t in GAMMA2_ALPHA_TERMS if "mu" in t.label}

GAMMA_ALPHA2_TERMS = [
    _t("u^4 d2 u", lambda u: _sq(_sq(u)) * delta2(u)),
    _t("u^2 d2 u", lambda u: _sq(u) * delta2(u)),
    _t("u^2 d2 u^3", lambda u: _sq(u) * delta2(_cube(u))),
    _t("d2 u^3", lambda u: delta2(_cube(u))),
    _t("d2 u^5", lambda u: delta2(_sq(_sq(u)) * u)),
]
GAMMA_ALPHA2_COEFFS = [F(3, 240), F(6, 240), F(-6, 240), F(-2, 240), F(3, 240)]

Group = tuple[int, int, list]  # (a, b, [(coeff, Term)])

_BASE = [
    (1, 0, [(F(1), T_D2)]),
    (0, 1, [(F(1), T_U), (F(-1), T_U3)]),
]
_G3A3 = _BASE + [
    (2, 0, [(F(-1, 12), T_D4)]),
    (1, 1, [(F(1, 12), T_D2U3), (F(-1, 4), T_U2D2U)]),
]
_G4A4 = _G3A3 + [
    (3, 0, [(F(1, 90), T_D6)]),
    (2, 1, list(zip(GAMMA2_ALPHA_COEFFS, GAMMA2_ALPHA_TERMS))),
    (1, 2, list(zip(GAMMA_ALPHA2_COEFFS, GAMMA_ALPHA2_TERMS))),
]
CATALOGUE: dict[ModelKind, list[Group]] = {
    ModelKind.HOLISTIC_G3A3: _G3A3,
    ModelKind.HOLISTIC_G4A4: _G4A4,
    ModelKind.CENTERED2: _BASE,
    ModelKind.CENTERED4: [(1, 0, [(F(1), T_LAP4)]), _BASE[1]],
}


def poly_term(label: str, p: Poly) -> Term:
    """Term evaluating a polynomial in shifted grid values."""
    items = [(m, c) for m, c in p.terms.items()]

    def fn(u):
        if isinstance(u, Poly):
            out = Poly.zero()
            for m, c in items:
                t = Poly.constant(c)
                for s in m:
                    t = t * u.shift(s)
                out = out + t
            return out
        cache: dict = {}
        out = np.zeros_like(u)
        for m, c in items:
            t = float(c)
            for s in m:
                if s not in cache:
                    cache[s] = shift(u, *s)
                t = t * cache[s]
            out = out + t
        return out

    return Term(label, fn)


@dataclass(frozen=True)
class ModelSpec:
    """A macroscale model: kind, coupling ``gamma``, nonlinearity ``alpha``.

    ``orders`` optionally truncates the catalogue to groups with ``a < p_gamma``,
    ``b < p_alpha`` (and ``a + b < total``), e.g. ``orders=(2, 2)`` turns the
    g3a3 model into the lower-order holistic model without the ``gamma**2`` term.
    """

    kind: ModelKind
    gamma: float = 1.0
    alpha: float = 0.0
    h: float | None = None
    orders: tuple | None = None
    groups_override: tuple | None = field(default=None, repr=False, compare=False)
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "kind", ModelKind(self.kind))
        if self.kind is ModelKind.CONSTRUCTED and self.groups_override is None:
            raise ValueError("constructed models need groups (use ModelSpec.constructed)")

    @classmethod
    def constructed(cls, g: Series2, gamma=1.0, alpha=0.0, n: int | None = None, **kw) -> "ModelSpec":
        groups = tuple(
            (a, b, [(F(1), poly_term(f"G[{a},{b}]", p))]) for (a, b), p in g.items()
        )
        meta = {"n": n, "orders": list(g.orders), "total": g.total}
        return cls(ModelKind.CONSTRUCTED, gamma, alpha, groups_override=groups, meta=meta, **kw)

    def with_params(self, **changes) -> "ModelSpec":
        from dataclasses import replace

        return replace(self, **changes)

    @property
    def groups(self) -> list[Group]:
        groups = list(self.groups_override) if self.groups_override is not None else CATALOGUE[self.kind]
        if self.orders is None:
            return groups
        pg, pa, *rest = self.orders
        total = rest[0] if rest else None
        return [
            grp for grp in groups
            if grp[0] < pg and grp[1] < pa and (total is None or grp[0] + grp[1] < total)
        ]

    @property
    def outside_unit_gamma(self) -> bool:
        return not (0.0 <= self.gamma <= 1.0)

    def describe(self) -> dict:
        return {
            "kind": self.kind.value,
            "gamma": self.gamma,
            "alpha": self.alpha,
            "h": self.h,
            "orders": list(self.orders) if self.orders else None,
            "gamma_outside_unit_interval": self.outside_unit_gamma,
            **({"constructed": self.meta} if self.kind is ModelKind.CONSTRUCTED else {}),
        }


def model_poly(model: ModelSpec, group_filter=None) -> dict[tuple[int, int], Poly]:
    """Each group of the model expanded over grid symbols (h = 1 scaling)."""
    u0 = Poly.symbol(0, 0)
    out = {}
    for a, b, terms in model.groups:
        if group_filter and (a, b) not in group_filter:
            continue
        p = Poly.zero()
        for c, t in terms:
            p = p + t.fn(u0).scale(c)
        out[(a, b)] = p
    return out


def _check_grid(model: ModelSpec, grid: MacroGrid):
    if model.h is not None and not math.isclose(model.h, grid.h, rel_tol=1e-12):
        raise ValueError(f"model spacing h={model.h} does not match grid spacing {grid.h}")


def rhs_full(model: ModelSpec, full: np.ndarray, h: float) -> np.ndarray:
    """Model right-hand side on one full period array."""
    out = np.zeros_like(full)
    g, al = model.gamma, model.alpha
    for a, b, terms in model.groups:
        scale = (g ** a) * (al ** b) * h ** (2 * b - 2)
        if scale == 0.0:
            continue
        acc = np.zeros_like(full)
        for c, t in terms:
            acc += float(c) * t.fn(full)
        out += scale * acc
    return out


def rhs(model: ModelSpec, u: GridField) -> GridField:
    """``du/dt`` of the grid values under ``model``."""
    _check_grid(model, u.grid)
    full = rhs_full(model, u.full(), u.grid.h)
    return u.with_values(u.grid.restrict(full))


def jacobian(model: ModelSpec, u: GridField, eps: float = 1e-7) -> np.ndarray:
    """Forward-difference Jacobian of :func:`rhs` over the stored values."""
    base = rhs(model, u).flat()
    x = u.flat()
    scale = max(1.0, float(np.max(np.abs(x))))
    step = eps * scale
    J = np.empty((x.size, x.size))
    for k in range(x.size):
        xp = x.copy()
        xp[k] += step
        J[:, k] = (rhs(model, u.with_values(xp.reshape(u.grid.shape))).flat() - base) / step
    return J


def exact_jacobian(model: ModelSpec, u: GridField) -> np.ndarray:
    """Analytic Jacobian for the ``centered2`` and ``holistic_g3a3`` models."""
    if model.kind not in (ModelKind.CENTERED2, ModelKind.HOLISTIC_G3A3) or model.orders:
        raise NotImplementedError("exact Jacobian only for centered2 and holistic_g3a3")
    grid = u.grid
    n = grid.size
    g, al, h = model.gamma, model.alpha, grid.h
    full = u.full()
    rows, cols, sign = grid._ext

    def lin(op, weight_full=None):
        # op applied to the pointwise product (weight * e_k) for every unit vector e_k
        M = np.empty((n, n))
        for k in range(n):
            e = np.zeros(grid.shape)
            e.flat[k] = 1.0
            ef = grid.extend(e)
            if weight_full is not None:
                ef = ef * weight_full
            M[:, k] = grid.restrict(op(ef)).ravel()
        return M

    J = (g / h**2) * lin(delta2) + al * np.diag(1 - 3 * u.flat() ** 2)
    if model.kind is ModelKind.HOLISTIC_G3A3:
        J += -(g**2 / (12 * h**2)) * lin(delta4)
        d2u = grid.restrict(delta2(full)).ravel()
        J += al * g * (
            lin(delta2, 3 * full**2) / 12
            - 0.25 * (np.diag(2 * u.flat() * d2u) + np.diag(u.flat() ** 2) @ lin(delta2))
        )
    return J


# ---------------------------------------------------------------------------
# time integration
# ---------------------------------------------------------------------------


@dataclass
class Trajectory:
    times: list
    states: list
    model: ModelSpec | None = None
    dt: float | None = None

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise ValueError("trajectory times must be strictly increasing")
        shapes = {s.values.shape for s in self.states}
        if len(shapes) > 1:
            raise ValueError("trajectory states change shape")

    @property
    def final(self) -> GridField:
        return self.states[-1]

    def metadata(self) -> dict:
        grid = self.states[0].grid
        return {
            "model": self.model.describe() if self.model else None,
            "grid": grid.describe(),
            "shape": list(grid.shape),
            "dt": self.dt,
            "snapshots": len(self.times),
        }

    def to_csv(self, path) -> None:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            size = self.states[0].values.size
            w.writerow(["t"] + [f"u{k}" for k in range(size)])
            for t, s in zip(self.times, self.states):
                w.writerow([repr(float(t))] + [repr(float(x)) for x in s.flat()])

    def to_json(self, path, extra: dict | None = None) -> None:
        meta = self.metadata()
        if extra:
            meta.update(extra)
        Path(path).write_text(json.dumps(meta, indent=2, sort_keys=True))


def stability_bound(model: ModelSpec, h: float) -> float:
    """Documented explicit step bound ``0.2 h**2 / gamma``."""
    if model.gamma == 0:
        return math.inf
    return 0.2 * h * h / abs(model.gamma)


def integrate(model: ModelSpec, u0: GridField, t_end: float, dt: float, stride: int = 1) -> Trajectory:
    """Classic fourth-order Runge-Kutta with a fixed step."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    bound = stability_bound(model, u0.grid.h)
    if dt > bound:
        raise ValueError(f"dt={dt} exceeds the explicit stability bound {bound:g}")
    _check_grid(model, u0.grid)
    grid, h = u0.grid, u0.grid.h

    def f(x):
        return grid.restrict(rhs_full(model, grid.extend(x), h))

    steps = max(1, int(math.ceil(t_end / dt - 1e-12)))
    x = u0.values.copy()
    times, states = [0.0], [u0]
    t = 0.0
    for k in range(1, steps + 1):
        step = min(dt, t_end - t) if k == steps else dt
        # overflow is caught below with the offending step
        with np.errstate(over="ignore", invalid="ignore"):
            k1 = f(x)
            k2 = f(x + 0.5 * step * k1)
            k3 = f(x + 0.5 * step * k2)
            k4 = f(x + step * k3)
            x = x + step / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        t += step
        if not np.all(np.isfinite(x)):
            raise FloatingPointError(f"non-finite state at step {k} (t={t:g})")
        if k % stride == 0 or k == steps:
            times.append(t)
            states.append(GridField(grid, x.copy()))
    return Trajectory(times, states, model, dt)


# ---------------------------------------------------------------------------
# subgrid snapshots
# ---------------------------------------------------------------------------


@dataclass
class SubgridSnapshot:
    """Per-element subgrid fields: ``fields[i, j, k + n, l + n]`` (NaN at corners)."""

    grid: MacroGrid
    n: int
    fields: np.ndarray
    max_jump: float

    def tiles(self) -> np.ndarray:
        """Central half of every element stitched into one image (n even)."""
        n, h2 = self.n, self.n // 2
        sub = self.fields[:, :, n - h2:n + h2 + 1, n - h2:n + h2 + 1]
        # drop the duplicated right/top edge of every tile
        sub = sub[:, :, :-1, :-1]
        mx, my, a, b = sub.shape
        return sub.transpose(0, 2, 1, 3).reshape(mx * a, my * b)


def subgrid_snapshot(manifold, u: GridField, gamma: float, alpha: float,
                     gamma_radius: float = 1.0, alpha_radius: float = 30.0) -> SubgridSnapshot:
    """Evaluate the constructed subgrid field of every element at grid values ``u``."""
    if abs(gamma) > gamma_radius or abs(alpha) > alpha_radius:
        warnings.warn(
            f"gamma={gamma}, alpha={alpha} outside trust radii ({gamma_radius}, {alpha_radius}) "
            "of the truncated series",
            RuntimeWarning,
            stacklevel=2,
        )
    grid, lay = u.grid, manifold.layout
    n, S = lay.n, lay.size
    full = u.full()
    cache: dict = {}
    out = np.zeros(grid.shape + (S, S))
    al = alpha * grid.h ** 2
    for (a, b), fld in manifold.v.fields.items():
        scale = gamma ** a * al ** b
        if scale == 0.0 or not fld.mons:
            continue
        coef = np.array(fld.data, dtype=float)
        for im, m in enumerate(fld.mons):
            val = np.ones(grid.shape)
            for s in m:
                if s not in cache:
                    cache[s] = grid.restrict(shift(full, *s))
                val = val * cache[s]
            out += scale * val[:, :, None, None] * coef[None, None, :, :, im]
    out[:, :, ~lay.included] = np.nan
    return SubgridSnapshot(grid, n, out, _max_jump(out, n, grid))


def _half_value(fields, n, axis, side):
    """Field on the line ``k = side * n / 2`` (averaging nodes when n is odd)."""
    lo, hi = divmod(n, 2)
    if hi == 0:
        idx = [n + side * lo]
    else:
        idx = [n + side * lo, n + side * (lo + 1)]
    vals = np.take(fields, idx, axis=axis)
    return vals.mean(axis=axis)


def _max_jump(fields, n, grid):
    """Largest mismatch between adjacent element tiles on their shared half-lines."""
    lo = n // 2
    sl = slice(n - lo, n + lo + 1)
    worst = 0.0
    # x direction: element i at k=+n/2 vs element i+1 at k=-n/2
    right = _half_value(fields, n, 2, +1)[:, :, sl]
    left = _half_value(fields, n, 2, -1)[:, :, sl]
    top = _half_value(fields, n, 3, +1)[:, :, sl]
    bottom = _half_value(fields, n, 3, -1)[:, :, sl]
    if grid.symmetry.value == "periodic":
        worst = max(worst, np.nanmax(np.abs(right - np.roll(left, -1, axis=0))))
        worst = max(worst, np.nanmax(np.abs(top - np.roll(bottom, -1, axis=1))))
    else:
        if fields.shape[0] > 1:
            worst = max(worst, np.nanmax(np.abs(right[:-1] - left[1:])))
        if fields.shape[1] > 1:
            worst = max(worst, np.nanmax(np.abs(top[:, :-1] - bottom[:, 1:])))
    return float(worst)
