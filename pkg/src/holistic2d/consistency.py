"""Measured consistency of the macroscale models with the Ginzburg-Landau PDE.

Smooth doubly periodic trigonometric fields are sampled on periodic grids
of decreasing spacing; the difference between a model's right-hand side and
the exact PDE right-hand side gives the truncation error, whose decay rate
and leading coefficient are fitted.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .grid import MacroGrid
from .models import ModelKind, ModelSpec, rhs_full

logger = logging.getLogger(__name__)

EPS = np.finfo(float).eps


@dataclass(frozen=True)
class ManufacturedField:
    """``sum_k a_k * trig(kx x) * trig(ky y)`` with ``trig`` either sin or cos.

    ``modes`` holds tuples ``(amplitude, kx, ky, phase_x, phase_y)`` where a
    phase of 0 selects sine and ``pi/2`` cosine; derivatives of any order are
    exact shifts of the phase.
    """

    modes: tuple

    @classmethod
    def sin_sin(cls, kx: int = 1, ky: int = 1, amplitude: float = 1.0) -> "ManufacturedField":
        return cls(((amplitude, kx, ky, 0.0, 0.0),))

    @classmethod
    def mixed(cls) -> "ManufacturedField":
        """A field without the diagonal symmetry of ``sin x sin y``."""
        return cls(((1.0, 1, 1, 0.0, 0.0), (0.5, 2, 1, math.pi / 2, 0.0), (0.25, 1, 2, 0.3, 1.1)))

    def derivative(self, X, Y, px: int = 0, py: int = 0):
        out = np.zeros_like(np.asarray(X, dtype=float))
        for a, kx, ky, fx, fy in self.modes:
            out = out + a * kx ** px * ky ** py * np.sin(kx * X + fx + px * math.pi / 2) * np.sin(
                ky * Y + fy + py * math.pi / 2
            )
        return out

    def __call__(self, X, Y):
        return self.derivative(X, Y)

    def laplacian(self, X, Y):
        return self.derivative(X, Y, 2, 0) + self.derivative(X, Y, 0, 2)

    def grad_sq(self, X, Y):
        return self.derivative(X, Y, 1, 0) ** 2 + self.derivative(X, Y, 0, 1) ** 2

    def describe(self) -> dict:
        return {"modes": [list(m) for m in self.modes]}


def _grid(h: float) -> MacroGrid:
    m = int(round(2 * math.pi / h))
    if abs(m * h - 2 * math.pi) > 1e-9 * m:
        raise ValueError("h must divide 2*pi")
    return MacroGrid.periodic(m)


def spacings(m_list) -> list[float]:
    return [2 * math.pi / m for m in m_list]


def error_field(model: ModelSpec, f: ManufacturedField, h: float, part: str = "full") -> tuple:
    """Pointwise ``rhs(model) - PDE`` on the grid of spacing ``h``, with the grid coordinates.

    ``part="nonlinear"`` keeps only the alpha-dependent error by subtracting
    the alpha = 0 error.
    """
    if model.gamma != 1.0:
        raise ValueError("consistency is measured at full coupling gamma = 1")
    grid = _grid(h)
    X, Y = grid.coords()
    u = f(X, Y)
    full = grid.extend(u)
    model_rhs = grid.restrict(rhs_full(model, full, grid.h))
    exact = f.laplacian(X, Y) + model.alpha * (u - u ** 3)
    err = model_rhs - exact
    if part == "nonlinear":
        lin = replace(model, alpha=0.0)
        err = err - (grid.restrict(rhs_full(lin, full, grid.h)) - f.laplacian(X, Y))
    elif part != "full":
        raise ValueError(f"unknown part {part!r}")
    return err, X, Y, u


def truncation_error(model: ModelSpec, f: ManufacturedField, h: float, part: str = "full") -> float:
    """Max-norm difference between the model rhs and the exact PDE rhs."""
    return float(np.max(np.abs(error_field(model, f, h, part)[0])))


#: leading error term per model kind as (power of h, coefficient, term evaluator)
def _axis_sum(order):
    return lambda f, X, Y, u: f.derivative(X, Y, order, 0) + f.derivative(X, Y, 0, order)


LEADING_TERMS = {
    ModelKind.CENTERED2: (2, 1.0 / 12, _axis_sum(4), "h^2 (d_x^4 + d_y^4) u"),
    ModelKind.CENTERED4: (4, -1.0 / 90, _axis_sum(6), "h^4 (d_x^6 + d_y^6) u"),
    ModelKind.HOLISTIC_G3A3: (4, -1.0 / 90, _axis_sum(6), "h^4 (d_x^6 + d_y^6) u"),
    ModelKind.HOLISTIC_G4A4: (6, 1.0 / 560, _axis_sum(8), "h^6 (d_x^8 + d_y^8) u"),
}
NONLINEAR_TERM = (2, 0.5, lambda f, X, Y, u: u * f.grad_sq(X, Y), "alpha h^2 u |grad u|^2")


@dataclass
class ConvergenceResult:
    model: str
    h: list
    errors: list
    order: float
    fit_range: list
    coefficient: float | None
    expected_coefficient: float | None
    term: str | None
    excluded: list = field(default_factory=list)
    part: str = "full"

    @property
    def coefficient_ratio(self) -> float | None:
        if self.coefficient is None or not self.expected_coefficient:
            return None
        return self.coefficient / self.expected_coefficient

    def as_dict(self) -> dict:
        return {
            "model": self.model,
            "part": self.part,
            "order": self.order,
            "fit_range": self.fit_range,
            "coefficient": self.coefficient,
            "expected_coefficient": self.expected_coefficient,
            "coefficient_ratio": self.coefficient_ratio,
            "term": self.term,
            "excluded_h": self.excluded,
            "points": [{"h": h, "error": e} for h, e in zip(self.h, self.errors)],
        }

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["h", "error", "in_fit"])
            for h, e in zip(self.h, self.errors):
                w.writerow([repr(h), repr(e), h not in self.excluded])

    def to_json(self, path, extra: dict | None = None) -> None:
        d = self.as_dict()
        if extra:
            d.update(extra)
        with open(path, "w") as fh:
            json.dump(d, fh, indent=2)


def _coefficient(model, f, hs, power, term_fn, part):
    """Leading coefficient, extrapolated in h**2 from pointwise projections."""
    cs = []
    for h in hs:
        err, X, Y, u = error_field(model, f, h, part)
        D = term_fn(f, X, Y, u)
        if part == "nonlinear":
            D = model.alpha * D
        cs.append(float(np.sum(err * D) / np.sum(D * D)) / h ** power)
    if len(cs) == 1:
        return cs[0]
    A = np.vstack([np.ones(len(hs)), np.asarray(hs) ** 2]).T
    sol, *_ = np.linalg.lstsq(A, np.asarray(cs), rcond=None)
    return float(sol[0])


def convergence_order(model: ModelSpec, f: ManufacturedField, h_list, part: str = "full",
                      floor_factor: float = 1e3) -> ConvergenceResult:
    """Least-squares slope of ``log(error)`` against ``log(h)``.

    Spacings whose error sits below ``floor_factor * eps * scale`` (the
    round-off level of the ``1/h**2`` stencils) are excluded from the fit.
    """
    hs = sorted(float(h) for h in h_list)[::-1]
    if len(hs) < 4:
        raise ValueError("need at least 4 spacings")
    ratios = [a / b for a, b in zip(hs, hs[1:])]
    if max(ratios) / min(ratios) > 1 + 1e-6:
        raise ValueError("spacings must form a geometric sequence")
    errs = [truncation_error(model, f, h, part) for h in hs]
    amp = sum(abs(m[0]) for m in f.modes)
    keep, excluded = [], []
    for h, e in zip(hs, errs):
        scale = amp / h ** 2 + abs(model.alpha) * (amp + amp ** 3)
        if e < floor_factor * EPS * scale:
            excluded.append(h)
        else:
            keep.append((h, e))
    # drop non-monotone tails as well
    while len(keep) > 2 and keep[-1][1] >= keep[-2][1]:
        excluded.append(keep.pop()[0])
    if excluded:
        warnings.warn(f"round-off floor: excluded spacings {excluded} from the order fit", RuntimeWarning,
                      stacklevel=2)
    if len(keep) < 2:
        raise ValueError("too few spacings above the round-off floor")
    lh = np.log([k[0] for k in keep])
    le = np.log([k[1] for k in keep])
    slope = float(np.polyfit(lh, le, 1)[0])
    if part == "nonlinear":
        power, expected, term_fn, label = NONLINEAR_TERM
    else:
        power, expected, term_fn, label = LEADING_TERMS.get(model.kind, (None, None, None, None))
    coeff = None
    if term_fn is not None:
        coeff = _coefficient(model, f, [k[0] for k in keep[-3:]], power, term_fn, part)
    return ConvergenceResult(model.kind.value, hs, errs, slope, [keep[0][0], keep[-1][0]], coeff, expected,
                             label, excluded, part)
