"""Macroscale grid geometry, symmetric index maps and centred difference stencils.

Stencil functions are written once against a tiny protocol (``shift`` plus
ring arithmetic) so the same code evaluates numerically on extended periodic
arrays and symbolically on :class:`~holistic2d.polynomial.Poly` grid symbols.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable

import numpy as np

from .polynomial import Poly


class Symmetry(str, enum.Enum):
    PERIODIC = "periodic"
    ODD_PERIODIC = "odd-periodic"


@dataclass(frozen=True)
class MacroGrid:
    """Uniform macroscale grid.

    For ``odd-periodic`` grids the domain is ``[0, pi] x [0, pi]`` with
    ``h = pi / mx``; only the interior points ``1 <= i <= mx - 1`` are stored
    and the field is extended as odd about ``x = 0`` and ``x = pi`` (so it is
    ``2 pi`` periodic).  Periodic grids store all ``mx x my`` points.
    """

    h: float
    mx: int
    my: int
    symmetry: Symmetry = Symmetry.PERIODIC
    x0: float = 0.0
    y0: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "symmetry", Symmetry(self.symmetry))
        if not self.h > 0:
            raise ValueError("grid spacing h must be positive")
        if self.mx < 2 or self.my < 2:
            raise ValueError("need at least 2 elements in each direction")

    @classmethod
    def odd_periodic(cls, m: int, my: int | None = None) -> "MacroGrid":
        """``m x my`` elements on ``[0, pi] x [0, pi]``."""
        my = m if my is None else my
        if m != my:
            raise ValueError("square elements need mx == my on the square domain")
        return cls(math.pi / m, m, my, Symmetry.ODD_PERIODIC)

    @classmethod
    def periodic(cls, m: int, my: int | None = None, length: float = 2 * math.pi) -> "MacroGrid":
        my = m if my is None else my
        return cls(length / m, m, my, Symmetry.PERIODIC)

    @property
    def shape(self) -> tuple[int, int]:
        if self.symmetry is Symmetry.ODD_PERIODIC:
            return (self.mx - 1, self.my - 1)
        return (self.mx, self.my)

    @property
    def size(self) -> int:
        return self.shape[0] * self.shape[1]

    @property
    def offset(self) -> int:
        """Grid index of the first stored point."""
        return 1 if self.symmetry is Symmetry.ODD_PERIODIC else 0

    @property
    def period(self) -> tuple[int, int]:
        if self.symmetry is Symmetry.ODD_PERIODIC:
            return (2 * self.mx, 2 * self.my)
        return (self.mx, self.my)

    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        """Coordinates ``(X, Y)`` of the stored points, ``indexing='ij'``."""
        i = np.arange(self.shape[0]) + self.offset
        j = np.arange(self.shape[1]) + self.offset
        return np.meshgrid(self.x0 + i * self.h, self.y0 + j * self.h, indexing="ij")

    def sample(self, f: Callable) -> "GridField":
        X, Y = self.coords()
        return GridField(self, np.asarray(f(X, Y), dtype=float))

    def zeros(self) -> "GridField":
        return GridField(self, np.zeros(self.shape))

    # index maps -----------------------------------------------------------
    def _map1(self, i: int, m: int) -> tuple[int, int]:
        """Stored index (or -1) and sign for grid index ``i`` along an axis of ``m`` elements."""
        if self.symmetry is Symmetry.PERIODIC:
            return i % m, 1
        r = i % (2 * m)
        if r == 0 or r == m:
            return -1, 0
        if r < m:
            return r - 1, 1
        return 2 * m - r - 1, -1

    def map_index(self, i: int, j: int) -> tuple[int, int, int]:
        """``(stored_i, stored_j, sign)``; sign 0 marks a symmetry line."""
        a, sa = self._map1(i, self.mx)
        b, sb = self._map1(j, self.my)
        return a, b, sa * sb

    def extension_maps(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Gather indices and signs building one full period from stored values."""
        px, py = self.period
        ia = np.array([self._map1(i, self.mx) for i in range(px)])
        jb = np.array([self._map1(j, self.my) for j in range(py)])
        rows = np.clip(ia[:, 0], 0, None)
        cols = np.clip(jb[:, 0], 0, None)
        sign = np.outer(ia[:, 1], jb[:, 1]).astype(float)
        return rows, cols, sign

    def extend(self, values: np.ndarray) -> np.ndarray:
        """One full period (grid indices ``0 .. period-1``) of the field."""
        rows, cols, sign = self._ext
        return values[np.ix_(rows, cols)] * sign

    def restrict(self, full: np.ndarray) -> np.ndarray:
        o = self.offset
        return full[o:o + self.shape[0], o:o + self.shape[1]]

    @property
    def _ext(self):
        cache = self.__dict__.get("_ext_cache")
        if cache is None:
            cache = self.extension_maps()
            object.__setattr__(self, "_ext_cache", cache)
        return cache

    def describe(self) -> dict:
        return {"h": self.h, "mx": self.mx, "my": self.my, "symmetry": self.symmetry.value,
                "origin": [self.x0, self.y0]}


@dataclass(frozen=True)
class GridField:
    """Macroscale grid values over the stored fundamental cell."""

    grid: MacroGrid
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != self.grid.shape:
            raise ValueError(f"field shape {vals.shape} does not match grid {self.grid.shape}")
        object.__setattr__(self, "values", vals)

    def full(self) -> np.ndarray:
        return self.grid.extend(self.values)

    def with_values(self, values) -> "GridField":
        return GridField(self.grid, values)

    def flat(self) -> np.ndarray:
        return self.values.ravel()

    def rms(self) -> float:
        return float(np.sqrt(np.mean(self.values ** 2)))


def field_at(field: GridField, i: int, j: int) -> float:
    """Value at any integer grid index, honouring the grid symmetry."""
    a, b, sign = field.grid.map_index(i, j)
    if sign == 0:
        return 0.0
    return sign * float(field.values[a, b])


# ---------------------------------------------------------------------------
# generic stencil algebra
# ---------------------------------------------------------------------------


def shift(f, di: int, dj: int):
    """``f`` evaluated at ``(i + di, j + dj)``."""
    if isinstance(f, Poly):
        return f.shift((di, dj))
    return np.roll(f, (-di, -dj), axis=(0, 1))


def _d2x(f):
    return shift(f, 1, 0) + shift(f, -1, 0) - 2 * f


def _d2y(f):
    return shift(f, 0, 1) + shift(f, 0, -1) - 2 * f


def _power(op, k):
    def apply(f):
        for _ in range(k):
            f = op(f)
        return f
    return apply


def _half(f):
    return f.scale(Fraction(1, 2)) if isinstance(f, Poly) else 0.5 * f


def delta2x(f):
    return _d2x(f)


def delta2y(f):
    return _d2y(f)


def delta2(f):
    """Five-point ``u[i+1,j] + u[i-1,j] + u[i,j+1] + u[i,j-1] - 4 u[i,j]``."""
    return shift(f, 1, 0) + shift(f, -1, 0) + shift(f, 0, 1) + shift(f, 0, -1) - 4 * f


def delta4(f):
    """Fourth difference exactly as printed: the sum of the 1D fourth differences (nine points)."""
    return (
        shift(f, 2, 0) + shift(f, -2, 0) + shift(f, 0, 2) + shift(f, 0, -2)
        - 4 * (shift(f, 1, 0) + shift(f, -1, 0) + shift(f, 0, 1) + shift(f, 0, -1))
        + 12 * f
    )


def delta6(f):
    return _power(_d2x, 3)(f) + _power(_d2y, 3)(f)


def delta8(f):
    return _power(_d2x, 4)(f) + _power(_d2y, 4)(f)


def delta2x_delta2y(f):
    return _d2x(_d2y(f))


def mu_delta_x(f):
    """Centred mean difference ``(u[i+1] - u[i-1]) / 2`` in x."""
    return _half(shift(f, 1, 0) - shift(f, -1, 0))


def mu_delta_y(f):
    return _half(shift(f, 0, 1) - shift(f, 0, -1))


def mu_delta3_x(f):
    """``mu delta^3`` in x: ``(u[i+2] - 2u[i+1] + 2u[i-1] - u[i-2]) / 2``."""
    return mu_delta_x(_d2x(f))


def mu_delta3_y(f):
    return mu_delta_y(_d2y(f))


def laplacian4(f):
    """Standard fourth-order 9-point-per-axis Laplacian stencil times ``h**2``."""
    def one(s):
        return (-s(2) + 16 * s(1) - 30 * f + 16 * s(-1) - s(-2))
    x = one(lambda k: shift(f, k, 0))
    y = one(lambda k: shift(f, 0, k))
    out = x + y
    return out.scale(Fraction(1, 12)) if isinstance(out, Poly) else out / 12.0


class StencilId(str, enum.Enum):
    DELTA2 = "delta2"
    DELTA4 = "delta4"
    DELTA6 = "delta6"
    DELTA8 = "delta8"
    DELTA2X = "delta2x"
    DELTA2Y = "delta2y"
    DELTA2X_DELTA2Y = "delta2x_delta2y"
    MU_DELTA_X = "mu_delta_x"
    MU_DELTA_Y = "mu_delta_y"
    MU_DELTA3_X = "mu_delta3_x"
    MU_DELTA3_Y = "mu_delta3_y"
    LAPLACIAN4 = "laplacian4"


STENCILS: dict[StencilId, Callable] = {
    StencilId.DELTA2: delta2,
    StencilId.DELTA4: delta4,
    StencilId.DELTA6: delta6,
    StencilId.DELTA8: delta8,
    StencilId.DELTA2X: delta2x,
    StencilId.DELTA2Y: delta2y,
    StencilId.DELTA2X_DELTA2Y: delta2x_delta2y,
    StencilId.MU_DELTA_X: mu_delta_x,
    StencilId.MU_DELTA_Y: mu_delta_y,
    StencilId.MU_DELTA3_X: mu_delta3_x,
    StencilId.MU_DELTA3_Y: mu_delta3_y,
    StencilId.LAPLACIAN4: laplacian4,
}


def stencil_weights(s: StencilId | str) -> dict[tuple[int, int], Fraction]:
    """Offset -> weight table of a stencil, obtained by applying it to ``u[0,0]``."""
    p = STENCILS[StencilId(s)](Poly.symbol(0, 0))
    # the stencil at the origin reads u[di, dj]; weights are keyed by that offset
    return {m[0]: c for m, c in p.terms.items()}


def apply_stencil(field: GridField, s: StencilId | str, i: int, j: int) -> float:
    """Stencil value at grid index ``(i, j)`` using the symmetric index map."""
    return sum(float(w) * field_at(field, i + di, j + dj) for (di, dj), w in stencil_weights(s).items())


def stencil_of_power(field: GridField, s: StencilId | str, i: int, j: int, power: int = 3) -> float:
    """Stencil applied to the pointwise power of the field (power first)."""
    return sum(
        float(w) * field_at(field, i + di, j + dj) ** power
        for (di, dj), w in stencil_weights(s).items()
    )


def stencil_of_cube(field: GridField, s: StencilId | str, i: int, j: int) -> float:
    return stencil_of_power(field, s, i, j, 3)


def apply_stencil_field(field: GridField, s: StencilId | str) -> GridField:
    """Vectorised stencil over all stored points."""
    full = field.full()
    return field.with_values(field.grid.restrict(STENCILS[StencilId(s)](full)))
