"""Numerical construction of the subgrid slow manifold of the 2D Ginzburg-Landau equation.

One generic element is discretised with ``2n`` subintervals per side: nodes
``(k, l)`` with ``|k|, |l| <= n`` except the four extreme corners.  The subgrid
field at every node is a truncated series in ``(gamma, alpha)`` whose
coefficients are polynomials in the neighbouring macroscale grid values
``u[di, dj]``.  Neighbouring elements are the generic element with every
symbol translated, so the evolution of ``u[s]`` is ``g`` shifted by ``s``.

Everything is computed with the grid spacing scaled to ``h = 1``.  The stored
evolution ``G`` is ``h**2 * g`` and the stored nonlinearity is ``alpha * h**2``,
so that in physical units ``g(gamma, alpha) = G(gamma, alpha * h**2) / h**2``.

Two arithmetic modes exist: ``"rational"`` (exact, via FLINT ``fmpq``) and
``"float"`` (float64, with a ``1e-12`` zero threshold).
"""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
import scipy.linalg
import scipy.sparse
from flint import fmpq, fmpq_mat

from .polynomial import Monomial, Poly, Series2, Symbol, mono_mul, mono_shift

logger = logging.getLogger(__name__)

FLOAT_ZERO = 1e-12
MODES = ("rational", "float")


class ConstructionError(RuntimeError):
    """Raised when the residual-driven iteration fails."""


def default_mode() -> str:
    mode = os.environ.get("HOLISTIC_MODE", "rational").strip().lower()
    if mode not in MODES:
        raise ValueError(f"HOLISTIC_MODE must be one of {MODES}, got {mode!r}")
    return mode


# ---------------------------------------------------------------------------
# arithmetic backends
# ---------------------------------------------------------------------------


class _Rational:
    name = "rational"
    dtype = object
    exact = True

    @staticmethod
    def coerce(c):
        if isinstance(c, fmpq):
            return c
        if isinstance(c, Fraction):
            return fmpq(c.numerator, c.denominator)
        if isinstance(c, int):
            return fmpq(c)
        raise TypeError(f"cannot use {type(c).__name__} in rational mode")

    @staticmethod
    def public(x) -> Fraction:
        if isinstance(x, fmpq):
            return Fraction(int(x.p), int(x.q))
        return Fraction(x)

    @staticmethod
    def zeros(shape):
        out = np.empty(shape, dtype=object)
        out.fill(fmpq(0))
        return out

    @staticmethod
    def nonzero_columns(data2d):
        return np.array([any(x != 0 for x in col) for col in data2d.T], dtype=bool)

    @staticmethod
    def clean(data):
        return data

    @staticmethod
    def max_abs(data) -> float:
        if data.size == 0:
            return 0.0
        return max(abs(float(x)) for x in data.ravel())


class _Float:
    name = "float"
    dtype = float
    exact = False

    @staticmethod
    def coerce(c):
        return float(c)

    @staticmethod
    def public(x) -> float:
        return float(x)

    @staticmethod
    def zeros(shape):
        return np.zeros(shape)

    @staticmethod
    def nonzero_columns(data2d):
        return np.any(np.abs(data2d) > FLOAT_ZERO, axis=0)

    @staticmethod
    def clean(data):
        data[np.abs(data) <= FLOAT_ZERO] = 0.0
        return data

    @staticmethod
    def max_abs(data) -> float:
        return float(np.max(np.abs(data))) if data.size else 0.0


def backend(mode: str):
    if mode == "rational":
        return _Rational
    if mode == "float":
        return _Float
    raise ValueError(f"unknown arithmetic mode {mode!r}")


# ---------------------------------------------------------------------------
# subgrid layout
# ---------------------------------------------------------------------------


class SubgridLayout:
    """Node bookkeeping for one element with ``2n`` subintervals per side."""

    def __init__(self, n: int):
        if n < 2:
            raise ValueError("need n >= 2 subintervals per half element")
        self.n = n
        self.size = 2 * n + 1
        k = np.arange(-n, n + 1)
        K, L = np.meshgrid(k, k, indexing="ij")
        self.k, self.l = K, L
        corner = (np.abs(K) == n) & (np.abs(L) == n)
        self.included = ~corner
        self.interior = (np.abs(K) < n) & (np.abs(L) < n)
        self.edge_x = (np.abs(K) == n) & (np.abs(L) < n)
        self.edge_y = (np.abs(L) == n) & (np.abs(K) < n)
        self.edges = self.edge_x | self.edge_y
        self.nodes: list[tuple[int, int]] = [
            (int(a), int(b)) for a, b in zip(K[self.included], L[self.included])
        ]
        self.index = {p: i for i, p in enumerate(self.nodes)}

    @property
    def node_count(self) -> int:
        return len(self.nodes)

    @property
    def system_size(self) -> int:
        return self.node_count + 1

    def pos(self, k: int, l: int) -> tuple[int, int]:
        return k + self.n, l + self.n

    def pyramid(self) -> np.ndarray:
        """Adjoint null vector ``(1 - |k|/n)(1 - |l|/n)``, zero off the interior."""
        n = self.n
        w = (1 - np.abs(self.k) / n) * (1 - np.abs(self.l) / n)
        return np.where(self.interior, w, 0.0)


# ---------------------------------------------------------------------------
# nodal polynomial fields
# ---------------------------------------------------------------------------


class NodalField:
    """One ``(gamma, alpha)`` coefficient of the subgrid field.

    ``data[k + n, l + n, m]`` is the coefficient of monomial ``mons[m]`` at
    node ``(k, l)``; corner entries are unused.
    """

    __slots__ = ("layout", "ar", "mons", "data", "_index")

    def __init__(self, layout: SubgridLayout, ar, mons, data):
        self.layout = layout
        self.ar = ar
        self.mons = list(mons)
        self.data = data
        self._index = None

    @classmethod
    def empty(cls, layout, ar):
        return cls(layout, ar, [], ar.zeros((layout.size, layout.size, 0)))

    @classmethod
    def uniform(cls, layout, ar, poly: Poly):
        mons = list(poly)
        data = ar.zeros((layout.size, layout.size, len(mons)))
        for i, m in enumerate(mons):
            data[:, :, i] = ar.coerce(poly[m])
        return cls(layout, ar, mons, data)

    @property
    def index(self):
        if self._index is None:
            self._index = {m: i for i, m in enumerate(self.mons)}
        return self._index

    def __bool__(self):
        return bool(self.mons)

    def node_poly(self, k: int, l: int) -> Poly:
        i, j = self.layout.pos(k, l)
        vals = self.data[i, j]
        return Poly({m: self.ar.public(c) for m, c in zip(self.mons, vals) if c != 0}, _trusted=True)

    def prune(self) -> "NodalField":
        if not self.mons:
            return self
        self.ar.clean(self.data)
        flat = self.data[self.layout.included]
        keep = self.ar.nonzero_columns(flat)
        if keep.all():
            return self
        mons = [m for m, k in zip(self.mons, keep) if k]
        return NodalField(self.layout, self.ar, mons, self.data[:, :, keep].copy())

    def masked(self, mask: np.ndarray) -> "NodalField":
        data = self.data.copy()
        data[~mask] = 0
        return NodalField(self.layout, self.ar, self.mons, data)

    def max_abs(self, mask: np.ndarray | None = None) -> float:
        mask = self.layout.included if mask is None else mask
        return self.ar.max_abs(self.data[mask])

    # arithmetic -----------------------------------------------------------
    def _aligned(self, mons):
        """Data re-indexed to the monomial list ``mons`` (a superset)."""
        out = self.ar.zeros(self.data.shape[:2] + (len(mons),))
        pos = {m: i for i, m in enumerate(mons)}
        if self.mons:
            out[:, :, [pos[m] for m in self.mons]] = self.data
        return out

    def __add__(self, other: "NodalField") -> "NodalField":
        if not other.mons:
            return self
        if not self.mons:
            return other
        mons = list(self.mons) + [m for m in other.mons if m not in self.index]
        data = self._aligned(mons)
        pos = {m: i for i, m in enumerate(mons)}
        data[:, :, [pos[m] for m in other.mons]] += other.data
        return NodalField(self.layout, self.ar, mons, data)

    def __neg__(self):
        return NodalField(self.layout, self.ar, self.mons, -self.data)

    def __sub__(self, other):
        return self + (-other)

    def scale(self, c) -> "NodalField":
        return NodalField(self.layout, self.ar, self.mons, self.data * self.ar.coerce(c))

    def __mul__(self, other: "NodalField") -> "NodalField":
        """Pointwise (node-by-node) product."""
        if not self.mons or not other.mons:
            return NodalField.empty(self.layout, self.ar)
        a, b = (self, other) if len(self.mons) <= len(other.mons) else (other, self)
        out_pos: dict[Monomial, int] = {}
        plan = []
        for ia, ma in enumerate(a.mons):
            idx = []
            for mb in b.mons:
                m = mono_mul(ma, mb)
                if m not in out_pos:
                    out_pos[m] = len(out_pos)
                idx.append(out_pos[m])
            plan.append((ia, np.array(idx)))
        data = self.ar.zeros(self.data.shape[:2] + (len(out_pos),))
        for ia, idx in plan:
            data[:, :, idx] += a.data[:, :, ia:ia + 1] * b.data
        return NodalField(self.layout, self.ar, list(out_pos), data).prune()

    def laplacian(self) -> "NodalField":
        """``n**2`` times the 5-point subgrid Laplacian, on interior nodes only."""
        d = self.data
        out = self.ar.zeros(d.shape)
        if self.mons:
            out[1:-1, 1:-1] = d[2:, 1:-1] + d[:-2, 1:-1] + d[1:-1, 2:] + d[1:-1, :-2] - 4 * d[1:-1, 1:-1]
            out = out * self.ar.coerce(self.layout.n ** 2)
        return NodalField(self.layout, self.ar, self.mons, out)

    def linear_map(self, triplets) -> "NodalField":
        """Apply ``out[:, :, o] += w * data[:, :, m]`` for every ``(m, o_monomial, w)``."""
        acc: dict[tuple[int, Monomial], object] = {}
        for m, om, w in triplets:
            key = (m, om)
            acc[key] = acc.get(key, 0) + w
        out_pos: dict[Monomial, int] = {}
        rows, cols, vals = [], [], []
        for (m, om), w in acc.items():
            if w == 0:
                continue
            if om not in out_pos:
                out_pos[om] = len(out_pos)
            rows.append(m)
            cols.append(out_pos[om])
            vals.append(w)
        if not out_pos:
            return NodalField.empty(self.layout, self.ar)
        shape2 = self.data.shape[:2]
        if self.ar.exact:
            data = self.ar.zeros(shape2 + (len(out_pos),))
            by_src: dict[int, tuple[list, list]] = {}
            for r, c, w in zip(rows, cols, vals):
                by_src.setdefault(r, ([], []))
                by_src[r][0].append(c)
                by_src[r][1].append(self.ar.coerce(w))
            for r, (cs, ws) in by_src.items():
                w_arr = np.empty(len(ws), dtype=object)
                w_arr[:] = ws
                data[:, :, cs] += self.data[:, :, r:r + 1] * w_arr
        else:
            T = scipy.sparse.csr_matrix(
                (np.asarray(vals, dtype=float), (rows, cols)), shape=(len(self.mons), len(out_pos))
            )
            flat = self.data.reshape(-1, len(self.mons))
            data = np.asarray((T.T @ flat.T).T).reshape(shape2 + (len(out_pos),))
        return NodalField(self.layout, self.ar, list(out_pos), data).prune()

    def derive(self, g_terms_by_shift) -> "NodalField":
        """Chain-rule time derivative: ``sum_s d(field)/d u[s] * g[s]``.

        ``g_terms_by_shift(s)`` returns the terms ``[(monomial, coeff)]`` of the
        evolution of ``u[s]`` (the generic evolution translated by ``s``).
        """
        trip = []
        for im, m in enumerate(self.mons):
            seen = set()
            for pos_s, s in enumerate(m):
                if s in seen:
                    continue
                seen.add(s)
                cnt = m.count(s)
                rest = m[:pos_s] + m[pos_s + 1:]
                for tm, tc in g_terms_by_shift(s):
                    trip.append((im, mono_mul(rest, tm), cnt * tc))
        return self.linear_map(trip)

    def edge_transfer(self, shifted: bool) -> "NodalField":
        """Field on the edges holding the element's centre-line values.

        Edge node ``(+-n, l)`` receives the value at ``(0, l)``; edge node
        ``(k, +-n)`` receives the value at ``(k, 0)``.  With ``shifted`` the
        value is that of the neighbouring element, i.e. with every symbol
        translated towards the edge by one macroscale step.
        """
        lay, n = self.layout, self.layout.n
        if not self.mons:
            return NodalField.empty(lay, self.ar)
        # (destination slice, source slice, translation)
        moves = [
            ((2 * n, slice(1, -1)), (n, slice(1, -1)), (1, 0)),
            ((0, slice(1, -1)), (n, slice(1, -1)), (-1, 0)),
            ((slice(1, -1), 2 * n), (slice(1, -1), n), (0, 1)),
            ((slice(1, -1), 0), (slice(1, -1), n), (0, -1)),
        ]
        out_pos: dict[Monomial, int] = {}
        placements = []
        for dst, src, off in moves:
            idx = []
            for m in self.mons:
                mm = mono_shift(m, off) if shifted else m
                if mm not in out_pos:
                    out_pos[mm] = len(out_pos)
                idx.append(out_pos[mm])
            placements.append((dst, src, np.array(idx)))
        data = self.ar.zeros(self.data.shape[:2] + (len(out_pos),))
        for dst, src, idx in placements:
            block = data[dst]
            block[:, idx] = self.data[src]
            data[dst] = block
        return NodalField(lay, self.ar, list(out_pos), data)


class NodalSeries:
    """Truncated ``(gamma, alpha)`` series of nodal polynomial fields."""

    def __init__(self, truncation: Series2, fields: dict | None = None):
        self.truncation = truncation
        self.fields: dict[tuple[int, int], NodalField] = dict(fields or {})

    def __getitem__(self, order) -> NodalField | None:
        return self.fields.get(tuple(order))

    def orders(self):
        return sorted(self.fields, key=lambda o: (o[0] + o[1], o))

    def node(self, k: int, l: int) -> Series2:
        """Series2 of the field at subgrid node ``(k, l)``."""
        return self.truncation.like(
            {o: f.node_poly(k, l) for o, f in self.fields.items() if self.truncation.keeps(*o)}
        )

    def max_abs(self, mask=None) -> float:
        return max((f.max_abs(mask) for f in self.fields.values()), default=0.0)


# ---------------------------------------------------------------------------
# the correction system
# ---------------------------------------------------------------------------


class CorrectionSystem:
    """Constant-coefficient linear system for the corrections ``v'`` and ``G' = h**2 g'``.

    Rows (in node order, then one extra): interior nodes
    ``n**2 * lap(v') - G' = r``; x-edge nodes ``v'[+-n, l] - v'[0, l] = r``;
    y-edge nodes ``v'[k, +-n] - v'[k, 0] = r``; the last row ``v'[0, 0] = r``.
    Unknowns are ``v'`` at every included node followed by ``G'``.

    The matrix is factorised once; :attr:`factorizations` counts it.
    """

    def __init__(self, n: int, mode: str = "rational"):
        self.layout = lay = SubgridLayout(n)
        self.mode = mode
        self.ar = backend(mode)
        N = lay.system_size
        A = np.zeros((N, N), dtype=np.int64)
        idx, nn = lay.index, n * n
        row_kind = []
        for (k, l), r in idx.items():
            if abs(k) < n and abs(l) < n:
                for dk, dl in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                    A[r, idx[(k + dk, l + dl)]] += nn
                A[r, r] -= 4 * nn
                A[r, N - 1] = -1
                row_kind.append("pde")
            elif abs(k) == n:
                A[r, r] = 1
                A[r, idx[(0, l)]] -= 1
                row_kind.append("ibc_x")
            else:
                A[r, r] = 1
                A[r, idx[(k, 0)]] -= 1
                row_kind.append("ibc_y")
        A[N - 1, idx[(0, 0)]] = 1
        row_kind.append("amplitude")
        self.matrix = A
        self.row_kind = row_kind
        self.factorizations = 0
        self._factor()

    def _factor(self):
        A = self.matrix
        N = A.shape[0]
        if self.ar.exact:
            M = fmpq_mat(N, N, [int(x) for x in A.ravel()])
            try:
                self._inverse = M.inv()
            except ZeroDivisionError as exc:  # pragma: no cover - signals an indexing bug
                raise ConstructionError("correction matrix is singular") from exc
        else:
            lu, piv = scipy.linalg.lu_factor(A.astype(float), check_finite=True)
            pivots = np.abs(np.diag(lu))
            if pivots.min() < 1e-10 * pivots.max():
                raise ConstructionError("correction matrix is numerically singular")
            self._lu = (lu, piv)
        self.factorizations += 1

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Solve for every column of ``rhs`` (shape ``(size, M)``)."""
        N = self.size
        rhs = np.asarray(rhs, dtype=self.ar.dtype).reshape(N, -1)
        if rhs.shape[1] == 0:
            return rhs.copy()
        if self.ar.exact:
            B = fmpq_mat(N, rhs.shape[1], [self.ar.coerce(x) if not isinstance(x, int) else x for x in rhs.ravel()])
            X = self._inverse * B
            out = np.empty(N * rhs.shape[1], dtype=object)
            out[:] = X.entries()
            return out.reshape(N, rhs.shape[1])
        return scipy.linalg.lu_solve(self._lu, rhs)

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self.matrix.astype(self.ar.dtype) @ x

    def solve_fields(self, res: NodalField) -> tuple[NodalField, Poly]:
        """Corrections that cancel the residual field ``res`` (right-hand side ``-res``)."""
        lay, ar = self.layout, self.ar
        if not res.mons:
            return NodalField.empty(lay, ar), Poly.zero()
        M = len(res.mons)
        rhs = ar.zeros((self.size, M))
        rhs[:-1] = -res.data[lay.included]
        X = self.solve(rhs)
        X = ar.clean(X) if not ar.exact else X
        data = ar.zeros((lay.size, lay.size, M))
        data[lay.included] = X[:-1]
        G = Poly({m: ar.public(c) for m, c in zip(res.mons, X[-1]) if c != 0}, _trusted=True)
        return NodalField(lay, ar, res.mons, data).prune(), G


_SYSTEM_CACHE: dict[tuple[int, str], CorrectionSystem] = {}


def build_correction_system(n: int, mode: str | None = None, *, cache: bool = True) -> CorrectionSystem:
    """Assemble and factorise the correction system for ``n`` (reused across calls)."""
    mode = mode or default_mode()
    key = (n, mode)
    if cache and key in _SYSTEM_CACHE:
        return _SYSTEM_CACHE[key]
    system = CorrectionSystem(n, mode)
    if cache:
        _SYSTEM_CACHE[key] = system
    return system


# ---------------------------------------------------------------------------
# residuals
# ---------------------------------------------------------------------------


class _Work:
    """Residual evaluation against a (partial) manifold, with product caches."""

    def __init__(self, layout, ar, v: dict, g: dict):
        self.layout, self.ar = layout, ar
        self.v = v
        self.g = g
        self._sq: dict = {}
        self._cube: dict = {}
        self._gshift: dict = {}

    def vf(self, o) -> NodalField:
        return self.v.get(o) or NodalField.empty(self.layout, self.ar)

    def _pairs(self, o, src_a, src_b):
        a, b = o
        out = NodalField.empty(self.layout, self.ar)
        for a1 in range(a + 1):
            for b1 in range(b + 1):
                f1 = src_a((a1, b1))
                if not f1:
                    continue
                f2 = src_b((a - a1, b - b1))
                if f2:
                    out = out + f1 * f2
        return out

    def square(self, o):
        if o not in self._sq:
            self._sq[o] = self._pairs(o, self.vf, self.vf).prune()
        return self._sq[o]

    def cube(self, o):
        if o not in self._cube:
            self._cube[o] = self._pairs(o, self.square, self.vf).prune()
        return self._cube[o]

    def g_terms(self, o, s):
        key = (o, s)
        if key not in self._gshift:
            p = self.g.get(o)
            terms = [] if p is None else [(m, c) for m, c in p.shift(s).terms.items()]
            self._gshift[key] = terms
        return self._gshift[key]

    def pde(self, o) -> NodalField:
        """Interior residual ``n^2 lap v + alpha (v - v^3) - dv/dt`` at order ``o``."""
        a, b = o
        res = self.vf(o).laplacian()
        if b >= 1:
            lo = (a, b - 1)
            res = res + self.vf(lo) - self.cube(lo)
        for a2 in range(a + 1):
            for b2 in range(b + 1):
                o2 = (a2, b2)
                if o2 == (0, 0) or o2 not in self.g:
                    continue
                f1 = self.vf((a - a2, b - b2))
                if f1:
                    res = res - f1.derive(lambda s, o2=o2: self.g_terms(o2, s))
        return res.masked(self.layout.interior).prune()

    def ibc(self, o) -> NodalField:
        """Edge residual ``v_edge - gamma v_neighbour - (1 - gamma) v_centre`` at order ``o``."""
        a, b = o
        f = self.vf(o)
        res = f.masked(self.layout.edges) - f.edge_transfer(False)
        if a >= 1:
            lo = self.vf((a - 1, b))
            res = res - lo.edge_transfer(True) + lo.edge_transfer(False)
        return res.prune()


# ---------------------------------------------------------------------------
# manifold
# ---------------------------------------------------------------------------


@dataclass
class SubgridManifold:
    """Converged subgrid field ``v`` and scaled evolution ``G = h**2 g``.

    ``G`` is stored with ``h = 1``; use :meth:`evolution` for physical units.
    """

    n: int
    truncation: Series2
    mode: str
    v: NodalSeries
    g: Series2
    iterations: int = 0
    max_residual: float = 0.0
    layout: SubgridLayout = field(repr=False, default=None)

    @property
    def orders(self):
        return self.truncation.orders

    @property
    def total(self):
        return self.truncation.total

    def node_series(self, k: int, l: int) -> Series2:
        return self.v.node(k, l)

    def evolution_coefficient(self, a: int, b: int) -> Poly:
        return self.g[(a, b)]

    def evaluate_g(self, gamma: float, alpha: float, h: float, value) -> float:
        """``du/dt`` of the generic element in physical units."""
        return self.g.evaluate(gamma, alpha * h * h, value) / (h * h)

    def work(self) -> _Work:
        return _Work(self.layout, backend(self.mode), self.v.fields, dict(self.g.items()))


def _order_key(o):
    return (o[0] + o[1], o)


def construct(
    n: int,
    p_gamma: int,
    p_alpha: int,
    *,
    total: int | None = None,
    mode: str | None = None,
    max_iterations: int | None = None,
    verify: bool = True,
    system: CorrectionSystem | None = None,
    allow_partial: bool = False,
) -> SubgridManifold:
    """Construct the slow manifold to residuals outside the given truncation.

    Starting from ``v = u[0,0]``, ``g = 0``, each iteration solves the
    correction system for every monomial of the residuals at the lowest
    unconverged total order and updates ``v`` and ``G``.  With
    ``allow_partial`` the iteration cap returns the unconverged manifold
    instead of raising (useful for inspecting intermediate iterates).
    """
    if n < 2:
        raise ValueError("n must be >= 2")
    if p_gamma < 1 or p_alpha < 1:
        raise ValueError("truncation orders must be >= 1")
    mode = mode or default_mode()
    ar = backend(mode)
    system = system or build_correction_system(n, mode)
    if system.layout.n != n or system.mode != mode:
        raise ValueError("correction system does not match n/mode")
    lay = system.layout
    trunc = Series2(p_gamma, p_alpha, total=total)
    orders = [o for o in trunc.kept_orders() if o != (0, 0)]
    cap = max_iterations if max_iterations is not None else p_gamma + p_alpha + 2

    v: dict = {(0, 0): NodalField.uniform(lay, ar, Poly.symbol(0, 0))}
    g: dict = {}
    tol = 0.0 if ar.exact else FLOAT_ZERO * 100
    converged: set = set()
    iterations = 0
    while True:
        pending = [o for o in orders if o not in converged]
        if not pending:
            break
        if iterations >= cap:
            if allow_partial:
                verify = False
                break
            raise ConstructionError(
                f"no convergence after {iterations} iterations; pending orders {pending}"
            )
        level = min(a + b for a, b in pending)
        batch = [o for o in pending if o[0] + o[1] == level]
        work = _Work(lay, ar, v, g)
        for o in batch:
            res = work.pde(o) + work.ibc(o)
            if res.mons and res.max_abs() > tol:
                dv, dG = system.solve_fields(res)
                if dv:
                    v[o] = (v[o] + dv).prune() if o in v else dv
                if dG:
                    g[o] = g.get(o, Poly.zero()) + dG
                    if not g[o]:
                        del g[o]
            converged.add(o)
            _check_degree(o, v.get(o), g.get(o))
        iterations += 1
        logger.debug("n=%d iteration %d solved orders %s", n, iterations, batch)

    manifold = SubgridManifold(
        n=n,
        truncation=trunc,
        mode=mode,
        v=NodalSeries(trunc, v),
        g=trunc.like({o: p for o, p in g.items()}),
        iterations=iterations,
        layout=lay,
    )
    if verify:
        worst = max_residual(manifold)
        manifold.max_residual = worst
        # float residuals carry the n**2 scaling of the subgrid Laplacian
        if worst > (0.0 if ar.exact else 1e-10 * n * n):
            raise ConstructionError(f"residuals did not vanish: largest surviving residual {worst:g}")
    return manifold


def _check_degree(o, field_, gpoly):
    # each alpha order raises the polynomial degree by at most two
    bound = 2 * o[1] + 1
    deg = max((len(m) for m in field_.mons), default=-1) if field_ else -1
    if gpoly is not None:
        deg = max(deg, gpoly.degree())
    if deg > bound:
        raise ConstructionError(f"degree {deg} exceeds bound {bound} at order {o}")


def residual_pde(manifold: SubgridManifold, orders=None) -> NodalSeries:
    """PDE residuals at interior nodes for every kept order (or the given orders)."""
    work = manifold.work()
    orders = orders or manifold.truncation.kept_orders()
    return NodalSeries(manifold.truncation, {o: work.pde(o) for o in orders})


def residual_ibc(manifold: SubgridManifold, orders=None) -> NodalSeries:
    """Coupling-condition residuals at edge nodes for every kept order."""
    work = manifold.work()
    orders = orders or manifold.truncation.kept_orders()
    return NodalSeries(manifold.truncation, {o: work.ibc(o) for o in orders})


def max_residual(manifold: SubgridManifold) -> float:
    work = manifold.work()
    worst = 0.0
    for o in manifold.truncation.kept_orders():
        worst = max(worst, work.pde(o).max_abs(), work.ibc(o).max_abs())
    return worst


def next_orders(truncation: Series2) -> list[tuple[int, int]]:
    """Orders just outside the truncation whose residuals are fully determined."""
    kept = set(truncation.kept_orders())
    out = []
    for a in range(truncation.p_gamma + 1):
        for b in range(truncation.p_alpha + 1):
            if (a, b) in kept:
                continue
            if (a == 0 or (a - 1, b) in kept) and (b == 0 or (a, b - 1) in kept):
                out.append((a, b))
    return sorted(out, key=_order_key)


def solvability_correction(manifold: SubgridManifold, orders=None) -> Series2:
    """Next-order evolution from the residuals via the adjoint pyramid.

    The pyramid ``w = (1 - |k|/n)(1 - |l|/n)`` is the left null vector of the
    subgrid Laplacian with the ``gamma = 0`` coupling conditions, so projecting
    the residual equations onto it eliminates the unknown subgrid correction::

        G' = (sum_interior w R_pde - n sum_edges a R_ibc) / sum_interior w

    where ``a`` is the 1D hat weight along the edge and ``sum w = n**2``.
    """
    trunc = manifold.truncation
    orders = orders or next_orders(trunc)
    ar = backend(manifold.mode)
    lay = manifold.layout
    n = lay.n
    work = manifold.work()
    one_d = {k: Fraction(n - abs(k), n) for k in range(-n, n + 1)}
    # weights per node: pyramid inside, -n * hat on the edges
    weights = ar.zeros((lay.size, lay.size))
    for k in range(-n, n + 1):
        for l in range(-n, n + 1):
            if abs(k) < n and abs(l) < n:
                w = one_d[k] * one_d[l]
            elif abs(k) == n and abs(l) < n:
                w = -n * one_d[l]
            elif abs(l) == n and abs(k) < n:
                w = -n * one_d[k]
            else:
                continue
            weights[k + n, l + n] = ar.coerce(w)
    norm = ar.coerce(n * n)
    out: dict = {}
    for o in orders:
        res = work.pde(o) + work.ibc(o)
        if not res.mons:
            continue
        proj = (res.data * weights[:, :, None]).sum(axis=(0, 1)) / norm
        p = Poly({m: ar.public(c) for m, c in zip(res.mons, proj) if abs(c) > (0 if ar.exact else FLOAT_ZERO)})
        if p:
            out[o] = p
    ext = Series2(trunc.p_gamma + 1, trunc.p_alpha + 1, total=None if trunc.total is None else trunc.total + 1)
    return ext.like(out)
