"""Sparse polynomials in macroscale grid symbols and truncated (gamma, alpha) series.

A *symbol* is an integer offset ``(di, dj)`` standing for the grid value
``u[i+di, j+dj]`` relative to a generic element ``(i, j)``.  A *monomial* is a
sorted tuple of symbols with repetition, so ``u00**2 * u10`` is
``((0, 0), (0, 0), (1, 0))`` and the constant monomial is ``()``.

Translating every symbol of a monomial by the same offset keeps the tuple
sorted, which makes :meth:`Poly.shift` cheap.
"""
from __future__ import annotations

from collections import Counter
from fractions import Fraction
from itertools import product
from numbers import Rational
from typing import Callable, Iterable, Iterator, Mapping

Symbol = tuple[int, int]
Monomial = tuple[Symbol, ...]

ONE: Monomial = ()


def mono_mul(m1: Monomial, m2: Monomial) -> Monomial:
    if not m1:
        return m2
    if not m2:
        return m1
    return tuple(sorted(m1 + m2))


def mono_shift(m: Monomial, offset: Symbol) -> Monomial:
    di, dj = offset
    return tuple((i + di, j + dj) for i, j in m)


def mono_key(m: Monomial):
    """Graded lexicographic sort key."""
    return (len(m), m)


def mono_str(m: Monomial) -> str:
    if not m:
        return "1"
    parts = []
    for s, p in sorted(Counter(m).items()):
        name = f"u[{s[0]},{s[1]}]"
        parts.append(name if p == 1 else f"{name}^{p}")
    return "*".join(parts)


def _as_coeff(c):
    if isinstance(c, Fraction):
        return c
    if isinstance(c, (int, Rational)):
        return Fraction(c)
    return c  # floats (float mode) pass through


class Poly:
    """Immutable sparse polynomial ``{monomial: coefficient}``.

    Coefficients are :class:`fractions.Fraction` in exact mode and ``float``
    in float mode.  Zero coefficients are never stored.
    """

    __slots__ = ("_terms", "_hash")

    def __init__(self, terms: Mapping[Monomial, object] | Iterable = (), *, _trusted=False):
        if _trusted:
            self._terms = terms
        else:
            items = terms.items() if isinstance(terms, Mapping) else terms
            acc: dict = {}
            for m, c in items:
                m = tuple(sorted(tuple(s) for s in m))
                acc[m] = acc.get(m, 0) + _as_coeff(c)
            self._terms = {m: c for m, c in acc.items() if c != 0}
        self._hash = None

    # construction helpers -------------------------------------------------
    @classmethod
    def symbol(cls, di: int, dj: int, power: int = 1) -> "Poly":
        return cls({((di, dj),) * power: Fraction(1)}, _trusted=True)

    @classmethod
    def constant(cls, c) -> "Poly":
        c = _as_coeff(c)
        return cls({ONE: c} if c != 0 else {}, _trusted=True)

    @classmethod
    def zero(cls) -> "Poly":
        return cls({}, _trusted=True)

    # mapping-ish access ---------------------------------------------------
    @property
    def terms(self) -> dict:
        return self._terms

    def items(self):
        return sorted(self._terms.items(), key=lambda t: mono_key(t[0]))

    def __iter__(self) -> Iterator[Monomial]:
        return iter(sorted(self._terms, key=mono_key))

    def __len__(self):
        return len(self._terms)

    def __getitem__(self, m: Monomial):
        return self._terms.get(tuple(m), 0)

    def __bool__(self):
        return bool(self._terms)

    def is_zero(self, tol: float = 0.0) -> bool:
        return all(abs(c) <= tol for c in self._terms.values())

    def degree(self) -> int:
        return max((len(m) for m in self._terms), default=-1)

    def symbols(self) -> set[Symbol]:
        out: set[Symbol] = set()
        for m in self._terms:
            out.update(m)
        return out

    def radius(self) -> int:
        """Largest Chebyshev distance of a symbol from the element centre."""
        return max((max(abs(i), abs(j)) for i, j in self.symbols()), default=0)

    # arithmetic -----------------------------------------------------------
    def __add__(self, other):
        if not isinstance(other, Poly):
            other = Poly.constant(other)
        out = dict(self._terms)
        for m, c in other._terms.items():
            s = out.get(m, 0) + c
            if s == 0:
                out.pop(m, None)
            else:
                out[m] = s
        return Poly(out, _trusted=True)

    __radd__ = __add__

    def __neg__(self):
        return Poly({m: -c for m, c in self._terms.items()}, _trusted=True)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def scale(self, c) -> "Poly":
        c = _as_coeff(c)
        if c == 0:
            return Poly.zero()
        return Poly({m: v * c for m, v in self._terms.items()}, _trusted=True)

    def __mul__(self, other):
        if not isinstance(other, Poly):
            return self.scale(other)
        out: dict = {}
        for m1, c1 in self._terms.items():
            for m2, c2 in other._terms.items():
                m = mono_mul(m1, m2)
                out[m] = out.get(m, 0) + c1 * c2
        return Poly({m: c for m, c in out.items() if c != 0}, _trusted=True)

    def __rmul__(self, other):
        return self.scale(other)

    def __pow__(self, p: int):
        if p < 0:
            raise ValueError("negative power")
        out = Poly.constant(1)
        for _ in range(p):
            out = out * self
        return out

    def shift(self, offset: Symbol) -> "Poly":
        if offset == (0, 0):
            return self
        return Poly({mono_shift(m, offset): c for m, c in self._terms.items()}, _trusted=True)

    def diff(self, s: Symbol) -> "Poly":
        out: dict = {}
        for m, c in self._terms.items():
            k = m.count(s)
            if k:
                i = m.index(s)
                out[m[:i] + m[i + 1:]] = c * k
        return Poly(out, _trusted=True)

    def substitute_sign(self) -> "Poly":
        """Return p(-u)."""
        return Poly({m: (-c if len(m) % 2 else c) for m, c in self._terms.items()}, _trusted=True)

    def map_coeffs(self, f: Callable) -> "Poly":
        return Poly({m: f(c) for m, c in self._terms.items()})

    def to_float(self) -> "Poly":
        return Poly({m: float(c) for m, c in self._terms.items()}, _trusted=True)

    # evaluation -----------------------------------------------------------
    def evaluate(self, value: Callable[[Symbol], float]) -> float:
        cache: dict = {}
        total = 0.0
        for m, c in self._terms.items():
            t = float(c)
            for s in m:
                if s not in cache:
                    cache[s] = value(s)
                t *= cache[s]
            total += t
        return total

    # comparison -----------------------------------------------------------
    def __eq__(self, other):
        if isinstance(other, Poly):
            return self._terms == other._terms
        if other == 0:
            return not self._terms
        return NotImplemented

    def __hash__(self):
        if self._hash is None:
            self._hash = hash(frozenset(self._terms.items()))
        return self._hash

    def max_abs_diff(self, other: "Poly") -> float:
        keys = set(self._terms) | set(other._terms)
        return max((abs(float(self[m] - other[m])) for m in keys), default=0.0)

    def __repr__(self):
        if not self._terms:
            return "Poly(0)"
        parts = [f"{c}*{mono_str(m)}" for m, c in self.items()]
        return "Poly(" + " + ".join(parts) + ")"

    # serialisation --------------------------------------------------------
    def to_json(self) -> list:
        out = []
        for m, c in self.items():
            entry = {"monomial": [list(s) for s in m]}
            if isinstance(c, Fraction):
                entry["coeff"] = f"{c.numerator}/{c.denominator}"
            entry["value"] = float(c)
            out.append(entry)
        return out

    @classmethod
    def from_json(cls, data: list, exact: bool = True) -> "Poly":
        terms = []
        for entry in data:
            m = tuple(tuple(s) for s in entry["monomial"])
            if exact and "coeff" in entry:
                c = Fraction(entry["coeff"])
            else:
                c = float(entry["value"])
            terms.append((m, c))
        return cls(terms)


# convenient symbol constructor used across the package
def u(di: int = 0, dj: int = 0) -> Poly:
    return Poly.symbol(di, dj)


class Series2:
    """Truncated bivariate power series in ``(gamma, alpha)`` with Poly coefficients.

    An order ``(a, b)`` (coefficient of ``gamma**a * alpha**b``) is kept when
    ``a < p_gamma`` and ``b < p_alpha``, and additionally ``a + b < total``
    when a total-degree cap is given.  Products discard orders outside the
    truncation.
    """

    def __init__(self, p_gamma: int, p_alpha: int, coeffs: Mapping | None = None, total: int | None = None):
        if p_gamma < 1 or p_alpha < 1:
            raise ValueError("truncation orders must be >= 1")
        self.p_gamma = p_gamma
        self.p_alpha = p_alpha
        self.total = total
        self._c: dict[tuple[int, int], Poly] = {}
        for k, p in (coeffs or {}).items():
            k = (int(k[0]), int(k[1]))
            if not self.keeps(*k):
                raise ValueError(f"order {k} outside truncation {self.orders}")
            if p:
                self._c[k] = p

    @property
    def orders(self):
        return (self.p_gamma, self.p_alpha)

    def keeps(self, a: int, b: int) -> bool:
        if a < 0 or b < 0 or a >= self.p_gamma or b >= self.p_alpha:
            return False
        return self.total is None or a + b < self.total

    def kept_orders(self) -> list[tuple[int, int]]:
        out = [(a, b) for a, b in product(range(self.p_gamma), range(self.p_alpha)) if self.keeps(a, b)]
        return sorted(out, key=lambda o: (o[0] + o[1], o))

    def like(self, coeffs=None) -> "Series2":
        return Series2(self.p_gamma, self.p_alpha, coeffs, self.total)

    def __getitem__(self, order) -> Poly:
        return self._c.get(tuple(order), Poly.zero())

    def items(self):
        return sorted(self._c.items(), key=lambda t: (t[0][0] + t[0][1], t[0]))

    def __add__(self, other: "Series2") -> "Series2":
        out = dict(self._c)
        for k, p in other._c.items():
            if self.keeps(*k):
                out[k] = out.get(k, Poly.zero()) + p
        return self.like({k: p for k, p in out.items() if p})

    def __neg__(self):
        return self.like({k: -p for k, p in self._c.items()})

    def __sub__(self, other):
        return self + (-other)

    def __mul__(self, other):
        if not isinstance(other, Series2):
            return self.like({k: p * other for k, p in self._c.items()})
        out: dict = {}
        for (a1, b1), p1 in self._c.items():
            for (a2, b2), p2 in other._c.items():
                k = (a1 + a2, b1 + b2)
                if self.keeps(*k):
                    out[k] = out.get(k, Poly.zero()) + p1 * p2
        return self.like({k: p for k, p in out.items() if p})

    def diff(self, s: Symbol) -> "Series2":
        return self.like({k: p.diff(s) for k, p in self._c.items()})

    def shift(self, offset: Symbol) -> "Series2":
        return self.like({k: p.shift(offset) for k, p in self._c.items()})

    def evaluate(self, gamma: float, alpha: float, value: Callable[[Symbol], float]) -> float:
        return sum(gamma ** a * alpha ** b * p.evaluate(value) for (a, b), p in self._c.items())

    def is_zero(self, tol: float = 0.0) -> bool:
        return all(p.is_zero(tol) for p in self._c.values())

    def __eq__(self, other):
        if not isinstance(other, Series2):
            return NotImplemented
        return self._c == other._c

    def __repr__(self):
        body = ", ".join(f"{k}: {p!r}" for k, p in self.items())
        return f"Series2(orders={self.orders}, total={self.total}, {{{body}}})"
