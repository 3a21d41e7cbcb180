"""Equilibria, linear stability and pseudo-arclength continuation in alpha."""
from __future__ import annotations

import csv
import enum
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as sla

from .grid import GridField, MacroGrid
from .models import ModelKind, ModelSpec, exact_jacobian, model_poly, rhs_full

logger = logging.getLogger(__name__)

MARGINAL = 1e-6


class Stability(str, enum.Enum):
    STABLE = "stable"
    UNSTABLE = "unstable"
    MARGINAL = "marginal"


class NewtonError(RuntimeError):
    pass


class SingularJacobianError(NewtonError):
    pass


def classify(eigs) -> Stability:
    top = max(np.real(eigs))
    if abs(top) <= MARGINAL:
        return Stability.MARGINAL
    return Stability.UNSTABLE if top > 0 else Stability.STABLE


@dataclass
class Equilibrium:
    u: GridField
    alpha: float
    model: ModelSpec
    residual_norm: float
    leading_eigenvalues: list = field(default_factory=list)
    stability: Stability | None = None
    unstable_count: int | None = None

    @property
    def norm(self) -> float:
        return self.u.rms()


class Evaluator:
    """Residual and Jacobian of a model on a fixed grid.

    The forward-difference Jacobian perturbs many unknowns at once: unknowns
    further apart than the model's stencil reach in both directions never
    feed the same output, so ``(2 r + 1)**2`` residual evaluations suffice.
    """

    def __init__(self, model: ModelSpec, grid: MacroGrid, jacobian: str = "fd"):
        if model.h is not None and not math.isclose(model.h, grid.h):
            raise ValueError("model spacing does not match grid")
        self.model = model
        self.grid = grid
        self.method = jacobian
        if jacobian == "exact" and (model.kind not in (ModelKind.CENTERED2, ModelKind.HOLISTIC_G3A3) or model.orders):
            raise ValueError("exact Jacobian only for centered2 and holistic_g3a3")
        self.radius = max((p.radius() for p in model_poly(model).values()), default=1)
        self._colors = self._colouring()

    def _colouring(self):
        p = 2 * self.radius + 1
        nx, ny = self.grid.shape
        periodic = self.grid.symmetry.value == "periodic"
        # wrapped grids keep the colouring valid only for period multiples of p
        px = nx if periodic and nx % p else p
        py = ny if periodic and ny % p else p
        self._period = (nx, ny) if periodic else None
        I, J = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
        return [m for a in range(px) for b in range(py) if np.any(m := (I % px == a) & (J % py == b))]

    def at(self, alpha: float) -> ModelSpec:
        return replace(self.model, alpha=alpha)

    def residual(self, x: np.ndarray, alpha: float) -> np.ndarray:
        g = self.grid
        vals = x.reshape(g.shape)
        return g.restrict(rhs_full(self.at(alpha), g.extend(vals), g.h)).ravel()

    def d_alpha(self, x, alpha, eps=1e-6) -> np.ndarray:
        return (self.residual(x, alpha + eps) - self.residual(x, alpha - eps)) / (2 * eps)

    def jacobian(self, x: np.ndarray, alpha: float, f0=None) -> np.ndarray:
        if self.method == "exact":
            return exact_jacobian(self.at(alpha), GridField(self.grid, x.reshape(self.grid.shape)))
        n = x.size
        f0 = self.residual(x, alpha) if f0 is None else f0
        step = 1e-7 * max(1.0, float(np.max(np.abs(x))) if n else 1.0)
        J = np.zeros((n, n))
        shape = self.grid.shape
        r = self.radius
        I, Jj = np.meshgrid(np.arange(shape[0]), np.arange(shape[1]), indexing="ij")
        I, Jj = I.ravel(), Jj.ravel()
        for mask in self._colors:
            cols = np.flatnonzero(mask.ravel())
            xp = x.copy()
            xp[cols] += step
            df = (self.residual(xp, alpha) - f0) / step
            # each output row depends on at most one perturbed unknown of a colour
            for c in cols:
                di = np.abs(I - I[c])
                dj = np.abs(Jj - Jj[c])
                if self._period is not None:
                    di = np.minimum(di, shape[0] - di)
                    dj = np.minimum(dj, shape[1] - dj)
                near = (di <= r) & (dj <= r)
                J[near, c] = df[near]
        return J


def _solve(J, rhs):
    try:
        lu = sla.lu_factor(J, check_finite=True)
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise SingularJacobianError(str(exc)) from exc
    if np.min(np.abs(np.diag(lu[0]))) < 1e-13 * max(1.0, np.max(np.abs(np.diag(lu[0])))):
        raise SingularJacobianError("Jacobian numerically singular (bifurcation point?)")
    return sla.lu_solve(lu, rhs)


def newton_solve(model: ModelSpec, u0: GridField, alpha: float | None = None, tol: float = 1e-10,
                 max_iter: int = 50, jacobian: str = "fd", evaluator: Evaluator | None = None,
                 with_stability: bool = True, k: int = 6) -> Equilibrium:
    """Damped Newton iteration for ``rhs(u) = 0``."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    alpha = model.alpha if alpha is None else alpha
    ev = evaluator or Evaluator(model, u0.grid, jacobian)
    x = u0.flat().copy()
    f = ev.residual(x, alpha)
    for it in range(max_iter + 1):
        fn = float(np.max(np.abs(f))) if f.size else 0.0
        if fn <= tol:
            eq = Equilibrium(GridField(u0.grid, x.reshape(u0.grid.shape)), alpha, ev.at(alpha), fn)
            if with_stability:
                stability(eq, k, evaluator=ev)
            return eq
        if it == max_iter:
            break
        d = _solve(ev.jacobian(x, alpha, f), -f)
        lam = 1.0
        while lam > 1e-4:
            xn = x + lam * d
            fnew = ev.residual(xn, alpha)
            if np.max(np.abs(fnew)) < (1 - 1e-4 * lam) * fn or lam == 1.0 and fn < 1e-6:
                break
            lam *= 0.5
        x, f = xn, fnew
    raise NewtonError(f"Newton did not converge in {max_iter} iterations (|rhs| = {fn:.3g})")


def stability(eq: Equilibrium, k: int = 6, evaluator: Evaluator | None = None) -> list:
    """The ``k`` eigenvalues of largest real part; also sets the classification."""
    ev = evaluator or Evaluator(eq.model, eq.u.grid)
    J = ev.jacobian(eq.u.flat(), eq.alpha)
    eigs = np.linalg.eigvals(J)
    order = np.argsort(-eigs.real)
    eigs = eigs[order]
    lead = [complex(e) if abs(e.imag) > 1e-12 else float(e.real) for e in eigs[:k]]
    eq.leading_eigenvalues = lead
    eq.stability = classify(eigs)
    eq.unstable_count = int(np.sum(eigs.real > MARGINAL))
    return lead


# ---------------------------------------------------------------------------
# continuation
# ---------------------------------------------------------------------------


@dataclass
class BifurcationPoint:
    alpha: float
    u: GridField
    eigenvector: np.ndarray
    kind: str = "steady-state"
    unstable_before: int = 0
    unstable_after: int = 0


@dataclass
class Branch:
    points: list
    arclength: list
    bifurcations: list = field(default_factory=list)
    even_crossings: list = field(default_factory=list)  # alpha of crossings not flagged by the parity test
    aborted: str | None = None
    label: str = ""

    @property
    def alphas(self) -> np.ndarray:
        return np.array([p.alpha for p in self.points])

    @property
    def norms(self) -> np.ndarray:
        return np.array([p.norm for p in self.points])

    def to_csv(self, path) -> None:
        bif = {round(b.alpha, 12) for b in self.bifurcations}
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["branch", "s", "alpha", "rms_norm", "stability", "unstable_count", "bifurcation"])
            for s, p in zip(self.arclength, self.points):
                w.writerow([self.label, f"{s:.10g}", f"{p.alpha:.12g}", f"{p.norm:.12g}",
                            p.stability.value if p.stability else "", p.unstable_count, ""])
            for b in self.bifurcations:
                w.writerow([self.label, "", f"{b.alpha:.12g}", f"{b.u.rms():.12g}", "", "", "bifurcation"])


def _inner(a, b, n):
    # arclength metric: RMS-scaled state plus alpha
    return float(a[:-1] @ b[:-1]) / n + float(a[-1] * b[-1])


def _tangent(ev, x, alpha, prev=None):
    n = x.size
    J = ev.jacobian(x, alpha)
    Fa = ev.d_alpha(x, alpha)
    A = np.hstack([J, Fa[:, None]])
    # null vector of the n x (n+1) matrix via a bordered solve
    c = prev if prev is not None else np.r_[np.zeros(n), 1.0]
    M = np.vstack([A, c[None, :]])
    rhs = np.r_[np.zeros(n), 1.0]
    try:
        t = np.linalg.solve(M, rhs)
    except np.linalg.LinAlgError:
        t = sla.null_space(A)[:, 0]
    t /= math.sqrt(_inner(t, t, n))
    if prev is not None and _inner(t, prev, n) < 0:
        t = -t
    return t, J


def _corrector(ev, X_pred, t, tol, max_iter=12):
    n = X_pred.size - 1
    X = X_pred.copy()
    w = np.r_[t[:-1] / n, t[-1]]
    for it in range(max_iter):
        x, a = X[:-1], X[-1]
        F = ev.residual(x, a)
        g = w @ (X - X_pred)
        if max(np.max(np.abs(F)), abs(g)) <= tol:
            return X, it
        J = ev.jacobian(x, a, F)
        Fa = ev.d_alpha(x, a)
        M = np.block([[J, Fa[:, None]], [w[None, :]]])
        try:
            dX = np.linalg.solve(M, -np.r_[F, g])
        except np.linalg.LinAlgError:
            return None, it
        X = X + dX
        if not np.all(np.isfinite(X)):
            return None, it
    return None, max_iter


def _eigs(J):
    e = np.linalg.eigvals(J)
    return e[np.argsort(-e.real)]


def _equilibrium(ev, x, alpha, J=None, k=6):
    J = ev.jacobian(x, alpha) if J is None else J
    e = _eigs(J)
    f = ev.residual(x, alpha)
    eq = Equilibrium(GridField(ev.grid, x.reshape(ev.grid.shape)), alpha, ev.at(alpha),
                     float(np.max(np.abs(f))) if f.size else 0.0)
    eq.leading_eigenvalues = [complex(v) if abs(v.imag) > 1e-12 else float(v.real) for v in e[:k]]
    eq.stability = classify(e)
    eq.unstable_count = int(np.sum(e.real > MARGINAL))
    return eq, e


def _locate(ev, p0: Equilibrium, p1: Equilibrium, X0, X1):
    """Interpolate the crossing of the real eigenvalue nearest zero between two points."""
    J0 = ev.jacobian(X0[:-1], X0[-1])
    J1 = ev.jacobian(X1[:-1], X1[-1])
    e0 = np.linalg.eigvals(J0)
    e1 = np.linalg.eigvals(J1)
    # the crossing eigenvalue: the one changing sign, smallest in magnitude on both sides
    l0 = min((v.real for v in e0 if v.real > -1e3 and abs(v.imag) < 1e-9 and v.real <= MARGINAL), key=abs, default=None)
    l1 = min((v.real for v in e1 if abs(v.imag) < 1e-9 and v.real >= -MARGINAL), key=abs, default=None)
    if p1.unstable_count < p0.unstable_count:
        l0 = min((v.real for v in e0 if abs(v.imag) < 1e-9 and v.real >= -MARGINAL), key=abs, default=None)
        l1 = min((v.real for v in e1 if abs(v.imag) < 1e-9 and v.real <= MARGINAL), key=abs, default=None)
    theta = 0.5 if l0 is None or l1 is None or l0 == l1 else l0 / (l0 - l1)
    theta = min(max(theta, 0.0), 1.0)
    X = (1 - theta) * X0 + theta * X1
    x, a = X[:-1], X[-1]
    J = ev.jacobian(x, a)
    w, V = np.linalg.eig(J)
    i = int(np.argmin(np.abs(w)))
    phi = np.real(V[:, i])
    phi /= np.linalg.norm(phi)
    return a, x, phi, float(w[i].real)


def continue_branch(model: ModelSpec, start: Equilibrium, alpha_range=(0.0, 30.0), step: float = 0.5,
                    *, direction=None, max_step: float | None = None, max_points: int = 2000,
                    tol: float = 1e-9, jacobian: str = "fd", evaluator: Evaluator | None = None,
                    min_step: float = 1e-8, label: str = "") -> Branch:
    """Pseudo-arclength continuation from ``start`` while alpha stays in range.

    ``direction`` is an optional initial tangent ``(du, dalpha)`` (used for
    branch switching); otherwise alpha increases initially.  Steady-state
    bifurcations are flagged when the number of unstable eigenvalues changes
    parity between consecutive points.
    """
    ev = evaluator or Evaluator(model, start.u.grid, jacobian)
    n = start.u.grid.size
    lo, hi = alpha_range
    max_step = max_step or 4 * step
    X = np.r_[start.u.flat(), start.alpha]
    if direction is not None:
        t = np.asarray(direction, dtype=float)
        t = t / math.sqrt(_inner(t, t, n))
        _, J = _tangent(ev, X[:-1], X[-1])
    else:
        t, J = _tangent(ev, X[:-1], X[-1])
        if t[-1] < 0:
            t = -t
    eq, e = _equilibrium(ev, X[:-1], X[-1], J)
    branch = Branch([eq], [0.0], label=label)
    s = 0.0
    ds = step
    Xprev = X
    while len(branch.points) < max_points:
        X_pred = X + ds * t
        Xn, iters = _corrector(ev, X_pred, t, tol)
        if Xn is None:
            ds *= 0.5
            if ds < min_step:
                branch.aborted = f"step size underflow at alpha={X[-1]:.6g}"
                logger.warning(branch.aborted)
                break
            continue
        a = Xn[-1]
        if not (lo - 1e-12 <= a <= hi + 1e-12):
            # land exactly on the range end with a natural-parameter solve
            a_end = hi if a > hi else lo
            try:
                frac = (a_end - X[-1]) / (a - X[-1])
                xe = X[:-1] + frac * (Xn[:-1] - X[:-1])
                eq_end = newton_solve(ev.at(a_end), GridField(ev.grid, xe.reshape(ev.grid.shape)), a_end,
                                      tol=tol, evaluator=ev, with_stability=False)
                Xn = np.r_[eq_end.u.flat(), a_end]
            except NewtonError:
                break
            eqn, en = _equilibrium(ev, Xn[:-1], Xn[-1])
            _record(branch, ev, eq, eqn, X, Xn)
            s += math.sqrt(_inner(Xn - X, Xn - X, n))
            branch.points.append(eqn)
            branch.arclength.append(s)
            break
        tn, Jn = _tangent(ev, Xn[:-1], Xn[-1], prev=t)
        eqn, en = _equilibrium(ev, Xn[:-1], Xn[-1], Jn)
        _record(branch, ev, eq, eqn, X, Xn)
        s += math.sqrt(_inner(Xn - X, Xn - X, n))
        branch.points.append(eqn)
        branch.arclength.append(s)
        X, t, eq = Xn, tn, eqn
        if iters <= 3:
            ds = min(ds * 1.5, max_step)
        elif iters > 6:
            ds *= 0.7
    return branch


def _record(branch, ev, eq0, eq1, X0, X1):
    c0, c1 = eq0.unstable_count, eq1.unstable_count
    if c0 == c1:
        return
    if (c1 - c0) % 2 == 0:
        branch.even_crossings.append(0.5 * (X0[-1] + X1[-1]))
        return
    a, x, phi, _ = _locate(ev, eq0, eq1, X0, X1)
    branch.bifurcations.append(
        BifurcationPoint(a, GridField(ev.grid, x.reshape(ev.grid.shape)), phi,
                         unstable_before=c0, unstable_after=c1)
    )


def switch_branch(model: ModelSpec, bif: BifurcationPoint, alpha_range=(0.0, 30.0), step: float = 0.5,
                  sign: int = 1, evaluator: Evaluator | None = None, **kw) -> Branch:
    """Follow the branch emanating from ``bif`` along its critical eigenvector.

    The first predictor offsets the state by ``1e-3 h`` along the eigenvector;
    the arclength constraint keeps the corrector off the original branch.
    """
    grid = bif.u.grid
    ev = evaluator or Evaluator(model, grid, kw.pop("jacobian", "fd"))
    n = grid.size
    phi = sign * bif.eigenvector
    eps = 1e-3 * grid.h
    x0 = bif.u.flat() + eps * phi * math.sqrt(n)
    # re-anchor on the pitchfork: solve with the amplitude along phi pinned
    t = np.r_[phi * math.sqrt(n), 0.0]
    X_pred = np.r_[x0, bif.alpha]
    X, _ = _corrector(ev, X_pred, t / math.sqrt(_inner(t, t, n)), kw.get("tol", 1e-9), max_iter=30)
    if X is None:
        raise NewtonError(f"branch switching failed at alpha={bif.alpha:.6g}")
    start = Equilibrium(GridField(grid, X[:-1].reshape(grid.shape)), X[-1], ev.at(X[-1]), 0.0)
    # orient the new branch away from the original one
    direction = np.r_[X[:-1] - bif.u.flat(), X[-1] - bif.alpha]
    return continue_branch(model, start, alpha_range, step, direction=direction, evaluator=ev, **kw)


# ---------------------------------------------------------------------------
# diagrams
# ---------------------------------------------------------------------------


@dataclass
class DiagramDiscrepancy:
    alpha_range: tuple
    max_abs: float
    mean_abs: float
    max_rel: float
    mean_rel: float
    samples: int

    def as_dict(self) -> dict:
        return {"alpha_range": list(self.alpha_range), "max_abs": self.max_abs, "mean_abs": self.mean_abs,
                "max_rel": self.max_rel, "mean_rel": self.mean_rel, "samples": self.samples,
                "norm": "rms of grid values"}


def _monotone(alphas, norms):
    order = np.argsort(alphas)
    return alphas[order], norms[order]


def diagram_compare(branch_a: Branch, branch_b: Branch, alpha_range=None, samples: int = 201,
                    rel_floor: float = 0.05) -> DiagramDiscrepancy:
    """Norm discrepancy of two branches over their common alpha range.

    Relative errors are taken against ``branch_b`` and only where its norm
    exceeds ``rel_floor`` times its maximum (near onset both norms vanish).
    """
    aa, na = _monotone(branch_a.alphas, branch_a.norms)
    ab, nb = _monotone(branch_b.alphas, branch_b.norms)
    lo = max(aa.min(), ab.min())
    hi = min(aa.max(), ab.max())
    if alpha_range is not None:
        lo, hi = max(lo, alpha_range[0]), min(hi, alpha_range[1])
    if not hi > lo:
        raise ValueError("branches have disjoint alpha ranges")
    grid = np.linspace(lo, hi, samples)
    va = np.interp(grid, aa, na)
    vb = np.interp(grid, ab, nb)
    diff = np.abs(va - vb)
    mask = vb > rel_floor * vb.max() if vb.max() > 0 else np.zeros_like(vb, bool)
    rel = diff[mask] / vb[mask] if mask.any() else np.array([0.0])
    return DiagramDiscrepancy((float(lo), float(hi)), float(diff.max()), float(diff.mean()),
                              float(rel.max()), float(rel.mean()), samples)


def natural_branch(model: ModelSpec, u0: GridField, alphas, tol=1e-10, jacobian="fd") -> Branch:
    """Equilibria at prescribed alpha values, each seeded by the previous one."""
    ev = Evaluator(model, u0.grid, jacobian)
    pts = []
    u = u0
    for a in alphas:
        eq = newton_solve(ev.at(a), u, a, tol=tol, evaluator=ev)
        pts.append(eq)
        u = eq.u
    return Branch(pts, list(map(float, alphas)))


def trivial_critical_alpha(model: ModelSpec, grid: MacroGrid, k: int, l: int) -> float:
    """Alpha at which the mode ``sin(kx) sin(ly)`` destabilises the zero state."""
    X, Y = grid.coords()
    phi = np.sin(k * X) * np.sin(l * Y)
    lin = replace(model, alpha=0.0)
    Lphi = grid.restrict(rhs_full(lin, grid.extend(phi), grid.h))
    return float(-np.sum(Lphi * phi) / np.sum(phi * phi))
