"""Command-line interface: ``holistic2d <command> [options]``.

Exit codes: 0 success, 1 invalid input, 2 numerical failure (including
failed verification cells).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import warnings
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__, svg
from .coefficients import (
    TABLE1,
    TABLE1_COLUMNS,
    GROUP_LABELS,
    analytic_table1_row,
    coefficient_error_table,
    extract_coefficients,
    last_digit_unit,
    save_model,
    table1_row,
)
from .consistency import ManufacturedField, convergence_order, spacings
from .continuation import (
    Evaluator,
    NewtonError,
    continue_branch,
    newton_solve,
    switch_branch,
)
from .grid import MacroGrid
from .models import ModelKind, ModelSpec, integrate, stability_bound, subgrid_snapshot
from .subgrid import ConstructionError, construct, default_mode

logger = logging.getLogger("holistic2d")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


@dataclass
class RunConfig:
    command: str
    params: dict
    mode: str
    seed: int | None = None
    version: str = __version__

    def as_dict(self) -> dict:
        return {"command": self.command, "params": self.params, "mode": self.mode, "seed": self.seed,
                "version": self.version}


def _config(args, command) -> RunConfig:
    params = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "command", "out", "verbose")}
    return RunConfig(command, params, args.mode or default_mode(), getattr(args, "seed", None))


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, Fraction):
        return f"{o.numerator}/{o.denominator}"
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not serialisable: {type(o)}")


def _fmt(c) -> str:
    if isinstance(c, Fraction):
        return f"{c.numerator}/{c.denominator}" if c.denominator != 1 else str(c.numerator)
    return f"{float(c):.10g}"


def _grid_from(args) -> MacroGrid:
    if getattr(args, "grid", None):
        m = args.grid + 1  # interior points per side
    else:
        m = args.elements
    if m < 2:
        raise UsageError("need at least 2 elements")
    return MacroGrid.odd_periodic(m)


def _model_from(args, alpha=None) -> ModelSpec:
    alpha = args.alpha if alpha is None else alpha
    orders = tuple(args.orders) if getattr(args, "orders", None) else None
    if args.model == "constructed":
        if not args.n:
            raise UsageError("--model constructed needs --n")
        og, oa = orders or (3, 3)
        manifold = construct(args.n, og, oa, mode=args.mode)
        return ModelSpec.constructed(manifold.g, args.gamma, alpha, n=args.n)
    return ModelSpec(ModelKind(args.model), args.gamma, alpha, orders=orders)


def _seed_field(grid: MacroGrid, kind: str, amplitude: float, rng) -> "GridField":
    shapes = {
        "unimodal": lambda x, y: np.sin(x) * np.sin(y),
        "bimodal": lambda x, y: np.sin(2 * x) * np.sin(2 * y),
        "trimodal": lambda x, y: np.sin(3 * x) * np.sin(3 * y),
    }
    if kind == "random":
        return grid.zeros().with_values(amplitude * rng.standard_normal(grid.shape))
    if kind == "zero":
        return grid.zeros()
    return grid.sample(lambda x, y: amplitude * shapes[kind](x, y))


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_construct(args) -> int:
    cfg = _config(args, "construct")
    out = _out(args)
    manifold = construct(args.n, args.order_gamma, args.order_alpha, total=args.total, mode=args.mode)
    table = extract_coefficients(manifold.g, strict=False)
    save_model(out / f"model_n{args.n}.json", manifold, table, cfg.as_dict())
    lines = [f"# constructed model n={args.n} orders=({args.order_gamma},{args.order_alpha})"
             + (f" total<{args.total}" if args.total else "") + f" mode={manifold.mode}",
             f"# iterations={manifold.iterations} max_residual={manifold.max_residual}"]
    for order, m in sorted(table.matches.items(), key=lambda t: (sum(t[0]), t[0])):
        lines.append(f"order {GROUP_LABELS.get(order, order)}" + ("" if m.complete else "  (dictionary incomplete)")
                     + ("" if m.unique else "  (dependent dictionary: closest decomposition)"))
        for lab, c in zip(m.labels, m.coefficients):
            lines.append(f"  {lab:28s} {_fmt(c)}")
    if all(o in manifold.g._c for o in [(2, 0), (1, 1)]):
        row = table1_row(manifold)
        lines.append("")
        lines.append("n    " + "  ".join(f"{c:>22s}" for c in TABLE1_COLUMNS))
        lines.append(f"{args.n:<4d} " + "  ".join(f"{_fmt(c):>22s}" for c in row))
    text = "\n".join(lines) + "\n"
    (out / f"coefficients_n{args.n}.txt").write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_verify(args) -> int:
    cfg = _config(args, "verify")
    out = _out(args)
    n_list = args.n_list
    cells = []
    for n in n_list:
        row = table1_row(construct(n, 3, 3, mode=args.mode))
        ref = TABLE1.get(n)
        for col, c, r in zip(TABLE1_COLUMNS, row, ref or (None,) * 3):
            if r is None:
                continue
            ok = (c == r) if isinstance(c, Fraction) else abs(float(c) - float(r)) <= 1e-12
            cells.append({"table": 1, "n": n, "column": col, "value": _fmt(c), "published": _fmt(r),
                          "status": "pass" if ok else "fail"})
    for col, c, r in zip(TABLE1_COLUMNS, analytic_table1_row(), TABLE1[None]):
        cells.append({"table": 1, "n": "inf", "column": col, "value": _fmt(c), "published": _fmt(r),
                      "status": "pass" if c == r else "fail"})
    err = coefficient_error_table(n_list, mode=args.mode, oracle_n=args.oracle_n)
    for e in err.entries:
        if e.published is None:
            continue
        status = "pass" if e.published_match else "fail"
        if e.source != "analytic":
            status = "substituted"
        cells.append({"table": 2, "n": e.n, "column": e.label, "value": f"{e.error:.3g}",
                      "published": e.published, "tolerance": 2 * last_digit_unit(e.published),
                      "source": e.source, "status": status})
    decay_ok = all(r >= 4 - err.ratio_tol for rs in err.ratios.values() for r in rs)
    report = {"config": cfg.as_dict(), "cells": cells, "error_table": err.as_dict(), "quadratic_decay": decay_ok}
    _write_json(out / "verify.json", report)
    lines = []
    for c in cells:
        extra = f" [{c['source']}]" if c.get("source", "analytic") != "analytic" else ""
        lines.append(f"Table {c['table']} n={c['n']!s:<3s} {c['column']:24s} {c['value']:>12s} "
                     f"vs {c['published']:>10s}  {c['status'].upper()}{extra}")
    lines.append(f"quadratic decay of every group: {'PASS' if decay_ok else 'FAIL'}")
    text = "\n".join(lines) + "\n"
    (out / "verify.txt").write_text(text)
    sys.stdout.write(text)
    failed = [c for c in cells if c["status"] == "fail"] or not decay_ok
    return EXIT_NUMERIC if failed else EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _config(args, "simulate")
    out = _out(args)
    grid = _grid_from(args)
    model = _model_from(args)
    rng = np.random.default_rng(args.seed)
    u0 = _seed_field(grid, args.init, args.amplitude, rng)
    # half the documented explicit bound, capped for weakly coupled runs
    dt = args.dt or min(0.5 * stability_bound(model, grid.h), 0.01)
    traj = integrate(model, u0, args.t_end, dt, stride=args.stride)
    traj.to_csv(out / "trajectory.csv")
    traj.to_json(out / "trajectory.json", {"config": cfg.as_dict(), "final_rms": traj.final.rms()})
    (out / "final.svg").write_text(svg.heatmap(traj.final.values, title=f"{model.kind.value} t={args.t_end}"))
    print(f"final rms(u) = {traj.final.rms():.10g} after {len(traj.times) - 1} snapshots (dt={dt:.4g})")
    return EXIT_OK


def cmd_continue(args) -> int:
    cfg = _config(args, "continue")
    out = _out(args)
    grid = _grid_from(args)
    model = _model_from(args, alpha=0.0)
    ev = Evaluator(model, grid)
    a0 = args.alpha_min
    start = newton_solve(model, grid.zeros(), a0, evaluator=ev)
    trivial = continue_branch(model, start, (a0, args.alpha_max), args.step, evaluator=ev,
                              max_step=args.max_step, label="trivial")
    branches = [trivial]
    for k, b in enumerate(trivial.bifurcations[: args.branches]):
        try:
            br = switch_branch(model, b, (a0, args.alpha_max), args.step, evaluator=ev, max_step=args.max_step,
                               label=f"branch{k + 1}")
        except NewtonError as exc:
            logger.warning("branch switching failed at alpha=%.4g: %s", b.alpha, exc)
            continue
        branches.append(br)
    for br in branches:
        br.to_csv(out / f"branch_{br.label}.csv")
    summary = {
        "config": cfg.as_dict(),
        "grid": grid.describe(),
        "norm": "rms of grid values",
        "bifurcations": [b.alpha for b in trivial.bifurcations],
        "even_multiplicity_crossings": trivial.even_crossings,
        "branches": [
            {"label": br.label, "points": len(br.points), "alpha_range": [float(br.alphas.min()), float(br.alphas.max())],
             "stability": sorted({p.stability.value for p in br.points[1:]}), "aborted": br.aborted}
            for br in branches
        ],
    }
    _write_json(out / "continuation.json", summary)
    (out / "diagram.svg").write_text(svg.bifurcation_diagram(branches, title=f"{model.kind.value} on {grid.shape}"))
    for b in trivial.bifurcations:
        print(f"bifurcation at alpha = {b.alpha:.6f}")
    for info in summary["branches"][1:]:
        print(f"{info['label']}: {info['points']} points, stability {info['stability']}")
    return EXIT_OK


def cmd_consistency(args) -> int:
    cfg = _config(args, "consistency")
    out = _out(args)
    f = ManufacturedField.mixed() if args.field == "mixed" else ManufacturedField.sin_sin()
    model = ModelSpec(ModelKind(args.model), 1.0, args.alpha)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        res = convergence_order(model, f, spacings(args.m_list), part=args.part)
    res.to_csv(out / f"consistency_{args.model}.csv")
    res.to_json(out / f"consistency_{args.model}.json",
                {"config": cfg.as_dict(), "field": f.describe(), "warnings": [str(w.message) for w in caught]})
    (out / f"consistency_{args.model}.svg").write_text(
        svg.loglog({args.model: (res.h, res.errors)}, title=f"truncation error, order {res.order:.2f}"))
    print(f"{args.model}: order {res.order:.3f}, leading coefficient {res.coefficient:.6g} "
          f"(expected {res.expected_coefficient:.6g})" if res.coefficient is not None else
          f"{args.model}: order {res.order:.3f}")
    return EXIT_OK


def cmd_subgrid_plot(args) -> int:
    cfg = _config(args, "subgrid-plot")
    out = _out(args)
    grid = MacroGrid.odd_periodic(args.elements)
    manifold = construct(args.n, args.order_gamma, args.order_alpha, mode=args.mode)
    model = ModelSpec.constructed(manifold.g, args.gamma, args.alpha, n=args.n)
    seed = grid.sample(lambda x, y: np.sin(x) * np.sin(y))
    eq = newton_solve(model, seed, args.alpha, with_stability=False)
    snap = subgrid_snapshot(manifold, eq.u, args.gamma, args.alpha)
    tiles = snap.tiles()
    (out / "subgrid.svg").write_text(svg.heatmap(tiles, title=f"subgrid field, alpha={args.alpha}",
                                                tile=(args.n, args.n)))
    _write_json(out / "subgrid.json", {"config": cfg.as_dict(), "max_jump": snap.max_jump,
                                      "grid_values": eq.u.values.tolist(), "rms": eq.u.rms()})
    print(f"max interelement jump = {snap.max_jump:.6g}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _add_common(p):
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--mode", choices=["rational", "float"], default=None,
                   help="coefficient arithmetic (default from HOLISTIC_MODE, else rational)")
    p.add_argument("-v", "--verbose", action="store_true")


def _add_model(p, default="holistic_g3a3"):
    p.add_argument("--model", default=default, choices=[k.value for k in ModelKind])
    p.add_argument("--n", type=int, default=None, help="subgrid intervals for --model constructed")
    p.add_argument("--orders", type=int, nargs=2, metavar=("P_GAMMA", "P_ALPHA"), default=None,
                   help="truncate the model to these orders")
    p.add_argument("--gamma", type=float, default=1.0)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--elements", type=int, default=8, help="elements per side on [0, pi]")
    g.add_argument("--grid", type=int, default=None, help="interior grid points per side (elements - 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="holistic2d", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("construct", help="construct the subgrid slow manifold and macroscale model")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--order-gamma", type=int, default=3)
    p.add_argument("--order-alpha", type=int, default=3)
    p.add_argument("--total", type=int, default=None, help="optional total-degree cap a + b < total")
    _add_common(p)
    p.set_defaults(func=cmd_construct)

    p = sub.add_parser("verify", help="reproduce the coefficient tables")
    p.add_argument("--n-list", type=int, nargs="+", default=[2, 4, 8])
    p.add_argument("--oracle-n", type=int, default=16)
    _add_common(p)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("simulate", help="integrate a macroscale model in time")
    _add_model(p)
    p.add_argument("--alpha", type=float, default=6.0)
    p.add_argument("--t-end", type=float, default=5.0)
    p.add_argument("--dt", type=float, default=None)
    p.add_argument("--stride", type=int, default=10)
    p.add_argument("--init", choices=["unimodal", "bimodal", "trimodal", "random", "zero"], default="unimodal")
    p.add_argument("--amplitude", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    _add_common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("continue", help="bifurcation diagram by pseudo-arclength continuation")
    _add_model(p)
    p.add_argument("--alpha-min", type=float, default=0.05)
    p.add_argument("--alpha-max", type=float, default=30.0)
    p.add_argument("--step", type=float, default=0.5)
    p.add_argument("--max-step", type=float, default=1.5)
    p.add_argument("--branches", type=int, default=3, help="number of bifurcating branches to follow")
    _add_common(p)
    p.set_defaults(func=cmd_continue)

    p = sub.add_parser("consistency", help="measured consistency order against a manufactured field")
    p.add_argument("--model", default="holistic_g3a3",
                   choices=[k.value for k in ModelKind if k is not ModelKind.CONSTRUCTED])
    p.add_argument("--alpha", type=float, default=0.0)
    p.add_argument("--part", choices=["full", "nonlinear"], default="full")
    p.add_argument("--field", choices=["sin", "mixed"], default="sin")
    p.add_argument("--m-list", type=int, nargs="+", default=[8, 16, 32, 64], help="grid points per 2*pi")
    _add_common(p)
    p.set_defaults(func=cmd_consistency)

    p = sub.add_parser("subgrid-plot", help="plot the constructed subgrid field of an equilibrium")
    p.add_argument("--elements", type=int, default=4)
    p.add_argument("--alpha", type=float, default=6.0)
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--n", type=int, default=4)
    p.add_argument("--order-gamma", type=int, default=2)
    p.add_argument("--order-alpha", type=int, default=2)
    _add_common(p)
    p.set_defaults(func=cmd_subgrid_plot)
    return parser


def _validate(args):
    for name in ("n",):
        v = getattr(args, name, None)
        if v is not None and v < 2:
            raise UsageError("--n must be at least 2")
    for name in ("order_gamma", "order_alpha"):
        v = getattr(args, name, None)
        if v is not None and v < 1:
            raise UsageError(f"--{name.replace('_', '-')} must be at least 1")
    if getattr(args, "m_list", None) and len(args.m_list) < 4:
        raise UsageError("--m-list needs at least 4 grid sizes")
    if getattr(args, "elements", None) is not None and args.elements < 2:
        raise UsageError("--elements must be at least 2")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.mode:
        os.environ["HOLISTIC_MODE"] = args.mode
    try:
        _validate(args)
        return args.func(args)
    except (UsageError, ValueError) as exc:
        print(f"holistic2d {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ConstructionError, NewtonError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"holistic2d {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
