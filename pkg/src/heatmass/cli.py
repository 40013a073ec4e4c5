"""Command-line front end.

Subcommands::

    heatmass spectrum --case dirichlet --n-max 20
    heatmass control  --case neumann --T 0.5 --N 10 --modes "1:1,2:0.5"
    heatmass verify   --case dirichlet --T 0.5 --N 10
    heatmass epsilon  --eps 0.2,0.1,0.05 --t-star 0.1

A ``--config`` file holds ``key = value`` lines using the long option names
(``mesh_n`` or ``mesh-n``); options given on the command line win.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import moment as mom
from .pde import FdConfig, ResolutionError, epsilon_error
from .spectrum import (
    BoundaryCase,
    ModeKind,
    asymptotic_deviation,
    eigenpairs,
    fit_neumann_coefficient,
)
from .state import HybridState, project, state_from_modes
from .verify import VerificationError, null_control_verify

STANDARD_MODES = "1:1,2:0.5,3:0.25"

# option name -> (type, default); None defaults are filled per subcommand
OPTIONS = {
    "case": (str, "dirichlet"),
    "T": (float, 0.5),
    "N": (int, 10),
    "mesh_n": (int, None),
    "dt": (float, 1e-3),
    "scheme": (str, "radau"),
    "order": (int, 4),
    "precision": (str, "auto"),
    "seed": (int, 0),
    "out": (str, "."),
    "weight_p": (int, mom.VERIFY_WEIGHT.p),
    "weight_q": (int, mom.VERIFY_WEIGHT.q),
    "modes": (str, STANDARD_MODES),
    "state": (str, None),
    "n_max": (int, 20),
    "format": (str, "csv"),
    "eps": (str, "0.2,0.1,0.05"),
    "t_star": (float, 0.1),
}


class ConfigError(ValueError):
    pass


def read_config(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            name = key.replace("-", "_")
            if name not in OPTIONS:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            typ = OPTIONS[name][0]
            try:
                out[name] = typ(value)
            except ValueError:
                raise ConfigError(f"{path}:{lineno}: bad value {value!r} for key {key!r}") from None
    return out


def parse_modes(text: str) -> list[tuple[int, float]]:
    """``"1:1,2:0.5"`` -> ``[(1, 1.0), (2, 0.5)]``; empty text -> no modes."""
    modes = []
    for item in filter(None, (s.strip() for s in text.split(","))):
        n, _, c = item.partition(":")
        try:
            n, c = int(n), float(c)
        except ValueError:
            raise ConfigError(f"bad mode entry {item!r}; expected n:coeff") from None
        if n < 1:
            raise ConfigError(f"mode index must be >= 1, got {n}")
        modes.append((n, c))
    return modes


def write_state_csv(y: HybridState, path) -> None:
    """Columns ``x, value, region``; u and v rows, then one ``z`` row at x = 0."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "value", "region"])
        for x, val in zip(y.x_u, y.u):
            w.writerow([f"{x:.17g}", f"{val:.17g}", "u"])
        for x, val in zip(y.x_v, y.v):
            w.writerow([f"{x:.17g}", f"{val:.17g}", "v"])
        w.writerow(["0", f"{y.z:.17g}", "z"])


def read_state_csv(path) -> HybridState:
    rows = {"u": [], "v": [], "z": []}
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            region = rec["region"].strip()
            if region not in rows:
                raise ConfigError(f"{path}: unknown region {region!r}")
            rows[region].append((float(rec["x"]), float(rec["value"])))
    if len(rows["z"]) != 1:
        raise ConfigError(f"{path}: expected exactly one z record")
    n = len(rows["u"]) - 1
    if n < 1 or len(rows["v"]) != n + 1:
        raise ConfigError(f"{path}: u and v need the same number of samples")
    u = np.array([v for _, v in sorted(rows["u"])])
    v = np.array([v for _, v in sorted(rows["v"])])
    return HybridState(u, v, rows["z"][0][1], n)


def _fmt(x) -> str:
    return "" if x is None else f"{x:.17g}"


def _kind_name(kind: ModeKind) -> str:
    return kind.value


def _initial_state(opts, case, mesh_n) -> HybridState:
    if opts["state"]:
        return read_state_csv(opts["state"])
    return state_from_modes(case, parse_modes(opts["modes"]), mesh_n)


def _outdir(opts) -> Path:
    out = Path(opts["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_spectrum(opts) -> int:
    case = BoundaryCase.parse(opts["case"])
    n_max = opts["n_max"]
    if n_max < 1:
        raise ConfigError("n_max must be >= 1")
    pairs = eigenpairs(case, n_max + 1)
    rows = []
    for i, p in enumerate(pairs[:n_max]):
        gap = p.lam - pairs[i + 1].lam if i + 1 < n_max else None
        dev = None if p.kind is ModeKind.DIRICHLET_EVEN else asymptotic_deviation(case, p.k)
        rows.append({"n": p.n, "kind": _kind_name(p.kind), "mu": p.frequency, "lambda": p.lam,
                     "norm_sq": p.norm_sq, "b": p.b, "gap_to_next": gap,
                     "asymptotic_deviation": dev})
    out = _outdir(opts)
    cols = ["n", "kind", "mu", "lambda", "norm_sq", "b", "gap_to_next", "asymptotic_deviation"]
    if opts["format"] == "json":
        path = out / "spectrum.json"
        path.write_text(json.dumps(rows, indent=2) + "\n")
    elif opts["format"] == "csv":
        path = out / "spectrum.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for r in rows:
                w.writerow([r["n"], r["kind"]] + [_fmt(r[c]) for c in cols[2:]])
    else:
        raise ConfigError(f"unknown format {opts['format']!r}; expected csv or json")
    print(f"{case.value}: {n_max} modes written to {path}")
    if case is BoundaryCase.NEUMANN:
        print(f"fitted Neumann asymptotic coefficient: {fit_neumann_coefficient():.4f} "
              "(mu_k - (k-1) pi/2 ~ c/(k pi))")
    return 0


def _weight(opts) -> mom.Weight:
    return mom.Weight(opts["weight_p"], opts["weight_q"])


def cmd_control(opts) -> int:
    case = BoundaryCase.parse(opts["case"])
    y0 = _initial_state(opts, case, opts["mesh_n"] or 256)
    a = project(y0, case, opts["N"])
    sysm = mom.assemble(case, a, opts["T"])
    try:
        f = mom.solve_min_norm(sysm, weight=_weight(opts), precision=opts["precision"])
    except mom.ConditioningError as exc:
        print(f"error: {exc}", file=sys.stderr)
        print("advisory: the exponential Gram system is too ill-conditioned; use a smaller N, "
              "a longer horizon T or --precision extended", file=sys.stderr)
        return 2
    out = _outdir(opts)
    f.to_csv(out / "control.csv")
    f.to_json(out / "control.json")
    res = np.abs(f.residuals).max() if f.residuals is not None and f.residuals.size else 0.0
    cond = "n/a (zero targets)" if f.condition is None else f"{f.condition:.3e}"
    print(f"condition estimate: {cond} ({f.precision})")
    print(f"max moment residual: {res:.3e}")
    print(f"control L2 norm: {f.l2_norm():.6e}")
    print(f"wrote {out / 'control.csv'} and {out / 'control.json'}")
    return 0


def cmd_verify(opts) -> int:
    case = BoundaryCase.parse(opts["case"])
    mesh_n = opts["mesh_n"] or 256
    y0 = _initial_state(opts, case, mesh_n)
    cfg = FdConfig(y0.mesh_n, opts["dt"], opts["scheme"], opts["T"], opts["order"])
    try:
        rep = null_control_verify(case, y0, opts["T"], opts["N"], cfg, weight=_weight(opts),
                                  precision=opts["precision"], seed=opts["seed"],
                                  b_sign=-1.0 if opts.get("debug_flip_b_sign") else 1.0)
    except VerificationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        if isinstance(exc.cause, mom.ConditioningError):
            print("advisory: the exponential Gram system is too ill-conditioned; use a smaller "
                  "N or a longer horizon T", file=sys.stderr)
        return 2
    out = _outdir(opts)
    path = out / "report.json"
    rep.write(path)
    rel = rep.final_norm_fd / rep.initial_norm if rep.initial_norm else 0.0
    modal = max((abs(x) for x in rep.final_modal), default=0.0)
    print(f"{case.value} T={rep.T} N={rep.N}: {'PASS' if rep.passed else 'FAIL'}")
    print(f"  |y(T)|/|y0| (FD)      = {rel:.3e}  (tol {rep.tolerances['fd']:.0e})")
    print(f"  max modal |a_n(T)|    = {modal:.3e}  (tol {rep.tolerances['modal']:.0e} |y0|)")
    print(f"  duality gap           = {rep.duality_gap:.3e}")
    cond = "n/a" if rep.gram_condition is None else f"{rep.gram_condition:.3e}"
    print(f"  Gram condition        = {cond} ({rep.precision})")
    print(f"  control L2 norm       = {rep.control_norm:.6e}")
    print(f"report: {path}")
    return 0 if rep.passed else 1


def cmd_epsilon(opts) -> int:
    try:
        eps_list = [float(s) for s in opts["eps"].split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"bad eps list {opts['eps']!r}") from None
    if not eps_list:
        raise ConfigError("eps list is empty")
    mesh_n = opts["mesh_n"] or 200
    y0 = _initial_state(opts, BoundaryCase.DIRICHLET, mesh_n)
    cfg = FdConfig(y0.mesh_n, opts["dt"], opts["scheme"], opts["t_star"], opts["order"])
    try:
        errs = [epsilon_error(e, y0, cfg) for e in eps_list]
    except ResolutionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out = _outdir(opts)
    path = out / "epsilon.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["eps", "t_star", "error_H"])
        for e, err in zip(eps_list, errs):
            w.writerow([_fmt(e), _fmt(opts["t_star"]), _fmt(err)])
    for e, err in zip(eps_list, errs):
        print(f"eps={e:<8g} error_H={err:.6e}")
    if len(errs) > 1:
        order = np.argsort(eps_list)[::-1]
        seq = [errs[i] for i in order]
        trend = all(b < a for a, b in zip(seq, seq[1:]))
        print("trend: error decreases with eps" if trend else "trend: error not monotone in eps")
    print(f"wrote {path}")
    return 0


COMMANDS = {"spectrum": cmd_spectrum, "control": cmd_control, "verify": cmd_verify,
            "epsilon": cmd_epsilon}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("common options")
    g.add_argument("--config", help="key = value file; command-line options override it")
    g.add_argument("--case", choices=["dirichlet", "neumann"])
    g.add_argument("--T", type=float, help="control horizon (default 0.5)")
    g.add_argument("--N", type=int, help="number of controlled modes (default 10)")
    g.add_argument("--mesh-n", dest="mesh_n", type=int, help="grid intervals per unit length")
    g.add_argument("--dt", type=float, help="time step (default 1e-3)")
    g.add_argument("--scheme", help="radau (default), crank_nicolson or backward_euler")
    g.add_argument("--order", type=int, choices=[2, 4], help="spatial order (default 4)")
    g.add_argument("--precision", choices=["auto", "double", "extended"])
    g.add_argument("--seed", type=int)
    g.add_argument("--out", help="output directory (default .)")
    g.add_argument("--weight-p", dest="weight_p", type=int, help="control weight exponent at t=T")
    g.add_argument("--weight-q", dest="weight_q", type=int, help="control weight exponent at t=0")
    g.add_argument("--modes", help=f"initial data as n:coeff list (default {STANDARD_MODES})")
    g.add_argument("--state", help="initial data CSV (x, value, region)")

    p = argparse.ArgumentParser(prog="heatmass", description=__doc__.split("\n\n")[0])
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("spectrum", parents=[common], help="eigenvalue table")
    s.add_argument("--n-max", dest="n_max", type=int)
    s.add_argument("--format", choices=["csv", "json"])
    sub.add_parser("control", parents=[common], help="synthesize the null control")
    v = sub.add_parser("verify", parents=[common], help="synthesize and verify with FD")
    v.add_argument("--debug-flip-b-sign", dest="debug_flip_b_sign", action="store_true",
                   help="negate the input coefficients (must fail)")
    e = sub.add_parser("epsilon", parents=[common], help="eps-density limit study")
    e.add_argument("--eps", help="comma separated eps values (default 0.2,0.1,0.05)")
    e.add_argument("--t-star", dest="t_star", type=float, help="comparison time (default 0.1)")
    return p


def resolve_options(args) -> dict:
    opts = {k: d for k, (_, d) in OPTIONS.items()}
    if args.config:
        opts.update(read_config(args.config))
    for k in OPTIONS:
        val = getattr(args, k, None)
        if val is not None:
            opts[k] = val
    opts["debug_flip_b_sign"] = getattr(args, "debug_flip_b_sign", False)
    BoundaryCase.parse(opts["case"])
    return opts


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        opts = resolve_options(args)
        return COMMANDS[args.command](opts)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
