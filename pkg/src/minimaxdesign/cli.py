"""Command-line front end.

Subcommands ``design``, ``risk``, ``simulate`` and ``figures`` each read an
optional TOML config and write CSV / text files into ``--out``.  Exit codes:
0 on success, 1 on numerical failure, 2 on configuration errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import pathlib
import sys

import numpy as np

from .basis import (
    MeanFunction,
    basis_from_dict,
    best_linear_coefficients,
    best_linear_coefficients_under_design,
    build_basis_context,
    mean_from_dict,
)
from .config import load_config
from .design import (
    build_design,
    design_from_csv,
    design_from_dict,
    design_to_csv,
    sigma2_min,
    table_design,
)
from .errors import ConfigError, DomainError, MinimaxDesignError
from .risk import RiskReport, omega_trace, worst_case_risk
from .simulation import SimConfig, convergence_study, run_experiment

log = logging.getLogger("minimaxdesign")

_DEFAULT_MEAN = {"template": [0.0, 1.0, 1.0], "calibrate_target": 1.0}


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def _write_csv(path, header, rows, meta=()):
    buf = io.StringIO()
    for line in meta:
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    path.write_text(buf.getvalue())


def _context(cfg):
    return basis_from_dict(cfg.get("basis", {"kind": "monomial", "degree": 1}))


def _sigma2_list(values, ctx):
    out = []
    for v in values:
        if isinstance(v, str) and v.strip().lower() == "min":
            out.append(("min", sigma2_min(ctx)))
        elif isinstance(v, str):
            out.append((v, v))
        else:
            out.append((f"{float(v):g}", float(v)))
    return out


def _safe(name):
    return name.replace("(", "_").replace(")", "").replace("*", "")


# ---------------------------------------------------------------------------
# design
# ---------------------------------------------------------------------------

def cmd_design(cfg, out, args):
    ctx = _context(cfg)
    dcfg = cfg.get("design", {})
    cdf_points = int(dcfg.get("cdf_points", 8192))
    families = dcfg.get("families", ["minimax"])
    sigmas = _sigma2_list(dcfg.get("sigma2", ["min", 2, 3, "inf"]), ctx)
    s2min = sigma2_min(ctx)
    designs = []
    for fam in families:
        if fam == "minimax":
            designs += [(label, build_design(ctx, "minimax", s2, cdf_points)) for label, s2 in sigmas]
        else:
            designs.append((fam, build_design(ctx, fam, cdf_points=cdf_points)))
    for path in dcfg.get("tables", []):
        p = pathlib.Path(path)
        if not p.is_absolute() and args.config:
            p = pathlib.Path(args.config).parent / p
        designs.append((p.stem, design_from_csv(ctx, p.read_text(), cdf_points)))

    meta = {"basis": json.dumps(ctx.to_dict()), "sigma2_min": repr(s2min)}
    descriptors = []
    for label, d in designs:
        stem = f"design_{_safe(d.name)}"
        (out / f"{stem}.csv").write_text(design_to_csv(d, meta))
        desc = d.descriptor()
        desc["sigma2_min"] = s2min
        if d.family == "minimax":
            desc["label"] = label
        (out / f"{stem}.json").write_text(json.dumps(desc, indent=2, default=str) + "\n")
        descriptors.append(desc)
        if not args.quiet:
            if d.family == "minimax":
                A = " U ".join(f"[{lo:.3f}, {hi:.3f}]" for lo, hi in d.partition.A) or "empty"
                print(f"{d.name:<16} regime={d.regime:<7} h0*={d.h0:.6f} c={d.c:.6f} A={A}")
            else:
                print(f"{d.name:<16} c={d.c:.6f}")

    npts = int(dcfg.get("curve_points", 401))
    grid = np.linspace(ctx.a, ctx.b, npts)
    _write_csv(out / "design_curves.csv", ["x"] + [d.name for _, d in designs],
               [[x, *row] for x, row in zip(grid, np.column_stack([d.density(grid) for _, d in designs]))],
               meta=[f"{k}: {v}" for k, v in meta.items()])
    (out / "design_summary.json").write_text(json.dumps(descriptors, indent=2, default=str) + "\n")
    return 0


# ---------------------------------------------------------------------------
# risk
# ---------------------------------------------------------------------------

def cmd_risk(cfg, out, args):
    ctx = _context(cfg)
    m = mean_from_dict(cfg.get("mean", _DEFAULT_MEAN), ctx)
    rcfg = cfg.get("risk", {})
    specs = rcfg.get("designs", [{"family": "uniform"}, {"family": "sqrt-h"}, {"family": "minimax", "sigma2": 1.0}])
    noises = rcfg.get("noise_variance", [1.0])
    if not isinstance(noises, list):
        noises = [noises]
    reports = []
    base_dir = pathlib.Path(args.config).parent if args.config else None
    for spec in specs:
        d = design_from_dict(ctx, spec, base_dir)
        for v in noises:
            reports.append(omega_trace(ctx, d, m, float(v)))
    header = RiskReport.csv_header()
    _write_csv(out / "risk.csv", header, [list(r.to_dict().values()) for r in reports],
               meta=[f"basis: {json.dumps(ctx.to_dict())}", f"mean: {m.description}"])
    (out / "risk.txt").write_text("\n".join(r.to_text() for r in reports))
    if not args.quiet:
        for r in reports:
            print(f"{r.design:<16} noise={r.noise:<6} trace_risk={r.trace_risk:.4f} "
                  f"(variance {r.variance_term:.4f}, bias {r.bias_term:.4f}) worst_case={r.worst_case:.4f}")

    sweep = rcfg.get("worst_case_sigma2")
    if sweep:
        baselines = rcfg.get("baselines", ["uniform", "sqrt-h", "prop-h"])
        fixed = [build_design(ctx, f) for f in baselines]
        rows = []
        for s2 in sweep:
            s2 = float(s2)
            mm = build_design(ctx, "minimax", s2)
            rows.append([s2] + [worst_case_risk(ctx, d, s2) for d in fixed] + [worst_case_risk(ctx, mm, s2)])
        _write_csv(out / "worst_case.csv", ["sigma2", *baselines, "minimax"], rows,
                   meta=[f"basis: {json.dumps(ctx.to_dict())}",
                         "worst_case = sup over unit deviation ball of tr(Q^-1 Omega) = R/2"])
    return 0


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def cmd_simulate(cfg, out, args):
    scfg = dict(cfg.get("simulation", {}))
    conv = scfg.pop("convergence_n", None)
    scfg["basis"] = cfg.get("basis", {"kind": "monomial", "degree": 1})
    scfg["mean"] = cfg.get("mean", {"coefficients": [0.0, 1.0, 3.354]})
    if args.seed is not None:
        scfg["seed"] = args.seed
    if args.workers is not None:
        scfg["workers"] = args.workers
    config = SimConfig.from_dict(scfg)
    result = run_experiment(config)
    (out / "simulation.csv").write_text(result.to_csv())
    (out / "simulation_table.txt").write_text("\n".join(result.header_lines()) + "\n" + result.to_table())
    if not args.quiet:
        print(result.to_table(), end="")
    if conv:
        rows = convergence_study(config, conv)
        keys = list(rows[0])
        _write_csv(out / "convergence.csv", keys, [[r[k] for k in keys] for r in rows],
                   meta=result.header_lines()[:3])
    return 0


# ---------------------------------------------------------------------------
# figures
# ---------------------------------------------------------------------------

def cmd_figures(cfg, out, args):
    fcfg = cfg.get("figures", {})
    npts = int(fcfg.get("points", 401))
    tn = fcfg.get("truncnorm", {"mean": 0.5, "var": 0.25})
    m = MeanFunction.polynomial(fcfg.get("mean", [0.25, 0.5, 0.25]))
    ctx1 = build_basis_context("monomial", degree=1)
    grid = np.linspace(-1.0, 1.0, npts)

    tn_weight = build_basis_context("monomial", degree=1, weight={"kind": "truncnorm", **tn}).weight
    tn_design = table_design(ctx1, np.linspace(-1, 1, 8193), tn_weight(np.linspace(-1, 1, 8193)),
                             family="truncnorm")
    beta = best_linear_coefficients(m, ctx1)
    beta_pi = best_linear_coefficients_under_design(m, tn_design, ctx1)
    X = ctx1.design_matrix(grid)
    meta = [f"m: {m.description}", f"beta (uniform): {list(beta)}",
            f"beta_pi (truncated normal mean={tn['mean']} var={tn['var']}): {list(beta_pi)}"]
    _write_csv(out / "fig1a.csv", ["x", "m", "ell", "ell_pi"],
               [[x, mv, lv, pv] for x, mv, lv, pv in zip(grid, m(grid), X @ beta, X @ beta_pi)], meta=meta)
    _write_csv(out / "fig1b.csv", ["x", "uniform", "truncnorm"],
               [[x, 0.5, t] for x, t in zip(grid, tn_weight(grid))],
               meta=[f"truncated normal mean={tn['mean']} variance={tn['var']}"])

    for K in fcfg.get("degrees", [1, 2]):
        ctx = build_basis_context("monomial", degree=int(K))
        sigmas = _sigma2_list(fcfg.get("sigma2", ["min", 2, 3, "inf"]), ctx)
        designs = [build_design(ctx, "minimax", s2) for _, s2 in sigmas]
        sqrt_design = build_design(ctx, "sqrt-h")
        cols = [d.density(grid) for d in designs] + [sqrt_design.density(grid)]
        header = ["x"] + [f"sigma2={label}" for label, _ in sigmas] + ["sqrt-h"]
        _write_csv(out / f"fig2_K{K}.csv", header, [[x, *row] for x, row in zip(grid, np.column_stack(cols))],
                   meta=[f"K={K}", f"sigma2_min={sigma2_min(ctx)!r}"] +
                   [f"{d.name}: h0={d.h0!r} A={[list(a) for a in d.partition.A]}" for d in designs])
    if not args.quiet:
        print(f"beta={np.round(beta, 6).tolist()} beta_pi={np.round(beta_pi, 6).tolist()}")
        print(f"wrote figure data to {out}")
    return 0


COMMANDS = {"design": cmd_design, "risk": cmd_risk, "simulate": cmd_simulate, "figures": cmd_figures}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(2, f"{self.prog}: error: {message}\n")


def build_parser():
    parser = _Parser(prog="minimaxdesign", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=str, default=None, help="TOML config file")
        p.add_argument("--out", type=str, default=".", help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override the simulation seed")
        p.add_argument("--workers", type=int, default=None, help="worker processes for simulate")
        p.add_argument("--quiet", action="store_true")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config) if args.config else {}
        out = pathlib.Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, out, args)
    except (ConfigError, DomainError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (MinimaxDesignError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
