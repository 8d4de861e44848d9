"""Design densities: level sets of h, the threshold equation, and the minimax design.

The minimax design for noise-to-deviation ratio ``sigma2`` is proportional
to ``sqrt(h0 * h)`` where ``h <= h0`` and to ``h`` elsewhere, with the
threshold ``h0`` solving ``f(h0) = -2 / sigma2``.  Below the critical ratio
``sigma2_min`` it collapses to the design proportional to ``h``; at
``sigma2 = inf`` it is proportional to ``sqrt(h)``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import ConfigError, DegenerateDesignError, DomainError, NumericalError
from .quadrature import gauss_legendre

FAMILIES = ("uniform", "prop-h", "sqrt-h", "minimax", "custom-table")
CDF_POINTS = 8192
SCAN_POINTS = 4096
CROSSING_TOL = 1e-12
THRESHOLD_TOL = 1e-12
MIN_INTERVAL = 1e-9
TABLE_CELL_NODES = 4


@dataclass(frozen=True)
class LevelSetPartition:
    """Sublevel set ``A = {h <= h0}`` and superlevel set ``B = {h > h0}`` as interval lists."""

    h0: float
    A: tuple
    B: tuple
    boundary_points: tuple

    def to_dict(self):
        return {
            "h0": self.h0,
            "A": [list(iv) for iv in self.A],
            "B": [list(iv) for iv in self.B],
            "boundary_points": list(self.boundary_points),
        }


def _parse_sigma2(sigma2):
    if isinstance(sigma2, str):
        if sigma2.strip().lower() in ("inf", "infinity", "+inf"):
            return math.inf
        try:
            sigma2 = float(sigma2)
        except ValueError:
            raise ConfigError(f"cannot parse sigma2 {sigma2!r}") from None
    sigma2 = float(sigma2)
    if not sigma2 > 0 or math.isnan(sigma2):
        raise DomainError(f"sigma2 must be positive (or 'inf'), got {sigma2!r}")
    return sigma2


def _check_h0(ctx, h0):
    scale = max(abs(ctx.h_max), 1.0)
    if not (ctx.h_min - 1e-12 * scale <= h0 <= ctx.h_max + 1e-12 * scale):
        raise DomainError(f"h0={h0!r} outside [h_min, h_max] = [{ctx.h_min}, {ctx.h_max}]")


def _refine_crossings(ctx, lo, hi, h0):
    """Vectorised bisection on the predicate ``h(x) > h0``; ``lo`` and ``hi`` bracket a switch."""
    lo = np.array(lo, dtype=float)
    hi = np.array(hi, dtype=float)
    if lo.size == 0:
        return lo
    above_lo = ctx.h(lo) > h0
    while np.max(hi - lo) > CROSSING_TOL:
        mid = 0.5 * (lo + hi)
        same = (ctx.h(mid) > h0) == above_lo
        lo = np.where(same, mid, lo)
        hi = np.where(same, hi, mid)
    return 0.5 * (lo + hi)


def level_partition(ctx, h0):
    """Split the support into ``A = {h <= h0}`` and ``B = {h > h0}``.

    Crossings are located by scanning a 4096-cell grid (augmented with the
    interior extrema of h) for switches of ``h > h0`` and bisecting each
    bracket.  Intervals shorter than ``MIN_INTERVAL`` (tangencies) are dropped.
    """
    h0 = float(h0)
    _check_h0(ctx, h0)
    grid = np.union1d(np.linspace(ctx.a, ctx.b, SCAN_POINTS + 1), np.asarray(ctx.critical_points, float))
    above = ctx.h(grid) > h0
    idx = np.nonzero(above[:-1] != above[1:])[0]
    crossings = _refine_crossings(ctx, grid[idx], grid[idx + 1], h0)

    pts = [ctx.a, *crossings.tolist(), ctx.b]
    cells = []
    for lo, hi in zip(pts[:-1], pts[1:]):
        if hi - lo < MIN_INTERVAL:
            continue
        in_b = bool(ctx.h(np.array([0.5 * (lo + hi)]))[0] > h0)
        if cells and cells[-1][2] == in_b:
            cells[-1] = (cells[-1][0], hi, in_b)
        else:
            # start at the previous cell's end so dropped slivers are absorbed
            cells.append((cells[-1][1] if cells else ctx.a, hi, in_b))
    if cells:
        cells[-1] = (cells[-1][0], ctx.b, cells[-1][2])
    A = tuple((lo, hi) for lo, hi, in_b in cells if not in_b)
    B = tuple((lo, hi) for lo, hi, in_b in cells if in_b)
    boundary = tuple(hi for lo, hi, _ in cells[:-1])
    return LevelSetPartition(h0=h0, A=A, B=B, boundary_points=boundary)


def f_value(ctx, h0, partition=None):
    """``f(h0) = int_B (h0 - h) dx / h0``; nonpositive and nondecreasing in ``h0``."""
    if partition is None:
        partition = level_partition(ctx, h0)
    h0 = partition.h0
    total = 0.0
    for lo, hi in partition.B:
        x, w = gauss_legendre(lo, hi, ctx.quadrature_nodes)
        total += float(w @ (h0 - ctx.h(x)))
    return total / h0


def sigma2_min(ctx):
    """Critical ratio ``-2 / f(h_min)`` below which the minimax design is proportional to h."""
    return -2.0 / f_value(ctx, ctx.h_min)


def sigma2_min_closed_form(ctx):
    """Same quantity as :func:`sigma2_min` via ``2 / (int h dx / h_min - |S|)``."""
    int_h = float(ctx.integrate(ctx.h))
    return 2.0 / (int_h / ctx.h_min - ctx.length)


def solve_threshold(ctx, sigma2):
    """Threshold ``h0*`` with ``f(h0*) = -2 / sigma2``.

    Returns ``h_min`` when ``sigma2 <= sigma2_min`` and ``h_max`` for
    ``sigma2 = inf``.  Bisection exploits the monotonicity of ``f``.
    """
    sigma2 = _parse_sigma2(sigma2)
    if math.isinf(sigma2):
        return ctx.h_max
    target = -2.0 / sigma2
    lo, hi = ctx.h_min, ctx.h_max
    if f_value(ctx, lo) >= target - 1e-12:
        return lo
    while hi - lo > THRESHOLD_TOL * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if f_value(ctx, mid) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# Design densities
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Piece:
    lo: float
    hi: float
    form: str


@dataclass(frozen=True, eq=False)
class DesignDensity:
    """A normalised, strictly positive density on the support with a tabulated CDF.

    ``pieces`` cover the support; each evaluates one of the forms
    ``c*sqrt(h0*h)``, ``c*h``, ``c*sqrt(h)``, ``c`` or ``c*table``.
    """

    family: str
    ctx: object = field(repr=False)
    pieces: tuple
    c: float
    h0: float | None = None
    sigma2: float | None = None
    partition: LevelSetPartition | None = None
    table_x: np.ndarray | None = field(default=None, repr=False)
    table_density: np.ndarray | None = field(default=None, repr=False)
    cdf_x: np.ndarray | None = field(default=None, repr=False)
    cdf_F: np.ndarray | None = field(default=None, repr=False)

    @property
    def support(self):
        return self.ctx.support

    @property
    def name(self):
        if self.family == "minimax":
            s = "inf" if math.isinf(self.sigma2) else f"{self.sigma2:g}"
            return f"minimax({s})"
        return self.family

    @property
    def regime(self):
        """For minimax designs: ``prop-h``, ``mixed`` or ``sqrt-h``."""
        if self.family != "minimax":
            return self.family
        forms = {p.form for p in self.pieces}
        if forms == {"c*h"}:
            return "prop-h"
        if forms == {"c*sqrt(h0*h)"}:
            return "sqrt-h"
        return "mixed"

    @property
    def breakpoints(self):
        """Interior abscissas where the density may have a kink."""
        if self.family == "custom-table":
            return tuple(self.table_x[1:-1])
        return tuple(p.lo for p in self.pieces[1:])

    def density(self, x):
        """Density without a domain check (vectorised)."""
        x = np.asarray(x, dtype=float)
        flat = x.ravel()
        out = np.empty_like(flat)
        if len(self.pieces) == 1:
            which = np.zeros(flat.shape, dtype=int)
        else:
            edges = np.array([p.lo for p in self.pieces[1:]])
            which = np.searchsorted(edges, flat, side="right")
        for j, piece in enumerate(self.pieces):
            sel = which == j
            if not np.any(sel):
                continue
            xs = flat[sel]
            if piece.form == "c":
                out[sel] = self.c
            elif piece.form == "c*h":
                out[sel] = self.c * self.ctx.h(xs)
            elif piece.form == "c*sqrt(h)":
                out[sel] = self.c * np.sqrt(self.ctx.h(xs))
            elif piece.form == "c*sqrt(h0*h)":
                out[sel] = self.c * np.sqrt(self.h0 * self.ctx.h(xs))
            else:
                out[sel] = self.c * np.interp(xs, self.table_x, self.table_density)
        return out.reshape(x.shape)

    __call__ = density

    @cached_property
    def _rule(self):
        if self.family == "custom-table":
            t, w = np.polynomial.legendre.leggauss(TABLE_CELL_NODES)
            lo, hi = self.table_x[:-1, None], self.table_x[1:, None]
            half = 0.5 * (hi - lo)
            return (half * t + 0.5 * (lo + hi)).ravel(), (half * w).ravel()
        xs, ws = [], []
        for p in self.pieces:
            x, w = gauss_legendre(p.lo, p.hi, self.ctx.quadrature_nodes)
            xs.append(x)
            ws.append(w)
        return np.concatenate(xs), np.concatenate(ws)

    def integrate(self, func):
        """Integrate ``func`` over the support with a rule adapted to this design's kinks."""
        x, w = self._rule
        return np.tensordot(w, np.asarray(func(x), dtype=float), axes=(0, 0))

    def mass(self):
        return float(self.integrate(self.density))

    def sup_norm_distance(self, other, points=8193):
        grid = np.linspace(self.ctx.a, self.ctx.b, points)
        return float(np.max(np.abs(self.density(grid) - other.density(grid))))

    def descriptor(self):
        out = {
            "family": self.family,
            "name": self.name,
            "regime": self.regime,
            "support": list(self.support),
            "c": self.c,
            "mass": self.mass(),
        }
        if self.family == "minimax":
            # below the phase transition the solution is exactly prop-h; report it as such
            if self.regime == "prop-h":
                out["family"] = "prop-h"
            out["requested_family"] = "minimax"
            out["sigma2"] = "inf" if math.isinf(self.sigma2) else self.sigma2
            out["sigma2_min"] = sigma2_min(self.ctx)
            out["h0"] = self.h0
            out["A"] = [list(iv) for iv in self.partition.A]
            out["B"] = [list(iv) for iv in self.partition.B]
            out["boundary_points"] = list(self.partition.boundary_points)
        return out


def _finalise(design, cdf_points):
    ctx = design.ctx
    x = np.linspace(ctx.a, ctx.b, cdf_points)
    dens = design.density(x)
    if not np.all(np.isfinite(dens)) or np.min(dens) <= 0:
        raise DegenerateDesignError(f"design {design.name} is not strictly positive on the support")
    F = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(x))])
    if not F[-1] > 0:
        raise NumericalError("design CDF has no mass")
    F /= F[-1]
    if np.any(np.diff(F) <= 0):
        raise NumericalError("design CDF table is not strictly increasing")
    x.setflags(write=False)
    F.setflags(write=False)
    object.__setattr__(design, "cdf_x", x)
    object.__setattr__(design, "cdf_F", F)
    mass = design.mass()
    if abs(mass - 1.0) > 1e-8:
        raise NumericalError(f"design {design.name} integrates to {mass!r}")
    return design


def build_design(ctx, family, sigma2=None, cdf_points=CDF_POINTS):
    """Construct a design density.

    Parameters
    ----------
    ctx : BasisContext
    family : {"uniform", "prop-h", "sqrt-h", "minimax"}
        Use :func:`table_design` for ``custom-table``.
    sigma2 : float or "inf"
        Noise-to-deviation ratio; required for ``minimax``.
    cdf_points : int
        Abscissas in the CDF table.
    """
    a, b = ctx.support
    if family == "uniform":
        design = DesignDensity("uniform", ctx, (Piece(a, b, "c"),), 1.0 / (b - a))
    elif family == "prop-h":
        design = DesignDensity("prop-h", ctx, (Piece(a, b, "c*h"),), 1.0 / float(ctx.integrate(ctx.h)))
    elif family == "sqrt-h":
        norm = float(ctx.integrate(lambda x: np.sqrt(ctx.h(x))))
        design = DesignDensity("sqrt-h", ctx, (Piece(a, b, "c*sqrt(h)"),), 1.0 / norm)
    elif family == "minimax":
        if sigma2 is None:
            raise ConfigError("minimax design needs sigma2")
        design = _minimax_design(ctx, _parse_sigma2(sigma2))
    elif family == "custom-table":
        raise ConfigError("custom-table designs are built with table_design()")
    else:
        raise ConfigError(f"unknown design family {family!r}; expected one of {', '.join(FAMILIES)}")
    return _finalise(design, cdf_points)


def _minimax_design(ctx, sigma2):
    a, b = ctx.support
    if math.isinf(sigma2):
        h0 = ctx.h_max
        partition = LevelSetPartition(h0=h0, A=((a, b),), B=(), boundary_points=())
    else:
        h0 = solve_threshold(ctx, sigma2)
        if h0 == ctx.h_min:
            partition = LevelSetPartition(h0=h0, A=(), B=((a, b),), boundary_points=())
        else:
            partition = level_partition(ctx, h0)
    pieces = sorted([Piece(lo, hi, "c*sqrt(h0*h)") for lo, hi in partition.A]
                    + [Piece(lo, hi, "c*h") for lo, hi in partition.B], key=lambda p: p.lo)
    norm = 0.0
    for p in pieces:
        x, w = gauss_legendre(p.lo, p.hi, ctx.quadrature_nodes)
        hv = ctx.h(x)
        norm += float(w @ (np.sqrt(h0 * hv) if p.form == "c*sqrt(h0*h)" else hv))
    if not norm > 0:
        raise NumericalError("minimax design has no mass")
    design = DesignDensity("minimax", ctx, tuple(pieces), 1.0 / norm, h0=h0, sigma2=sigma2,
                           partition=partition)
    for xb in partition.boundary_points:
        hb = float(ctx.h(np.array([xb]))[0])
        left, right = math.sqrt(h0 * hb), hb
        if abs(left - right) > 1e-6 * max(abs(right), 1e-300):
            raise NumericalError(f"minimax design discontinuous at x={xb}: {left} vs {right}")
    return design


def table_design(ctx, x, density, cdf_points=CDF_POINTS, family="custom-table"):
    """Piecewise-linear design through ``(x, density)``, renormalised to unit mass.

    The table must span the support exactly and be strictly positive.
    """
    x = np.asarray(x, dtype=float)
    d = np.asarray(density, dtype=float)
    if x.ndim != 1 or x.shape != d.shape or x.size < 2:
        raise ConfigError("design table needs matching 1-D x and density columns")
    if np.any(np.diff(x) <= 0):
        raise ConfigError("design table x column must be strictly increasing")
    if abs(x[0] - ctx.a) > 1e-9 or abs(x[-1] - ctx.b) > 1e-9:
        raise ConfigError(f"design table must span the support [{ctx.a}, {ctx.b}]")
    if not np.all(np.isfinite(d)) or np.any(d <= 0):
        raise DegenerateDesignError("design table density must be strictly positive")
    x = x.copy()
    x[0], x[-1] = ctx.a, ctx.b
    mass = float(np.sum(0.5 * (d[1:] + d[:-1]) * np.diff(x)))
    design = DesignDensity(family, ctx, (Piece(ctx.a, ctx.b, "c*table"),), 1.0 / mass,
                           table_x=x, table_density=d.copy())
    return _finalise(design, cdf_points)


# ---------------------------------------------------------------------------
# Evaluation with domain checks
# ---------------------------------------------------------------------------

def density_at(design, x):
    design.ctx.check_in_support(x)
    out = design.density(np.clip(x, design.ctx.a, design.ctx.b))
    return float(out) if np.ndim(out) == 0 else out


def cdf_at(design, x):
    design.ctx.check_in_support(x)
    out = np.interp(x, design.cdf_x, design.cdf_F)
    return float(out) if np.ndim(out) == 0 else out


def quantile(design, u):
    """Inverse CDF by monotone interpolation of the CDF table."""
    u_arr = np.asarray(u, dtype=float)
    if np.any(~np.isfinite(u_arr)) or np.any(u_arr < 0) or np.any(u_arr > 1):
        raise DomainError("quantile level must lie in [0, 1]")
    out = np.interp(u_arr, design.cdf_F, design.cdf_x)
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# Import / export
# ---------------------------------------------------------------------------

def design_to_csv(design, metadata=None):
    """CSV text with columns ``x, density, cdf`` on the CDF grid; metadata as ``#`` lines."""
    buf = io.StringIO()
    for key, value in (metadata or {}).items():
        buf.write(f"# {key}: {value}\n")
    for key, value in design.descriptor().items():
        buf.write(f"# {key}: {value}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["x", "density", "cdf"])
    dens = design.density(design.cdf_x)
    for xi, di, fi in zip(design.cdf_x, dens, design.cdf_F):
        writer.writerow([repr(float(xi)), repr(float(di)), repr(float(fi))])
    return buf.getvalue()


def design_from_csv(ctx, text, cdf_points=CDF_POINTS):
    """Read a design table written by :func:`design_to_csv` (or any x,density CSV)."""
    rows = [line for line in text.splitlines() if line.strip() and not line.lstrip().startswith("#")]
    reader = csv.reader(rows)
    header = [h.strip() for h in next(reader)]
    if "x" not in header or "density" not in header:
        raise ConfigError("design CSV needs 'x' and 'density' columns")
    ix, idens = header.index("x"), header.index("density")
    xs, ds = [], []
    for row in reader:
        xs.append(float(row[ix]))
        ds.append(float(row[idens]))
    return table_design(ctx, xs, ds, cdf_points=cdf_points)


def design_from_dict(ctx, cfg, base_dir=None):
    """Design from a config mapping: ``{family, sigma2?, table?, cdf_points?}``."""
    import pathlib

    cfg = dict(cfg)
    extra = set(cfg) - {"family", "sigma2", "table", "cdf_points", "label"}
    if extra:
        raise ConfigError(f"unknown design key(s): {', '.join(sorted(extra))}")
    family = cfg.get("family")
    cdf_points = int(cfg.get("cdf_points", CDF_POINTS))
    if family == "custom-table":
        if "table" not in cfg:
            raise ConfigError("custom-table design needs 'table'")
        path = pathlib.Path(cfg["table"])
        if base_dir is not None and not path.is_absolute():
            path = pathlib.Path(base_dir) / path
        return design_from_csv(ctx, path.read_text(), cdf_points=cdf_points)
    if family == "minimax" and "sigma2" not in cfg:
        raise ConfigError("minimax design needs 'sigma2'")
    if family != "minimax" and "sigma2" in cfg:
        raise ConfigError(f"design family {family!r} takes no 'sigma2'")
    return build_design(ctx, family, cfg.get("sigma2"), cdf_points=cdf_points)
