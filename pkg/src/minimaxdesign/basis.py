"""Approximation space: basis functions, moment matrix, leverage function h.

Everything downstream (designs, risks, estimators) is a function of a
:class:`BasisContext`.  The reference weight ``lam`` is the density that
weighs the estimation error over the support; with the default uniform
weight on ``[-1, 1]`` it is the constant 1/2.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np
from scipy import linalg
from scipy.optimize import minimize_scalar
from scipy.special import ndtr

from .errors import (
    CalibrationError,
    ConfigError,
    DegenerateBasisError,
    DegenerateDesignError,
    DomainError,
    InvalidWeightError,
)
from .quadrature import DEFAULT_NODES, integrate, integrate_pieces

MAX_BASIS_SIZE = 16
CONDITION_WARNING = 1e10
SCAN_POINTS = 4096
TABLE_POINTS = 4096
_SUPPORT_SLACK = 1e-12


# ---------------------------------------------------------------------------
# Reference weights
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class UniformWeight:
    a: float
    b: float

    def __call__(self, x):
        return np.full(np.shape(x), 1.0 / (self.b - self.a))

    def to_dict(self):
        return {"kind": "uniform"}


@dataclass(frozen=True)
class TruncatedNormalWeight:
    """Normal(mean, var) restricted to ``[a, b]``; ``var`` is the variance."""

    mean: float
    var: float
    a: float
    b: float

    def __post_init__(self):
        if not self.var > 0:
            raise InvalidWeightError(f"truncated normal variance must be positive, got {self.var}")

    @property
    def sd(self):
        return math.sqrt(self.var)

    @property
    def mass(self):
        return float(ndtr((self.b - self.mean) / self.sd) - ndtr((self.a - self.mean) / self.sd))

    def __call__(self, x):
        z = (np.asarray(x, dtype=float) - self.mean) / self.sd
        return np.exp(-0.5 * z * z) / (math.sqrt(2.0 * math.pi) * self.sd * self.mass)

    def to_dict(self):
        return {"kind": "truncnorm", "mean": self.mean, "var": self.var}


@dataclass(frozen=True)
class CallableWeight:
    """User-supplied density; not serialisable."""

    func: Callable
    label: str = "callable"

    def __call__(self, x):
        return np.asarray(self.func(np.asarray(x, dtype=float)), dtype=float) * np.ones(np.shape(x))

    def to_dict(self):
        raise ConfigError(f"weight '{self.label}' was given as a Python callable and cannot be serialised")


def make_weight(spec, support):
    """Turn a weight spec (None, dict, callable or weight object) into a weight."""
    a, b = support
    if spec is None:
        return UniformWeight(a, b)
    if isinstance(spec, (UniformWeight, TruncatedNormalWeight, CallableWeight)):
        return spec
    if callable(spec):
        return CallableWeight(spec)
    if isinstance(spec, dict):
        spec = dict(spec)
        kind = spec.pop("kind", None)
        if kind == "uniform":
            allowed = set()
        elif kind == "truncnorm":
            allowed = {"mean", "var"}
        else:
            raise ConfigError(f"unknown weight kind {kind!r}; expected 'uniform' or 'truncnorm'")
        extra = set(spec) - allowed
        if extra:
            raise ConfigError(f"unknown weight key(s): {', '.join(sorted(extra))}")
        if kind == "uniform":
            return UniformWeight(a, b)
        try:
            return TruncatedNormalWeight(float(spec["mean"]), float(spec["var"]), a, b)
        except KeyError as exc:
            raise ConfigError(f"truncnorm weight missing key {exc.args[0]!r}") from None
    raise ConfigError(f"cannot interpret weight spec {spec!r}")


# ---------------------------------------------------------------------------
# Basis functions
# ---------------------------------------------------------------------------

_EXPR_NAMESPACE = {
    name: getattr(np, name)
    for name in ("sin", "cos", "tan", "exp", "log", "sqrt", "abs", "sinh", "cosh", "tanh", "arctan", "pi")
}


def _compile_expression(expr):
    code = compile(expr, f"<basis:{expr}>", "eval")
    for name in code.co_names:
        if name != "x" and name not in _EXPR_NAMESPACE:
            raise ConfigError(f"basis expression {expr!r} uses unknown name {name!r}")

    def func(x):
        return eval(code, {"__builtins__": {}}, {**_EXPR_NAMESPACE, "x": x})

    return func


@dataclass(frozen=True)
class BasisContext:
    """Basis, support, reference weight and the derived moment matrix.

    Attributes
    ----------
    kind : str
        ``"monomial"`` or ``"functions"``.
    degree : int or None
        Polynomial degree K for monomial bases.
    support : tuple of float
        Closed interval ``(a, b)``.
    weight : callable
        Reference density on the support.
    Q, Q_inv : ndarray
        Moment matrix ``int x^T x lam dx`` and its inverse.
    """

    kind: str
    degree: int | None
    support: tuple
    weight: object
    functions: tuple
    expressions: tuple | None
    Q: np.ndarray = field(repr=False)
    Q_inv: np.ndarray = field(repr=False)
    quadrature_nodes: int = DEFAULT_NODES

    @property
    def k(self):
        return self.Q.shape[0]

    @property
    def a(self):
        return self.support[0]

    @property
    def b(self):
        return self.support[1]

    @property
    def length(self):
        return self.support[1] - self.support[0]

    def design_matrix(self, x):
        """Rows are the basis vectors at each abscissa, shape ``(len(x), k)``."""
        x = np.asarray(x, dtype=float)
        if self.kind == "monomial":
            return np.vander(x.ravel(), self.degree + 1, increasing=True)
        cols = [np.broadcast_to(np.asarray(f(x.ravel()), dtype=float), x.ravel().shape) for f in self.functions]
        return np.column_stack(cols)

    def lam(self, x):
        return self.weight(np.asarray(x, dtype=float))

    def h(self, x):
        """Leverage function ``4 x^T Q^-1 x lam(x)^2`` without a domain check."""
        x = np.asarray(x, dtype=float)
        V = self.design_matrix(x)
        quad_form = np.einsum("ij,jk,ik->i", V, self.Q_inv, V)
        lam = self.lam(x.ravel())
        return (4.0 * quad_form * lam * lam).reshape(x.shape)

    def integrate(self, func, breaks=None):
        """Integrate over the support, optionally splitting at interior ``breaks``."""
        if breaks is None:
            return integrate(func, self.a, self.b, self.quadrature_nodes)
        pts = np.unique(np.clip(np.concatenate([[self.a, self.b], np.asarray(breaks, float)]), self.a, self.b))
        return integrate_pieces(func, pts, self.quadrature_nodes)

    @cached_property
    def _h_extrema(self):
        grid = np.linspace(self.a, self.b, SCAN_POINTS + 1)
        hv = self.h(grid)
        minima, maxima = [], []
        for i in range(1, len(grid) - 1):
            lo, hi = grid[i - 1], grid[i + 1]
            if hv[i] <= hv[i - 1] and hv[i] <= hv[i + 1] and not hv[i] == hv[i - 1] == hv[i + 1]:
                res = minimize_scalar(lambda t: float(self.h(np.array([t]))[0]), bounds=(lo, hi),
                                      method="bounded", options={"xatol": 1e-13})
                minima.append(float(res.x))
            elif hv[i] >= hv[i - 1] and hv[i] >= hv[i + 1] and not hv[i] == hv[i - 1] == hv[i + 1]:
                res = minimize_scalar(lambda t: -float(self.h(np.array([t]))[0]), bounds=(lo, hi),
                                      method="bounded", options={"xatol": 1e-13})
                maxima.append(float(res.x))
        candidates = np.array([self.a, self.b, *minima, *maxima])
        hc = self.h(candidates)
        return {
            "h_min": float(min(hc.min(), hv.min())),
            "h_max": float(max(hc.max(), hv.max())),
            "critical_points": tuple(sorted(set(minima + maxima))),
        }

    @property
    def h_min(self):
        return self._h_extrema["h_min"]

    @property
    def h_max(self):
        return self._h_extrema["h_max"]

    @property
    def critical_points(self):
        """Interior local extrema of h, refined to ~1e-13."""
        return self._h_extrema["critical_points"]

    def check_in_support(self, x):
        x = np.asarray(x, dtype=float)
        if np.any(~np.isfinite(x)) or np.any(x < self.a - _SUPPORT_SLACK) or np.any(x > self.b + _SUPPORT_SLACK):
            raise DomainError(f"x outside support [{self.a}, {self.b}]")

    def to_dict(self):
        out = {"kind": self.kind}
        if self.kind == "monomial":
            out["degree"] = self.degree
        else:
            if self.expressions is None:
                raise ConfigError("basis built from Python callables cannot be serialised")
            out["functions"] = list(self.expressions)
        out["support"] = list(self.support)
        out["weight"] = self.weight.to_dict()
        out["quadrature_nodes"] = self.quadrature_nodes
        return out


def build_basis_context(kind="monomial", support=(-1.0, 1.0), weight=None,
                        quadrature_nodes=DEFAULT_NODES, degree=None, functions=None):
    """Assemble the moment matrix for a basis and verify it is positive definite.

    Parameters
    ----------
    kind : {"monomial", "functions"} or int
        An int is shorthand for a monomial basis of that degree.
    support : (a, b)
    weight : None, dict, callable or weight object
        Reference density; default uniform.
    degree : int
        Polynomial degree K for ``kind="monomial"``.
    functions : sequence of callables or expression strings
        Basis functions for ``kind="functions"``.

    Raises
    ------
    DegenerateBasisError
        If the moment matrix is not positive definite.
    InvalidWeightError
        If the weight is not a positive density on the support.
    """
    if isinstance(kind, (int, np.integer)) and not isinstance(kind, bool):
        kind, degree = "monomial", int(kind)
    a, b = (float(s) for s in support)
    if not (np.isfinite(a) and np.isfinite(b) and b > a):
        raise DomainError(f"support must be a nonempty finite interval, got {support!r}")
    quadrature_nodes = int(quadrature_nodes)
    if quadrature_nodes < 1:
        raise ConfigError("quadrature_nodes must be positive")

    expressions = None
    if kind == "monomial":
        if degree is None or int(degree) < 0:
            raise ConfigError("monomial basis needs a degree >= 0")
        degree = int(degree)
        funcs = tuple((lambda j: (lambda x: np.asarray(x, dtype=float) ** j))(j) for j in range(degree + 1))
    elif kind == "functions":
        if not functions:
            raise DegenerateBasisError("basis needs at least one function")
        if all(isinstance(f, str) for f in functions):
            expressions = tuple(functions)
            funcs = tuple(_compile_expression(e) for e in functions)
        else:
            funcs = tuple(functions)
        degree = None
    else:
        raise ConfigError(f"unknown basis kind {kind!r}")
    k = len(funcs)
    if k > MAX_BASIS_SIZE:
        raise ConfigError(f"basis size {k} exceeds the cap of {MAX_BASIS_SIZE}")

    lam = make_weight(weight, (a, b))
    probe = np.linspace(a, b, SCAN_POINTS + 1)
    lam_vals = lam(probe)
    if np.any(~np.isfinite(lam_vals)) or np.any(lam_vals <= 0):
        raise InvalidWeightError("weight must be finite and strictly positive on the support")
    mass = float(integrate(lam, a, b, quadrature_nodes))
    if abs(mass - 1.0) > 1e-10:
        raise InvalidWeightError(f"weight integrates to {mass!r}, not 1")

    ctx = BasisContext(kind=kind, degree=degree, support=(a, b), weight=lam, functions=funcs,
                       expressions=expressions, Q=np.eye(k), Q_inv=np.eye(k),
                       quadrature_nodes=quadrature_nodes)

    def outer(x):
        V = ctx.design_matrix(x)
        return V[:, :, None] * V[:, None, :] * lam(x)[:, None, None]

    Q = integrate(outer, a, b, quadrature_nodes)
    Q = 0.5 * (Q + Q.T)
    eig = np.linalg.eigvalsh(Q)
    if not eig[0] > 1e-12 * max(eig[-1], 1.0):
        raise DegenerateBasisError(f"moment matrix is not positive definite (smallest eigenvalue {eig[0]:.3e})")
    cond = eig[-1] / eig[0]
    if cond > CONDITION_WARNING:
        warnings.warn(f"moment matrix condition number {cond:.2e} exceeds {CONDITION_WARNING:.0e}",
                      RuntimeWarning, stacklevel=2)
    try:
        factor = linalg.cho_factor(Q)
    except linalg.LinAlgError as exc:
        raise DegenerateBasisError(str(exc)) from None
    Q_inv = linalg.cho_solve(factor, np.eye(k))
    Q_inv = 0.5 * (Q_inv + Q_inv.T)
    Q.setflags(write=False)
    Q_inv.setflags(write=False)
    return BasisContext(kind=kind, degree=degree, support=(a, b), weight=lam, functions=funcs,
                        expressions=expressions, Q=Q, Q_inv=Q_inv, quadrature_nodes=quadrature_nodes)


def basis_from_dict(cfg):
    cfg = dict(cfg)
    allowed = {"kind", "degree", "functions", "support", "weight", "quadrature_nodes"}
    extra = set(cfg) - allowed
    if extra:
        raise ConfigError(f"unknown basis key(s): {', '.join(sorted(extra))}")
    kind = cfg.get("kind", "monomial")
    return build_basis_context(
        kind=kind,
        degree=cfg.get("degree"),
        functions=cfg.get("functions"),
        support=tuple(cfg.get("support", (-1.0, 1.0))),
        weight=cfg.get("weight"),
        quadrature_nodes=cfg.get("quadrature_nodes", DEFAULT_NODES),
    )


def evaluate_h(ctx, x):
    """Leverage function ``h(x) = 4 x^T Q^-1 x lam(x)^2``.

    With the uniform weight on ``[-1, 1]`` this is ``x^T Q^-1 x``.  Scalars in,
    scalars out.
    """
    ctx.check_in_support(x)
    out = ctx.h(x)
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# Mean functions and best linear approximations
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MeanFunction:
    """Conditional mean ``m(x)``: polynomial coefficients or a tabulated curve."""

    coefficients: tuple | None = None
    grid: np.ndarray | None = field(default=None, repr=False)
    values: np.ndarray | None = field(default=None, repr=False)
    description: str = ""

    @classmethod
    def polynomial(cls, coefficients, description=""):
        coefficients = tuple(float(c) for c in coefficients)
        if not description:
            description = " + ".join(f"{c:g}*x^{j}" for j, c in enumerate(coefficients) if c != 0) or "0"
        return cls(coefficients=coefficients, description=description)

    @classmethod
    def tabulate(cls, func, support, points=TABLE_POINTS, description="tabulated"):
        grid = np.linspace(support[0], support[1], points)
        values = np.asarray(func(grid), dtype=float) * np.ones_like(grid)
        return cls(grid=grid, values=values, description=description)

    @property
    def degree(self):
        return None if self.coefficients is None else len(self.coefficients) - 1

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.coefficients is not None:
            return np.polynomial.polynomial.polyval(x, self.coefficients)
        return np.interp(x, self.grid, self.values)

    def to_dict(self):
        if self.coefficients is None:
            raise ConfigError("tabulated mean functions are not serialisable")
        return {"coefficients": list(self.coefficients), "description": self.description}


def as_mean(m):
    """Accept a MeanFunction, coefficient sequence or callable."""
    if isinstance(m, MeanFunction) or callable(m):
        return m
    return MeanFunction.polynomial(m)


def mean_from_dict(cfg, ctx=None):
    """Build a mean function from config.

    Either ``coefficients`` (low to high degree), or ``template`` plus
    ``calibrate_target``: the template's last coefficient is replaced by the
    value that puts the deviation norm at the target.
    """
    cfg = dict(cfg)
    allowed = {"coefficients", "template", "calibrate_target", "description"}
    extra = set(cfg) - allowed
    if extra:
        raise ConfigError(f"unknown mean key(s): {', '.join(sorted(extra))}")
    if "coefficients" in cfg and "template" in cfg:
        raise ConfigError("mean: give either 'coefficients' or 'template', not both")
    if "template" in cfg:
        if ctx is None:
            raise ConfigError("mean template calibration needs a basis")
        template = [float(c) for c in cfg["template"]]
        target = float(cfg.get("calibrate_target", 1.0))
        return calibrate_leading_coefficient(template[:-1], ctx, target=target, degree=len(template) - 1)
    if "coefficients" not in cfg:
        raise ConfigError("mean needs 'coefficients' or 'template'")
    return MeanFunction.polynomial(cfg["coefficients"], cfg.get("description", ""))


def best_linear_coefficients(m, ctx):
    """Coefficients of the projection of ``m`` onto the basis under ``lam``."""
    m = as_mean(m)
    moments = ctx.integrate(lambda x: ctx.design_matrix(x) * (m(x) * ctx.lam(x))[:, None])
    return linalg.cho_solve((linalg.cholesky(ctx.Q), False), moments)


def best_linear_coefficients_under_design(m, design, ctx):
    """Limit of ordinary least squares when predictors are drawn from ``design``.

    Raises
    ------
    DegenerateDesignError
        If the design's moment matrix is singular.
    """
    m = as_mean(m)
    if hasattr(design, "integrate"):
        dens, integ = design.density, design.integrate
    else:
        dens, integ = design, ctx.integrate

    def weighted_outer(x):
        V = ctx.design_matrix(x)
        return V[:, :, None] * V[:, None, :] * dens(x)[:, None, None]

    Q_pi = integ(weighted_outer)
    moments = integ(lambda x: ctx.design_matrix(x) * (m(x) * dens(x))[:, None])
    eig = np.linalg.eigvalsh(0.5 * (Q_pi + Q_pi.T))
    if not eig[0] > 1e-12 * max(eig[-1], 1.0):
        raise DegenerateDesignError("design moment matrix is singular")
    return np.linalg.solve(Q_pi, moments)


def linear_approximation(beta, ctx):
    """Return the callable ``x -> x_vec(x) @ beta``."""
    beta = np.asarray(beta, dtype=float)
    return lambda x: ctx.design_matrix(x) @ beta


def deviation_norm(m, ctx, beta=None):
    """Half the unweighted integral of ``(m - l)^2`` over the support."""
    m = as_mean(m)
    if beta is None:
        beta = best_linear_coefficients(m, ctx)
    ell = linear_approximation(beta, ctx)
    return float(0.5 * ctx.integrate(lambda x: (m(x) - ell(x)) ** 2))


def calibrate_leading_coefficient(base_coefficients, ctx, target=1.0, degree=None):
    """Choose the leading coefficient ``c`` of ``base + c x^degree`` so the deviation norm hits ``target``.

    ``base_coefficients`` are the fixed lower-order polynomial coefficients;
    ``degree`` defaults to ``len(base_coefficients)``.  When the base lies in
    the basis span the answer is ``sqrt(target / unit_deviation)``; otherwise
    the nonnegative root of the quadratic in ``c`` is returned.

    Raises
    ------
    CalibrationError
        If ``x^degree`` already lies in the span or the target is unreachable.
    """
    base = [float(c) for c in base_coefficients]
    if degree is None:
        degree = len(base)
    if degree < len(base):
        raise CalibrationError("leading degree must exceed the base polynomial's degree")
    if target < 0:
        raise CalibrationError("target deviation must be nonnegative")
    lead = [0.0] * degree + [1.0]
    base_poly = MeanFunction.polynomial(base or [0.0])
    lead_poly = MeanFunction.polynomial(lead)
    r_lead = _residual(lead_poly, ctx)
    r_base = _residual(base_poly, ctx)
    qa = 0.5 * ctx.integrate(lambda x: r_lead(x) ** 2)
    qb = 0.5 * ctx.integrate(lambda x: r_lead(x) * r_base(x))
    qc = 0.5 * ctx.integrate(lambda x: r_base(x) ** 2)
    if qa <= 1e-14:
        raise CalibrationError(f"x^{degree} lies in the basis span; its deviation cannot be scaled")
    disc = qb * qb - qa * (qc - target)
    if disc < 0:
        raise CalibrationError(f"target {target} is below the base deviation {qc:.6g}")
    c = (-qb + math.sqrt(disc)) / qa
    coeffs = base + [0.0] * (degree - len(base)) + [c]
    return MeanFunction.polynomial(coeffs)


def _residual(m, ctx):
    ell = linear_approximation(best_linear_coefficients(m, ctx), ctx)
    return lambda x: m(x) - ell(x)


def monomial_context(degree, **kwargs):
    """Shorthand for the monomial basis of ``degree`` on ``[-1, 1]`` with uniform weight."""
    return build_basis_context("monomial", degree=degree, **kwargs)

