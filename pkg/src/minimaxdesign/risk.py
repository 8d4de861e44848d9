"""Asymptotic risk of the weighted least squares estimator under a random design.

For a design ``pi`` the leading term of ``n * E int (l_tilde - l)^2 lam`` is

    tr(Q^-1 Omega) = 1/4 int h / pi * (sigma2(x) + (m - l)^2) dx,

and its supremum over the unit misspecification ball is half of the
minimax criterion ``R = sigma2/2 int h/pi dx + sup h/pi``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from .basis import as_mean, best_linear_coefficients, linear_approximation
from .errors import DomainError, IllPosedRiskError

DENSITY_FLOOR = 1e-12
SUP_GRID = 4096


@dataclass(frozen=True)
class RiskReport:
    variance_term: float
    bias_term: float
    trace_risk: float
    sup_ratio: float
    minimax_criterion: float
    worst_case: float
    design: str
    mean: str
    noise: str

    def to_dict(self):
        return asdict(self)

    def to_text(self):
        return "".join(f"{k} = {v}\n" for k, v in self.to_dict().items())

    @staticmethod
    def csv_header():
        return list(RiskReport.__dataclass_fields__)

    def csv_row(self):
        buf = io.StringIO()
        csv.writer(buf, lineterminator="\n").writerow(
            [repr(v) if isinstance(v, float) else v for v in self.to_dict().values()])
        return buf.getvalue()


def _check_floor(ctx, design):
    grid = np.union1d(np.linspace(ctx.a, ctx.b, SUP_GRID + 1), np.asarray(design.breakpoints, float))
    low = float(np.min(design.density(grid)))
    if not low >= DENSITY_FLOOR:
        raise IllPosedRiskError(f"design {design.name} falls to {low:.3e} < {DENSITY_FLOOR:g}; risk is ill-posed")
    return grid


def sup_ratio(ctx, design):
    """``sup_x h(x) / pi(x)``: grid maximum refined by bounded golden-section search."""
    grid = _check_floor(ctx, design)
    ratio = ctx.h(grid) / design.density(grid)
    best = float(np.max(ratio))

    def neg_ratio(t):
        t = np.array([t])
        return -float(ctx.h(t)[0] / design.density(t)[0])

    interior = np.nonzero((ratio[1:-1] >= ratio[:-2]) & (ratio[1:-1] >= ratio[2:])
                          & (ratio[1:-1] >= best * (1 - 1e-3)))[0] + 1
    for i in interior[:64]:
        res = minimize_scalar(neg_ratio, bounds=(grid[i - 1], grid[i + 1]), method="bounded",
                              options={"xatol": 1e-12})
        best = max(best, -float(res.fun))
    return best


def _variance_function(variance):
    if callable(variance):
        return variance, getattr(variance, "__name__", "sigma2(x)")
    v = float(variance)
    if v < 0:
        raise DomainError(f"noise variance must be nonnegative, got {v}")
    return (lambda x: np.full(np.shape(x), v)), f"{v:g}"


def omega_trace(ctx, design, m, variance=1.0):
    """Exact asymptotic risk ``tr(Q^-1 Omega)`` and its decomposition.

    Parameters
    ----------
    variance : float or callable
        Constant noise variance, or a positive function ``sigma2(x)``
        for heteroscedastic noise.

    Returns
    -------
    RiskReport
        ``minimax_criterion`` uses the same variance specification, so for a
        constant ``variance`` it equals :func:`minimax_criterion`.
    """
    m = as_mean(m)
    var_fn, noise_label = _variance_function(variance)
    sup = sup_ratio(ctx, design)
    ell = linear_approximation(best_linear_coefficients(m, ctx), ctx)

    def ratio(x):
        return ctx.h(x) / design.density(x)

    variance_term = 0.25 * float(design.integrate(lambda x: ratio(x) * var_fn(x)))
    bias_term = 0.25 * float(design.integrate(lambda x: ratio(x) * (m(x) - ell(x)) ** 2))
    criterion = 2.0 * variance_term + sup
    return RiskReport(
        variance_term=variance_term,
        bias_term=bias_term,
        trace_risk=variance_term + bias_term,
        sup_ratio=sup,
        minimax_criterion=criterion,
        worst_case=0.5 * criterion,
        design=design.name,
        mean=getattr(m, "description", "") or "callable",
        noise=noise_label,
    )


def minimax_criterion(ctx, design, sigma2):
    """``R = sigma2/2 * int h/pi dx + sup h/pi``."""
    sigma2 = float(sigma2)
    if sigma2 < 0:
        raise DomainError(f"sigma2 must be nonnegative, got {sigma2}")
    sup = sup_ratio(ctx, design)
    integral = float(design.integrate(lambda x: ctx.h(x) / design.density(x)))
    return 0.5 * sigma2 * integral + sup


def worst_case_risk(ctx, design, sigma2):
    """Supremum of ``tr(Q^-1 Omega)`` over the unit deviation ball, ``R / 2``.

    ``sigma2`` may also be an upper bound on an unknown (possibly
    heteroscedastic) noise variance; the value is then the supremum over
    that bound as well.
    """
    return 0.5 * minimax_criterion(ctx, design, sigma2)
