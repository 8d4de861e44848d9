"""Truncated weighted least squares for the best linear approximation.

Observations drawn from a design ``pi`` are reweighted by ``lam / pi`` so the
normal equations target the projection under the reference weight ``lam``
rather than under ``pi``.  When the weighted Gram matrix is nearly singular
(its smallest eigenvalue over ``n`` drops below half that of ``Q``) the known
``n Q`` is used instead, which keeps all moments of the estimator finite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, NumericalError, UnderdeterminedError

MODES = ("truncated", "known-Q", "untruncated")


@dataclass(frozen=True)
class Dataset:
    xs: np.ndarray = field(repr=False)
    ys: np.ndarray = field(repr=False)

    def __post_init__(self):
        xs = np.asarray(self.xs, dtype=float).ravel()
        ys = np.asarray(self.ys, dtype=float).ravel()
        if xs.shape != ys.shape:
            raise DomainError(f"xs and ys lengths differ: {xs.size} vs {ys.size}")
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "ys", ys)

    @property
    def n(self):
        return self.xs.size

    def to_csv(self):
        lines = ["x,y"] + [f"{x!r},{y!r}" for x, y in zip(self.xs.tolist(), self.ys.tolist())]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text):
        rows = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
        header = [h.strip() for h in rows[0].split(",")]
        ix, iy = header.index("x"), header.index("y")
        vals = [ln.split(",") for ln in rows[1:]]
        return cls(np.array([float(v[ix]) for v in vals]), np.array([float(v[iy]) for v in vals]))


@dataclass(frozen=True)
class WlsFit:
    beta_tilde: np.ndarray
    event_triggered: bool
    lambda_min_observed: float
    n: int
    mode: str = "truncated"

    def to_text(self):
        beta = ", ".join(repr(float(b)) for b in self.beta_tilde)
        return (f"beta_tilde = [{beta}]\nevent_triggered = {self.event_triggered}\n"
                f"lambda_min_observed = {self.lambda_min_observed!r}\nn = {self.n}\nmode = {self.mode}\n")


def jacobi_eigenvalues(A, rtol=1e-12, max_sweeps=64):
    """Eigenvalues of a small symmetric matrix by cyclic Jacobi rotations.

    Sweeps stop once the off-diagonal Frobenius norm is below ``rtol`` times
    the norm of the matrix.  Returns eigenvalues in ascending order.
    """
    A = np.array(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DomainError(f"expected a square matrix, got shape {A.shape}")
    scale = float(np.max(np.abs(A))) if A.size else 0.0
    if np.any(np.abs(A - A.T) > 1e-12 * max(scale, 1e-300)):
        raise DomainError("matrix is not symmetric")
    n = A.shape[0]
    total = float(np.linalg.norm(A))
    if total == 0.0:
        return np.zeros(n)
    offdiag = ~np.eye(n, dtype=bool)
    for _ in range(max_sweeps):
        off = float(np.linalg.norm(A[offdiag]))
        if off <= rtol * total:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if apq == 0.0:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                # hypot avoids overflow when apq is tiny relative to the diagonal gap
                t = math.copysign(1.0, theta) / (abs(theta) + math.hypot(theta, 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                ap, aq = A[:, p].copy(), A[:, q].copy()
                A[:, p] = c * ap - s * aq
                A[:, q] = s * ap + c * aq
                rp, rq = A[p, :].copy(), A[q, :].copy()
                A[p, :] = c * rp - s * rq
                A[q, :] = s * rp + c * rq
                A[p, q] = A[q, p] = 0.0
    else:
        raise NumericalError("Jacobi iteration did not converge")
    return np.sort(np.diag(A))


def smallest_eigenvalue(A):
    return float(jacobi_eigenvalues(A)[0])


def _compensated_gram(X, w, y):
    """``X^T W X`` and ``X^T W y`` with every entry summed by ``math.fsum``."""
    k = X.shape[1]
    Xw = X * w[:, None]
    G = np.empty((k, k))
    for i in range(k):
        for j in range(i, k):
            G[i, j] = G[j, i] = math.fsum(Xw[:, i] * X[:, j])
    V = np.array([math.fsum(Xw[:, i] * y) for i in range(k)])
    return G, V


def fit_wls(dataset, design, ctx, mode="truncated"):
    """Weighted least squares with weights ``lam(X_i) / pi(X_i)``.

    Parameters
    ----------
    mode : {"truncated", "known-Q", "untruncated"}
        ``truncated`` swaps in ``n Q`` on the near-singular event;
        ``known-Q`` always uses ``n Q``; ``untruncated`` always uses the
        weighted Gram matrix.
    """
    if mode not in MODES:
        raise DomainError(f"unknown estimator mode {mode!r}")
    n, k = dataset.n, ctx.k
    if n < k:
        raise UnderdeterminedError(f"need at least {k} observations, got {n}")
    ctx.check_in_support(dataset.xs)
    dens = design.density(dataset.xs)
    if np.any(dens <= 0):
        raise DomainError("design density vanishes at an observed predictor")
    X = ctx.design_matrix(dataset.xs)
    G, V = _compensated_gram(X, ctx.lam(dataset.xs) / dens, dataset.ys)
    lam_obs = smallest_eigenvalue(G / n)
    event = lam_obs < 0.5 * smallest_eigenvalue(ctx.Q)
    if mode == "known-Q" or (mode == "truncated" and event):
        G_used = n * np.asarray(ctx.Q)
    else:
        G_used = G
    try:
        beta = np.linalg.solve(G_used, V)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"weighted normal equations are singular: {exc}") from None
    return WlsFit(beta_tilde=beta, event_triggered=bool(event), lambda_min_observed=max(lam_obs, 0.0),
                  n=n, mode=mode)


def fit_ols(dataset, ctx):
    """Ordinary least squares on the plain Gram matrix; consistent for the design-weighted projection only."""
    n, k = dataset.n, ctx.k
    if n < k:
        raise UnderdeterminedError(f"need at least {k} observations, got {n}")
    X = ctx.design_matrix(dataset.xs)
    G, V = _compensated_gram(X, np.ones(n), dataset.ys)
    try:
        beta = np.linalg.solve(G, V)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"normal equations are singular: {exc}") from None
    return WlsFit(beta_tilde=beta, event_triggered=False,
                  lambda_min_observed=max(smallest_eigenvalue(G / n), 0.0), n=n, mode="ols")


def integrated_squared_error(fit, ctx, beta_true):
    """``(beta_tilde - beta)^T Q (beta_tilde - beta)``, i.e. ``int (l_tilde - l)^2 lam dx``."""
    beta_tilde = fit.beta_tilde if isinstance(fit, WlsFit) else np.asarray(fit, dtype=float)
    d = beta_tilde - np.asarray(beta_true, dtype=float)
    if d.shape != (ctx.k,):
        raise DomainError("coefficient vectors do not match the basis size")
    return float(d @ np.asarray(ctx.Q) @ d)


def weighted_scores(xs, ys, design, ctx, beta):
    """Per-observation ``x_vec * (y - x_vec beta) * lam / pi``; mean zero under the design."""
    xs = np.asarray(xs, dtype=float)
    X = ctx.design_matrix(xs)
    e = np.asarray(ys, dtype=float) - X @ np.asarray(beta, dtype=float)
    return X * (e * ctx.lam(xs) / design.density(xs))[:, None]


def fit_wls_batch(xs, ys, dens, ctx, mode="truncated"):
    """Vectorised :func:`fit_wls` over replications (rows of ``xs``, ``ys``, ``dens``).

    Returns ``(betas, events, lambda_mins)``.  Eigenvalues use LAPACK here;
    the scalar path uses Jacobi.
    """
    R, n = xs.shape
    X = xs[:, :, None] ** np.arange(ctx.k) if ctx.kind == "monomial" else \
        ctx.design_matrix(xs.ravel()).reshape(R, n, ctx.k)
    w = ctx.lam(xs.ravel()).reshape(R, n) / dens
    Xw = X * w[:, :, None]
    G = np.einsum("rni,rnj->rij", Xw, X)
    V = np.einsum("rni,rn->ri", Xw, ys)
    lam_obs = np.linalg.eigvalsh(G / n)[:, 0]
    events = lam_obs < 0.5 * smallest_eigenvalue(ctx.Q)
    nQ = n * np.asarray(ctx.Q)
    if mode == "known-Q":
        G = np.broadcast_to(nQ, G.shape)
    elif mode == "truncated":
        G = np.where(events[:, None, None], nQ, G)
    elif mode != "untruncated":
        raise DomainError(f"unknown estimator mode {mode!r}")
    betas = np.linalg.solve(G, V[:, :, None])[:, :, 0]
    return betas, events, np.maximum(lam_obs, 0.0)
