"""Fixed-order Gauss-Legendre quadrature on intervals and piecewise intervals."""

from functools import lru_cache

import numpy as np

DEFAULT_NODES = 512


@lru_cache(maxsize=32)
def _reference_rule(n_nodes):
    nodes, weights = np.polynomial.legendre.leggauss(n_nodes)
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


def gauss_legendre(a, b, n_nodes=DEFAULT_NODES):
    """Return nodes and weights of the ``n_nodes``-point rule mapped to ``[a, b]``.

    The rule integrates polynomials of degree ``2 * n_nodes - 1`` exactly.
    """
    if n_nodes < 1:
        raise ValueError(f"n_nodes must be positive, got {n_nodes}")
    t, w = _reference_rule(int(n_nodes))
    half = 0.5 * (b - a)
    return half * t + 0.5 * (a + b), half * w


def integrate(func, a, b, n_nodes=DEFAULT_NODES):
    """Integrate a vectorised ``func`` over ``[a, b]``.

    ``func`` may return shape ``(n,)`` or ``(n, ...)``; the leading axis is
    contracted with the weights.
    """
    if b <= a:
        return 0.0 * np.asarray(func(np.array([a])))[0]
    x, w = gauss_legendre(a, b, n_nodes)
    vals = np.asarray(func(x), dtype=float)
    return np.tensordot(w, vals, axes=(0, 0))


def integrate_pieces(func, breaks, n_nodes=DEFAULT_NODES):
    """Integrate over consecutive cells of the sorted breakpoint list ``breaks``.

    Use this when ``func`` has kinks at known abscissas; each smooth cell gets
    its own rule.
    """
    breaks = np.asarray(breaks, dtype=float)
    total = 0.0
    for a, b in zip(breaks[:-1], breaks[1:]):
        if b > a:
            total = total + integrate(func, a, b, n_nodes)
    return total
