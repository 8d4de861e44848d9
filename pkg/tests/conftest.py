import numpy as np
import pytest

from minimaxdesign import MeanFunction, monomial_context


@pytest.fixture(scope="session")
def ctx1():
    return monomial_context(1)


@pytest.fixture(scope="session")
def ctx2():
    return monomial_context(2)


@pytest.fixture(scope="session")
def ctx3():
    return monomial_context(3)


@pytest.fixture(scope="session")
def m_quadratic():
    return MeanFunction.polynomial([0.0, 1.0, 3.354])


@pytest.fixture(scope="session")
def m_cubic():
    return MeanFunction.polynomial([0.0, 1.0, 0.5, 6.614])


def gl_rule(a, b, n=512):
    """Independent Gauss-Legendre rule for oracles (does not go through the package)."""
    t, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (b - a) * t + 0.5 * (a + b), 0.5 * (b - a) * w


def perturbed_designs(ctx, base, count=20, seed=7, amplitude=0.4, floor=0.01):
    """Tabulated designs ``base * (1 + random trig perturbation)``, floored and renormalised."""
    from minimaxdesign import table_design

    rng = np.random.default_rng(seed)
    x = np.linspace(ctx.a, ctx.b, 2049)
    out = []
    for _ in range(count):
        freqs = rng.integers(1, 6, size=3)
        phases = rng.uniform(0, 2 * np.pi, size=3)
        amps = rng.uniform(-1, 1, size=3)
        g = sum(a * np.cos(f * np.pi * x + p) for a, f, p in zip(amps, freqs, phases)) / 3
        dens = np.maximum(base.density(x) * (1 + amplitude * g), floor)
        out.append(table_design(ctx, x, dens))
    return out
