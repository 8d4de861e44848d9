"""Seeded random streams, inverse-CDF predictor sampling and Gaussian responses.

Each replication owns a stream keyed by ``(seed, stream_id)``; the
generator is PCG64 seeded through ``SeedSequence(seed, spawn_key=key)``,
which is platform independent.  Predictor uniforms and noise uniforms come
from two fixed child keys of the stream, so a replication's draws do not
depend on how many other replications run or in what order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

from .design import quantile
from .errors import DomainError

ALGORITHM = "PCG64/SeedSequence"
PREDICTORS = 0
NOISE = 1
_TWO53 = float(2 ** 53)


@dataclass(frozen=True)
class RngStream:
    seed: int
    key: tuple = (0,)

    @classmethod
    def for_replication(cls, seed, stream_id):
        return cls(int(seed), (int(stream_id),))

    @property
    def stream_id(self):
        return self.key[0]

    @property
    def algorithm(self):
        return ALGORITHM

    def child(self, index):
        return RngStream(self.seed, self.key + (int(index),))

    def generator(self):
        ss = np.random.SeedSequence(self.seed % 2 ** 64, spawn_key=self.key)
        return np.random.Generator(np.random.PCG64(ss))

    def uniforms(self, n):
        """``n`` uniforms strictly inside (0, 1) on a 2^-53 lattice."""
        raw = self.generator().integers(0, 2 ** 53, size=int(n), dtype=np.int64)
        return (raw + 0.5) / _TWO53

    def normals(self, n):
        """Standard normals by inverse CDF, one uniform per draw."""
        return ndtri(self.uniforms(n))

    def describe(self):
        return f"algorithm={ALGORITHM} seed={self.seed} key={'/'.join(map(str, self.key))}"


@dataclass(frozen=True)
class SampleBatch:
    xs: np.ndarray = field(repr=False)
    us: np.ndarray = field(repr=False)
    design: str
    stream: RngStream


def sample_predictors(design, n, stream):
    """Draw ``n`` predictors from ``design`` by pushing stream uniforms through its quantile."""
    if int(n) < 1:
        raise DomainError("sample size must be at least 1")
    us = stream.child(PREDICTORS).uniforms(n)
    return SampleBatch(xs=quantile(design, us), us=us, design=design.name, stream=stream)


def coupled_predictors(designs, n, stream):
    """Common random numbers: the same uniforms pushed through every design's quantile."""
    supports = {tuple(d.support) for d in designs}
    if len(supports) > 1:
        raise DomainError("coupled designs must share a support")
    us = stream.child(PREDICTORS).uniforms(n)
    return [SampleBatch(xs=quantile(d, us), us=us, design=d.name, stream=stream) for d in designs]


def simulate_responses(xs, m, sigma2, stream):
    """``y = m(x) + sqrt(sigma2) * z`` with ``z`` from the stream's noise child."""
    sigma2 = float(sigma2)
    if sigma2 < 0:
        raise DomainError(f"noise variance must be nonnegative, got {sigma2}")
    xs = np.asarray(xs, dtype=float)
    mx = np.asarray(m(xs), dtype=float)
    if sigma2 == 0:
        return mx.copy()
    return mx + np.sqrt(sigma2) * stream.child(NOISE).normals(xs.size).reshape(xs.shape)


def replication_block(seed, stream_ids, n, key_suffix=()):
    """Predictor uniforms and noise normals for a block of replications.

    Row ``i`` matches what :func:`sample_predictors` and
    :func:`simulate_responses` draw from ``RngStream(seed, (stream_ids[i], *key_suffix))``.
    """
    us = np.empty((len(stream_ids), n))
    zs = np.empty((len(stream_ids), n))
    for i, r in enumerate(stream_ids):
        s = RngStream(int(seed), (int(r), *key_suffix))
        us[i] = s.child(PREDICTORS).uniforms(n)
        zs[i] = s.child(NOISE).normals(n)
    return us, zs
