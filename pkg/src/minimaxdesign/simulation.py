"""Monte Carlo harness: finite-n risk of the truncated WLS estimator per design.

Replication ``r`` draws its predictor uniforms and noise from the stream
``(seed, r)``.  With coupling on, every design sees the same uniforms (mapped
through its own quantile function) and the same noise, so differences
between designs have much smaller standard errors than the means.
Replications are processed in fixed-size chunks and reassembled in index
order, so the output does not depend on the number of workers.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .basis import basis_from_dict, best_linear_coefficients, mean_from_dict
from .design import design_from_dict, quantile
from .errors import ConfigError, NumericalError
from .risk import omega_trace
from .rng import ALGORITHM, replication_block
from .wls import MODES, fit_wls_batch

CHUNK = 2000

_DEFAULT_BASIS = {"kind": "monomial", "degree": 1}


@dataclass(frozen=True)
class SimConfig:
    """Everything a simulation run depends on; plain data so it can be hashed and shipped to workers.

    ``designs`` entries are design config mappings (``family`` plus
    ``sigma2`` for minimax).  ``noise_variance`` is the variance of the
    Gaussian errors and is independent of any design's ``sigma2``.
    """

    basis: dict = field(default_factory=lambda: dict(_DEFAULT_BASIS))
    designs: tuple = ({"family": "uniform"}, {"family": "sqrt-h"}, {"family": "minimax", "sigma2": 1.0})
    mean: dict = field(default_factory=lambda: {"coefficients": [0.0, 1.0, 3.354]})
    noise_variance: float = 1.0
    n: int = 50
    replications: int = 10_000
    seed: int = 20240601
    coupling: bool = True
    mode: str = "truncated"
    workers: int = 1
    chunk_size: int = CHUNK

    def __post_init__(self):
        object.__setattr__(self, "designs", tuple(dict(d) for d in self.designs))
        if int(self.replications) < 1:
            raise ConfigError("replications must be at least 1")
        if float(self.noise_variance) < 0:
            raise ConfigError("noise_variance must be nonnegative")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if not self.designs:
            raise ConfigError("at least one design is required")
        if int(self.workers) < 1 or int(self.chunk_size) < 1:
            raise ConfigError("workers and chunk_size must be positive")

    @classmethod
    def from_dict(cls, cfg):
        cfg = dict(cfg)
        known = set(cls.__dataclass_fields__)
        extra = set(cfg) - known
        if extra:
            raise ConfigError(f"unknown simulation key(s): {', '.join(sorted(extra))}")
        if "designs" in cfg:
            cfg["designs"] = tuple(cfg["designs"])
        return cls(**cfg)

    def to_dict(self):
        out = asdict(self)
        out["designs"] = [dict(d) for d in self.designs]
        return out

    def hash(self):
        """Digest of everything that affects results (worker count and chunking excluded)."""
        payload = self.to_dict()
        payload.pop("workers")
        payload.pop("chunk_size")
        text = json.dumps(payload, sort_keys=True, default=str)
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def replace(self, **changes):
        d = self.to_dict()
        d.update(changes)
        return SimConfig.from_dict(d)


@dataclass
class SimResult:
    config: SimConfig
    designs: list
    means: np.ndarray
    ses: np.ndarray
    diff_ses: dict
    event_freqs: np.ndarray
    trace_risks: np.ndarray
    values: np.ndarray = field(repr=False)
    events: np.ndarray = field(repr=False)

    def header_lines(self):
        c = self.config
        return [
            f"# config_hash: {c.hash()}",
            f"# seed: {c.seed}",
            f"# rng: {ALGORITHM}; stream_id = replication index; "
            f"{'coupled uniforms and noise across designs' if c.coupling else 'independent stream per design'}",
            f"# n: {c.n}  replications: {c.replications}  noise_variance: {c.noise_variance}  mode: {c.mode}",
            f"# config: {json.dumps(c.to_dict(), sort_keys=True, default=str)}",
        ]

    def to_csv(self):
        buf = io.StringIO()
        buf.write("\n".join(self.header_lines()) + "\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["design", "n_times_mean_ise", "se", "trace_risk", "event_frequency"])
        for j, name in enumerate(self.designs):
            w.writerow([name, repr(float(self.means[j])), repr(float(self.ses[j])),
                        repr(float(self.trace_risks[j])), repr(float(self.event_freqs[j]))])
        if self.diff_ses:
            w.writerow([])
            w.writerow(["design_a", "design_b", "mean_difference", "se_difference"])
            for (a, b), (diff, se) in self.diff_ses.items():
                w.writerow([a, b, repr(float(diff)), repr(float(se))])
        return buf.getvalue()

    def to_table(self):
        """Plain-text layout: one row of simulated means (SE) and one of asymptotic values."""
        width = max(14, *(len(d) + 2 for d in self.designs))
        lines = [f"{'':<12}" + "".join(f"{d:>{width}}" for d in self.designs)]
        lines.append(f"{'n=' + str(self.config.n):<12}" + "".join(
            f"{f'{m:.2f} ({s:.2f})':>{width}}" for m, s in zip(self.means, self.ses)))
        lines.append(f"{'asymptotic':<12}" + "".join(f"{t:>{width}.2f}" for t in self.trace_risks))
        for (a, b), (diff, se) in self.diff_ses.items():
            lines.append(f"SE({b} - {a}) = {se:.3f}   mean difference = {diff:+.3f}")
        return "\n".join(lines) + "\n"


_WORKER_STATE = {}


def _build_state(config):
    ctx = basis_from_dict(config.basis)
    designs = [design_from_dict(ctx, d) for d in config.designs]
    m = mean_from_dict(config.mean, ctx)
    beta = best_linear_coefficients(m, ctx)
    return ctx, designs, m, beta


def _init_worker(config_dict):
    config = SimConfig.from_dict(config_dict)
    _WORKER_STATE["key"] = config.hash()
    _WORKER_STATE["state"] = _build_state(config)
    _WORKER_STATE["config"] = config


def _run_chunk(ids, config=None, state=None):
    if config is None:
        config, state = _WORKER_STATE["config"], _WORKER_STATE["state"]
    ctx, designs, m, beta = state
    n = int(config.n)
    Q = np.asarray(ctx.Q)
    sd = math.sqrt(float(config.noise_variance))
    values = np.empty((len(designs), len(ids)))
    events = np.empty((len(designs), len(ids)), dtype=bool)
    if config.coupling:
        us, zs = replication_block(config.seed, ids, n)
    for j, design in enumerate(designs):
        if not config.coupling:
            us, zs = replication_block(config.seed, ids, n, key_suffix=(j,))
        xs = quantile(design, us)
        ys = m(xs) + sd * zs
        betas, ev, _ = fit_wls_batch(xs, ys, design.density(xs), ctx, config.mode)
        d = betas - beta
        values[j] = n * np.einsum("ri,ij,rj->r", d, Q, d)
        events[j] = ev
    bad = np.nonzero(~np.isfinite(values))
    if bad[0].size:
        r = ids[bad[1][0]]
        raise NumericalError(f"non-finite replication: seed={config.seed} stream={r} "
                             f"design={designs[bad[0][0]].name}")
    return values, events


def run_experiment(config, workers=None):
    """Run all replications and aggregate ``n * ISE`` per design.

    Returns
    -------
    SimResult
        Means and standard errors of ``n * (beta_tilde - beta)^T Q (beta_tilde - beta)``,
        standard errors of pairwise differences, event frequencies, and the
        asymptotic ``tr(Q^-1 Omega)`` for each design.
    """
    if isinstance(config, dict):
        config = SimConfig.from_dict(config)
    workers = int(config.workers if workers is None else workers)
    state = _build_state(config)
    ctx, designs, m, _ = state
    if config.n < ctx.k:
        raise ConfigError(f"n={config.n} is smaller than the basis size {ctx.k}")
    ids = np.arange(int(config.replications))
    chunks = [ids[i:i + config.chunk_size] for i in range(0, ids.size, config.chunk_size)]
    if workers == 1:
        parts = [_run_chunk(c, config, state) for c in chunks]
    else:
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker,
                                 initargs=(config.to_dict(),)) as pool:
            parts = list(pool.map(_run_chunk, chunks))
    values = np.concatenate([p[0] for p in parts], axis=1)
    events = np.concatenate([p[1] for p in parts], axis=1)
    R = values.shape[1]
    means = values.mean(axis=1)
    ses = values.std(axis=1, ddof=1) / math.sqrt(R) if R > 1 else np.full(len(designs), np.nan)
    names = [d.name for d in designs]
    diff_ses = {}
    for a in range(len(designs)):
        for b in range(a + 1, len(designs)):
            diff = values[b] - values[a]
            se = diff.std(ddof=1) / math.sqrt(R) if R > 1 else math.nan
            diff_ses[(names[a], names[b])] = (float(diff.mean()), float(se))
    traces = np.array([omega_trace(ctx, d, m, config.noise_variance).trace_risk for d in designs])
    return SimResult(config=config, designs=names, means=means, ses=ses, diff_ses=diff_ses,
                     event_freqs=events.mean(axis=1), trace_risks=traces, values=values, events=events)


def convergence_study(config, n_grid, replications=None):
    """Gap between ``n * mean ISE`` and the asymptotic risk along increasing ``n``.

    ``replications`` may be an int, a callable ``n -> R``, or None (use the
    config's).  Returns one dict per (n, design) with the gap, its
    ``sqrt(n)``-scaled version and the Monte Carlo standard error.
    """
    if isinstance(config, dict):
        config = SimConfig.from_dict(config)
    n_grid = [int(n) for n in n_grid]
    if any(b <= a for a, b in zip(n_grid[:-1], n_grid[1:])):
        raise ConfigError("n_grid must be strictly increasing")
    rows = []
    for n in n_grid:
        if replications is None:
            R = config.replications
        elif callable(replications):
            R = int(replications(n))
        else:
            R = int(replications)
        res = run_experiment(config.replace(n=n, replications=R))
        for j, name in enumerate(res.designs):
            gap = abs(res.means[j] - res.trace_risks[j])
            rows.append({
                "n": n, "design": name, "replications": R,
                "n_times_mean": float(res.means[j]), "se": float(res.ses[j]),
                "trace_risk": float(res.trace_risks[j]),
                "gap": float(gap), "scaled_gap": float(math.sqrt(n) * gap),
                "event_frequency": float(res.event_freqs[j]),
            })
    return rows


def event_frequency(config):
    """Fraction of replications in which the near-singular fallback fired, per design."""
    res = run_experiment(config)
    return dict(zip(res.designs, res.event_freqs.tolist()))
