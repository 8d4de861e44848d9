import numpy as np
import pytest

from minimaxdesign import SimConfig, convergence_study, event_frequency, run_experiment
from minimaxdesign.errors import ConfigError

SMALL = dict(replications=600, n=30, chunk_size=150)


def test_reproducible_across_worker_counts():
    cfg = SimConfig(**SMALL)
    a = run_experiment(cfg, workers=1)
    b = run_experiment(cfg, workers=3)
    assert np.array_equal(a.values, b.values)
    assert a.to_csv() == b.to_csv()


def test_chunking_does_not_change_results():
    a = run_experiment(SimConfig(**SMALL))
    b = run_experiment(SimConfig(**{**SMALL, "chunk_size": 77}))
    assert np.array_equal(a.values, b.values)
    assert SimConfig(**SMALL).hash() == SimConfig(**{**SMALL, "chunk_size": 77}).hash()


def test_seed_changes_results():
    a = run_experiment(SimConfig(**SMALL))
    b = run_experiment(SimConfig(**SMALL, seed=1))
    assert not np.array_equal(a.values, b.values)
    assert SimConfig(**SMALL).hash() != SimConfig(**SMALL, seed=1).hash()


def test_linear_mean_without_noise_is_exact():
    cfg = SimConfig(**SMALL, mean={"coefficients": [1.0, -2.0]}, noise_variance=0.0, mode="untruncated")
    res = run_experiment(cfg)
    assert np.all(res.means < 1e-20)
    assert np.allclose(res.trace_risks, 0.0, atol=1e-12)


def test_coupled_difference_se_smaller():
    res = run_experiment(SimConfig(replications=2000, chunk_size=500))
    for (a, b), (_, se) in res.diff_ses.items():
        i, j = res.designs.index(a), res.designs.index(b)
        assert se < min(res.ses[i], res.ses[j])


def test_uncoupled_streams_differ_per_design():
    res = run_experiment(SimConfig(**SMALL, coupling=False,
                                   designs=({"family": "uniform"}, {"family": "uniform"})))
    assert not np.array_equal(res.values[0], res.values[1])


def test_event_frequency_small_at_moderate_n():
    freqs = event_frequency(SimConfig(replications=3000, n=50))
    assert all(0 <= f < 0.01 for f in freqs.values())
    small = event_frequency(SimConfig(replications=3000, n=4))
    assert max(small.values()) > max(freqs.values())


def test_ise_scales_like_one_over_n():
    cfg = SimConfig(replications=4000, designs=({"family": "prop-h"},), chunk_size=1000)
    rows = convergence_study(cfg, [100, 400])
    raw = [r["n_times_mean"] / r["n"] for r in rows]
    slope = np.log(raw[1] / raw[0]) / np.log(4)
    assert slope == pytest.approx(-1.0, abs=0.1)


def test_config_validation():
    with pytest.raises(ConfigError):
        SimConfig.from_dict({"replicates": 10})
    with pytest.raises(ConfigError):
        SimConfig(mode="ridge")
    with pytest.raises(ConfigError):
        run_experiment(SimConfig(n=1, replications=5))


def test_outputs_carry_provenance():
    res = run_experiment(SimConfig(**SMALL))
    text = res.to_csv()
    assert "config_hash" in text and "PCG64" in text and "seed" in text
    assert "asymptotic" in res.to_table()
