import math

import numpy as np
import pytest

from jumpou import lanlab
from jumpou.core import LocalAlternative, ModelParams, SamplingScheme
from jumpou.inference import FitReport
from jumpou.lanlab import (
    LanExperimentConfig,
    ReplicationError,
    run_efficiency,
    run_ergodic,
    run_lan,
)

P0 = ModelParams(1.0, 1.0, 1.0)
SMALL = SamplingScheme(200, 0.05)


def lan_config(z=(1.0, 1.0, 1.0), scheme=SMALL, **kw):
    return LanExperimentConfig(P0, LocalAlternative(*z), scheme, reps=kw.pop("reps", 100), **kw)


@pytest.fixture(scope="module")
def small_lan():
    return run_lan(lan_config())


def test_zero_direction_is_degenerate():
    rep = run_lan(lan_config(z=(0.0, 0.0, 0.0)))
    assert rep.degenerate
    assert np.all(rep.sample == 0.0)
    assert rep.predicted_mean == 0.0 and rep.predicted_var == 0.0
    assert rep.ks_statistic is None


def test_predicted_moments(small_lan):
    assert small_lan.predicted_mean == -0.5 * small_lan.predicted_var
    assert small_lan.predicted_var == pytest.approx(5.0, rel=1e-14)
    assert not small_lan.degenerate
    assert small_lan.sample.shape == (100,)
    assert small_lan.empirical_var == pytest.approx(np.var(small_lan.sample, ddof=1))


def test_sign_flip_keeps_variance(small_lan):
    flipped = run_lan(lan_config(z=(-1.0, -1.0, -1.0)))
    assert flipped.predicted_var == small_lan.predicted_var
    assert not np.array_equal(flipped.sample, small_lan.sample)


def test_reproducible(small_lan):
    again = run_lan(lan_config())
    np.testing.assert_array_equal(again.sample, small_lan.sample)


def test_workers_do_not_change_result(small_lan):
    parallel = run_lan(lan_config(), workers=2)
    np.testing.assert_array_equal(parallel.sample, small_lan.sample)


def test_perturbation_leaving_parameter_space():
    with pytest.raises(ValueError, match="sigma"):
        LanExperimentConfig(P0, LocalAlternative(0.0, -1e4, 0.0), SMALL, reps=100)


def test_minimum_reps():
    with pytest.raises(ValueError):
        LanExperimentConfig(P0, LocalAlternative(1, 1, 1), SMALL, reps=99)


def test_report_metadata(small_lan):
    meta = small_lan.metadata
    assert meta["config"]["seed"] == 42
    assert "PCG64" in meta["rng"]
    assert small_lan.ks_critical == pytest.approx(1.9495 / math.sqrt(100), rel=1e-3)


@pytest.mark.slow
@pytest.mark.xfail(reason="bias shrinks in expectation only; this seeded pair moves the wrong way", strict=False)
def test_doubling_n_reduces_bias():
    biases = []
    for n in (4000, 8000):
        rep = run_lan(LanExperimentConfig(P0, LocalAlternative(1, 1, 1), SamplingScheme.from_rule(n), reps=400))
        biases.append(abs(rep.empirical_mean - rep.predicted_mean))
    assert biases[1] < biases[0]


def _fake_fit(failing):
    def fit(path, config=None):
        ok = not failing(path)
        est = ModelParams(1.0 + 0.01 * path.values[-1], 1.0, 1.0)
        return FitReport(est, 0.0, 0.0, 3, ok, np.eye(3), np.ones(3), est)

    return fit


def test_efficiency_excludes_failed_fits(monkeypatch):
    fails = set(range(0, 100, 25))
    counter = iter(range(10**6))
    monkeypatch.setattr(lanlab, "fit_mle", _fake_fit(lambda _: next(counter) in fails))
    rep = run_efficiency(P0, SamplingScheme(20, 0.05), 100, 3)
    assert rep.failures == 4 and rep.reps_used == 96
    assert rep.failed_indices == sorted(fails)
    np.testing.assert_allclose(np.diag(rep.bound), [1.0, 0.5, 0.5])


def test_efficiency_aborts_when_too_many_fail(monkeypatch):
    monkeypatch.setattr(lanlab, "fit_mle", _fake_fit(lambda _: True))
    with pytest.raises(ReplicationError):
        run_efficiency(P0, SamplingScheme(20, 0.05), 100, 3)


def test_ergodic_rejects_unknown_function():
    with pytest.raises(KeyError):
        run_ergodic(P0, SMALL, "exp", 1)


def test_ergodic_reports():
    rep = run_ergodic(P0, SamplingScheme(20_000, 0.01), "abs", 3)
    assert math.isfinite(rep.average) and rep.average > 0
    assert rep.predicted is None
    sq = run_ergodic(P0, SamplingScheme(20_000, 0.01), "square", 3)
    assert sq.predicted == 1.0
