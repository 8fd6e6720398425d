import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from genmatch.errors import DomainError, StepSizeError
from genmatch.generators import CondOTFlow, CondOTJump, CTMCMixture, GenOut, JumpBins, MixtureDiffusion, MixtureJump
from genmatch.marginal import ConditionalModel, MarginalModel
from genmatch.paths import Dataset, GeometricAverage, MixtureDiscrete, MixtureUniform
from genmatch.sim import SimConfig, StepStats, ctmc_probs, ctmc_step, euler_step, jump_survival, reflect, resolve_schedule, simulate


def test_zero_generator_is_identity(rng):
    x = rng.standard_normal((5, 2))
    g = GenOut(np.zeros(2, dtype=int), velocity=np.zeros((5, 2)))
    assert np.array_equal(euler_step(x, g, 0.2, 0.1, rng), x)


def test_pure_flow_step(rng):
    g = GenOut(np.array([0]), velocity=np.ones((1, 1)))
    assert euler_step(np.zeros((1, 1)), g, 0.0, 0.1, rng)[0, 0] == pytest.approx(0.1)


def test_forced_jump_lands_on_bin(rng):
    bins = JumpBins(-1, 1, 11)
    n = 200
    probs = np.full((1, 1, 11), 1 / 11)
    g = GenOut(np.array([0]), velocity=np.full((n, 1), 0.3), jump_rate=np.full((n, 1), 1e6), jump_probs=probs, bins=bins)
    stats = StepStats()
    x = euler_step(np.full((n, 1), 0.123), g, 0.1, 0.01, rng, stats=stats)
    assert np.all(np.isclose(x[:, :, None], bins.centers).any(axis=2))
    assert stats.jumps == n and stats.clamps == n


def test_step_past_one(rng):
    g = GenOut(np.array([0]), velocity=np.ones((1, 1)))
    with pytest.raises(DomainError):
        euler_step(np.zeros((1, 1)), g, 0.95, 0.1, rng)


def test_survival_values():
    assert jump_survival(0.0, 0.3, 0.1) == pytest.approx(1.0)
    assert jump_survival(1.0, 0.0, 0.5) == pytest.approx(math.exp(-1.5))
    assert jump_survival(1.0, 0.0, 0.5) == pytest.approx(0.22313, abs=1e-5)
    with pytest.raises(DomainError):
        jump_survival(1.0, 0.5, 0.5)


@pytest.mark.parametrize("lam", [0.1, 1.0, 10.0])
@pytest.mark.parametrize("t", [0.1, 0.5])
def test_survival_hazard_limit(lam, t):
    h = 1e-4
    assert abs((1 - jump_survival(lam, t, h)) / h - lam) / lam <= 0.01


def test_ctmc_step_rules(rng):
    assert ctmc_step(1, np.zeros(3), 0.1, rng) == 1
    toks = ctmc_step(np.zeros(200_000, dtype=int), np.tile([-2.0, 2.0], (200_000, 1)), 0.1, rng)
    assert np.mean(toks == 1) == pytest.approx(0.2, abs=0.005)
    p = ctmc_probs(np.array([0, 1]), np.array([[-2.0, 2.0], [1.0, -1.0]]), 0.1)
    assert np.allclose(p.sum(axis=1), 1.0)
    with pytest.raises(StepSizeError) as err:
        ctmc_probs(np.array([0]), np.array([[-20.0, 20.0]]), 0.1)
    assert err.value.suggested_h < 0.05


def test_reflect_examples():
    assert reflect(0.4, 0.0, 1.0) == pytest.approx(0.4)
    assert reflect(1.3, 0.0, 1.0) == pytest.approx(0.7)
    assert reflect(2.4, 0.0, 1.0) == pytest.approx(0.4)
    assert reflect(-0.2, 0.0, 1.0) == pytest.approx(0.2)


@given(st.floats(-50, 50), st.floats(-5, 5), st.floats(0.1, 5))
def test_reflect_lands_in_interval(x, a1, w):
    y = reflect(x, a1, a1 + w)
    assert a1 - 1e-9 <= y <= a1 + w + 1e-9


def test_single_step_is_full_displacement():
    model = ConditionalModel(GeometricAverage(), CondOTFlow(), 2.0)
    res = simulate(model, SimConfig(n_steps=1, n_samples=100, seed=3))
    x0 = GeometricAverage().sample_prior(100, np.random.default_rng(np.random.SeedSequence(3, spawn_key=(0,))))
    assert np.allclose(res.samples, x0 + (2.0 - x0))
    assert res.times[-1] == 1.0


def test_default_grid_stops_short_of_one():
    grid = SimConfig(n_steps=10).time_grid()
    assert grid[-1] == pytest.approx(0.9) and len(grid) == 10
    grid = SimConfig(n_steps=10, t_end=0.999, record_times=(0.25,)).time_grid()
    assert 0.25 in grid and grid[-1] == 0.999


def test_determinism_and_thread_independence():
    model = MarginalModel(GeometricAverage(), Dataset.two_point(), CondOTJump(JumpBins(-2, 2, 65)))
    a = simulate(model, SimConfig(n_steps=40, n_samples=900, seed=5, chunk_size=256))
    b = simulate(model, SimConfig(n_steps=40, n_samples=900, seed=5, chunk_size=256, threads=3))
    c = simulate(model, SimConfig(n_steps=40, n_samples=900, seed=6, chunk_size=256))
    assert np.array_equal(a.samples, b.samples)
    assert not np.array_equal(a.samples, c.samples)


def test_reflection_keeps_samples_inside():
    model = MarginalModel(MixtureUniform(-1, 1), Dataset.two_point(-0.5, 0.5), MixtureDiffusion())
    res = simulate(model, SimConfig(n_steps=50, n_samples=2000, seed=1))
    assert np.all((res.samples >= -1) & (res.samples <= 1))


def test_trajectories_and_records():
    model = MarginalModel(MixtureDiscrete(4), Dataset.tokens([0.1, 0.2, 0.3, 0.4]), CTMCMixture())
    res = simulate(model, SimConfig(n_steps=20, n_samples=50, seed=2, record_trajectories=True, record_times=(0.5,)))
    assert res.trajectories.shape == (len(res.times), 50, 1)
    assert np.array_equal(res.trajectories[-1], res.samples)
    assert np.array_equal(res.records[0.5], res.trajectories[list(res.times).index(0.5)])
    assert set(np.unique(res.samples)) <= {0.0, 1.0, 2.0, 3.0}


def test_schedule_resolution():
    lin = MarginalModel(GeometricAverage(), Dataset.two_point(), CondOTJump())
    assert resolve_schedule(lin, SimConfig()) == "condot_survival"
    mix = MarginalModel(MixtureUniform(), Dataset.two_point(), MixtureJump())
    assert resolve_schedule(mix, SimConfig()) == "linear_hazard"
    assert resolve_schedule(lin, SimConfig(jump_schedule="linear_hazard")) == "linear_hazard"


def test_config_validation():
    with pytest.raises(DomainError):
        SimConfig(n_steps=0)
    with pytest.raises(DomainError):
        SimConfig(jump_schedule="sometimes")
