import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from genmatch.errors import CoverageError, DomainError, InstabilityError, ShapeError
from genmatch.generators import CondOTFlow, GenOut, JumpBins, MixtureJump
from genmatch.marginal import MarginalModel, superpose
from genmatch.paths import Dataset, GeometricAverage, MixtureDiscrete, MixtureUniform
from genmatch.generators import CTMCMixture
from genmatch.verify import (
    CONSTANT,
    ProductTestFunction,
    QuadratureGrid,
    Scaled,
    apply_generator,
    battery,
    ctmc_oracle,
    energy_distance,
    gradient_equality_check,
    kfe_residual,
    kfe_suite,
    marginal_rate_matrix,
    neumann,
    tv_hist,
)


def rich_genout(rng, n=6):
    bins = JumpBins(-2, 2, 9)
    probs = rng.dirichlet(np.ones(9), size=(n, 1))
    return GenOut(
        np.array([0]),
        velocity=rng.standard_normal((n, 1)),
        diffusion=rng.uniform(0, 2, (n, 1)),
        jump_rate=rng.uniform(0, 3, (n, 1)),
        jump_probs=probs,
        bins=bins,
    )


def test_constant_is_annihilated(rng):
    g = rich_genout(rng)
    assert np.allclose(apply_generator(g, CONSTANT, rng.standard_normal(6)), 0.0)
    tok = GenOut(np.array([3]), rates=np.array([[[-2.0, 1.0, 1.0]]]))
    assert apply_generator(tok, CONSTANT, np.array([[0.0]]))[0] == pytest.approx(0.0)


def test_apply_hand_values():
    x = battery()[0]
    x2 = battery()[1]
    assert apply_generator(GenOut(np.array([0]), velocity=np.array([[2.0]])), x, np.array([0.7]))[0] == pytest.approx(2.0)
    assert apply_generator(GenOut(np.array([0]), diffusion=np.array([[3.0]])), x2, np.array([0.7]))[0] == pytest.approx(3.0)


def test_apply_linear_in_f(rng):
    g = rich_genout(rng)
    f1, f2 = battery()[3], battery()[5]
    a, b = 0.7, -1.3
    combo = type(f1)("combo", lambda x: a * f1.f(x) + b * f2.f(x), lambda x: a * f1.df(x) + b * f2.df(x), lambda x: a * f1.d2f(x) + b * f2.d2f(x))
    x = rng.standard_normal(6)
    lhs = apply_generator(g, combo, x)
    rhs = a * apply_generator(g, f1, x) + b * apply_generator(g, f2, x)
    assert np.allclose(lhs, rhs, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.floats(0, 1), st.integers(0, 2**31))
def test_apply_linear_in_genout(alpha, seed):
    rng = np.random.default_rng(seed)
    g1, g2 = rich_genout(rng), rich_genout(rng)
    x = rng.standard_normal(6)
    for f in battery():
        mixed = apply_generator(superpose(g1, g2, alpha, 1 - alpha), f, x)
        sep = alpha * apply_generator(g1, f, x) + (1 - alpha) * apply_generator(g2, f, x)
        assert np.allclose(mixed, sep, atol=1e-12)


def test_product_test_function():
    g = GenOut(np.array([0, 0]), velocity=np.array([[1.0, 2.0]]))
    x, x2 = battery()[0], battery()[1]
    # d/dt of x0 * x1^2 along (1, 2) at (3, 4): 1 * 16 + 3 * 2 * 4 * 2
    val = apply_generator(g, ProductTestFunction([x, x2]), np.array([[3.0, 4.0]]))
    assert val[0] == pytest.approx(16 + 48)
    with pytest.raises(ShapeError):
        apply_generator(g, x, np.array([[3.0, 4.0]]))


def test_kfe_residual_examples():
    thr = 1e-4
    assert kfe_residual(GeometricAverage(), CondOTFlow(), 1.0, 0.5) <= thr
    assert kfe_residual(GeometricAverage(), Scaled(CondOTFlow(), 2.0), 1.0, 0.5) >= 10 * thr
    assert kfe_residual(MixtureUniform(-2, 2), MixtureJump(), 0.4, 0.5) <= 1e-6


def test_kfe_residual_coverage_error():
    narrow = QuadratureGrid.uniform(-1.0, 1.0, 2001)
    with pytest.raises(CoverageError):
        kfe_residual(GeometricAverage(), CondOTFlow(), 1.0, 0.3, grid=narrow)
    with pytest.raises(CoverageError):
        kfe_residual(MixtureUniform(-2, 2), MixtureJump(), 0.0, 0.3, grid=narrow)


def test_kfe_suite_subset_passes():
    rows = kfe_suite(ts=(0.1, 0.5, 0.9))
    assert all(r["pass"] and r["negative_control_pass"] for r in rows)
    assert len(rows) == 7


def test_neumann_functions_have_flat_ends():
    for f in battery():
        nf = neumann(f, -2.0, 2.0)
        assert nf.df(np.array([-2.0, 2.0])) == pytest.approx([0.0, 0.0], abs=1e-12)


def test_ctmc_oracle_zero_rates():
    p0 = np.array([0.2, 0.3, 0.5])
    _, traj, drift = ctmc_oracle(lambda t: np.zeros((3, 3)), p0, 10)
    assert np.allclose(traj, p0) and drift == 0.0


def test_ctmc_oracle_two_state():
    Q = np.array([[-1.0, 1.0], [1.0, -1.0]])
    _, traj, _ = ctmc_oracle(lambda t: Q, np.array([1.0, 0.0]), 200)
    assert traj[-1, 0] == pytest.approx((1 + math.exp(-2)) / 2, abs=1e-9)
    assert traj[-1, 0] == pytest.approx(0.5677, abs=1e-4)


def test_ctmc_oracle_mixture_concentrates():
    model = MarginalModel(MixtureDiscrete(4), Dataset.tokens([0, 0, 1, 0]), CTMCMixture())
    _, traj, _ = ctmc_oracle(lambda t: marginal_rate_matrix(model, t), np.full(4, 0.25), 20000, t1=0.9999)
    assert traj[-1, 2] == pytest.approx(1.0, abs=1e-3)


def test_ctmc_oracle_instability():
    Q = np.array([[-100.0, 100.0], [100.0, -100.0]])
    with pytest.raises(InstabilityError):
        ctmc_oracle(lambda t: Q, np.array([1.0, 0.0]), 2)


def test_tv_hist_examples(rng):
    a = rng.uniform(-1, 1, 5000)
    edges = np.linspace(-4, 4, 41)
    assert tv_hist(a, a, edges) == 0.0
    assert tv_hist(a, a + 100.0, edges) == pytest.approx(1.0)
    with pytest.raises(ShapeError):
        tv_hist(a, a, np.array([]))
    with pytest.raises(DomainError):
        tv_hist(a[:10], a, edges)


def test_tv_hist_density_reference(rng):
    a = rng.standard_normal(200_000)
    pdf = lambda x: np.exp(-0.5 * x * x) / math.sqrt(2 * math.pi)  # noqa: E731
    assert tv_hist(a, pdf, np.linspace(-4, 4, 33)) < 0.01


def test_tv_checkerboard_calibration(rng):
    cb = Dataset.checkerboard()
    edges = [np.linspace(-1, 1, 17)] * 2
    a, _ = cb.sample(50_000, rng)
    b, _ = cb.sample(50_000, rng)
    assert tv_hist(a, b, edges) <= 0.05
    assert tv_hist(a, cb, edges) <= 0.05


def test_energy_distance_examples(rng):
    a = rng.standard_normal((500, 2))
    assert energy_distance(a, a.copy()) == pytest.approx(0.0, abs=0.01)
    assert energy_distance(np.zeros((50, 1)), np.ones((50, 1))) == pytest.approx(2.0)
    # same-law estimates are clipped at zero, so average over many draws
    small = np.mean([abs(energy_distance(rng.standard_normal(100), rng.standard_normal(100), seed=s)) for s in range(20)])
    large = np.mean([abs(energy_distance(rng.standard_normal(2000), rng.standard_normal(2000), seed=s)) for s in range(20)])
    assert large < small


def test_gradient_equality_single_point():
    r = gradient_equality_check(GeometricAverage(), Dataset(np.array([[0.7]])), CondOTFlow(), M=200_000)
    assert r["cosine"] > 0.999
    assert r["max_gap"] <= 5 * r["se"]
