import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from genmatch.errors import ContractError, DomainError, ShapeError, SingularityError, UnsupportedError
from genmatch.generators import (
    CondOTFlow,
    CondOTJump,
    CTMCMixture,
    DensityJump,
    GenOut,
    JumpAtoms,
    JumpBins,
    MixtureDiffusion,
    MixtureFlow,
    MixtureJump,
    ProductGenerator,
    Superposed,
    affine,
    condot_flow,
    condot_jump,
    condot_roots,
    ctmc_mixture_rates,
    jump_from_density_path,
    make_generator,
    mixture_diffusion,
    mixture_flow,
    mixture_jump,
)
from genmatch.paths import GeometricAverage, MixtureDiscrete, MixtureUniform, ProductPath
from genmatch.schedule import Schedule
from genmatch.verify import battery, kfe_residual, neumann


# closed forms


def test_condot_flow_values():
    assert condot_flow(1.0, 0.0, 0.0) == pytest.approx(1.0)
    assert condot_flow(0.7, 0.4, 0.7) == 0.0
    assert condot_flow(2.0, 0.5, 1.0) == pytest.approx(2.0)


def test_condot_flow_singular():
    with pytest.raises(SingularityError):
        condot_flow(1.0, 1.0, 0.0)


def test_condot_jump_intensity_at_zero():
    lam, probs = condot_jump(np.array([0.0]), 0.0, np.array([2.0]), JumpBins(-3, 3, 64))
    assert lam[0] == pytest.approx(3.0)
    assert probs.sum() == pytest.approx(1.0)


@settings(max_examples=60, deadline=None)
@given(st.floats(-2, 2), st.floats(0.0, 0.9), st.floats(0.01, 0.99))
def test_condot_jump_zero_between_roots(z, t, frac):
    lo, hi = condot_roots(z, t)
    x = lo + frac * (hi - lo)
    lam, probs = condot_jump(np.array([z]), t, np.array([x]), JumpBins(-4, 4, 128))
    assert lam[0] == pytest.approx(0.0, abs=1e-9)
    assert probs.sum() == pytest.approx(1.0)


def test_condot_roots_formula():
    z, t = 1.3, 0.2
    lo, hi = condot_roots(z, t)
    root = np.sqrt(z * z + 4)
    assert lo == pytest.approx(((t + 1) * z - (1 - t) * root) / 2)
    assert hi == pytest.approx(((t + 1) * z + (1 - t) * root) / 2)


def test_condot_jump_singular():
    with pytest.raises(SingularityError):
        condot_jump(np.array([0.0]), 1.0, np.array([0.5]), JumpBins())


def test_mixture_flow_boundaries_have_zero_flux():
    # with zero flux through a1 and a2 the velocity vanishes at both ends
    a1, a2 = -1.0, 3.0
    assert mixture_flow(1.0, 0.0, a1, a1, a2) == pytest.approx(0.0)
    assert mixture_flow(1.0, 0.3, a2, a1, a2) == pytest.approx(0.0)


def test_mixture_flow_jump_across_atom():
    a1, a2, z, t = -1.0, 3.0, 0.5, 0.3
    below = mixture_flow(z, t, z - 1e-7, a1, a2)
    above = mixture_flow(z, t, z + 1e-7, a1, a2)
    assert below - above == pytest.approx((a2 - a1) / (1 - t), rel=1e-6)
    assert below > 0 > above
    assert mixture_flow(z, t, z, a1, a2) == 0.0


def test_mixture_flow_errors():
    with pytest.raises(SingularityError):
        mixture_flow(0.0, 1.0, 0.0, -1, 1)
    with pytest.raises(DomainError):
        mixture_flow(0.0, 0.5, 2.0, -1, 1)


class _AlternativeMixtureFlow(MixtureFlow):
    """The alternative closed form kdot (a2 - a1) / (1 - kappa) (1[x <= z] - F0(x))."""

    def __call__(self, path, z, t, x):
        x = np.asarray(x, dtype=float).reshape(-1, 1)
        kappa, kdot = path.kappa(t)
        F0 = (x - path.a1) / path.width
        u = kdot * path.width / (1 - kappa) * ((x <= z) - F0)
        return GenOut(path.vocab, velocity=u)


def test_alternative_mixture_flow_fails_kfe():
    path = MixtureUniform(-2.0, 2.0)
    assert kfe_residual(path, MixtureFlow(), 0.5, 0.4) <= 1e-4
    assert kfe_residual(path, _AlternativeMixtureFlow(), 0.5, 0.4) > 0.1


def test_mixture_diffusion_values_unit_interval():
    a1, a2, z, t = 0.0, 1.0, 0.3, 0.25
    c = 1.0 / (1 - t)
    assert mixture_diffusion(z, t, z, a1, a2) == pytest.approx(0.0, abs=1e-12)
    assert mixture_diffusion(z, t, a1, a1, a2) == pytest.approx(c * (z - a1) ** 2 / (a2 - a1))
    assert mixture_diffusion(z, t, a2, a1, a2) == pytest.approx(c * (z - a2) ** 2 / (a2 - a1))


def test_mixture_diffusion_boundary_values_scale_with_width():
    # zero-flux balance of the uniform part fixes sigma^2(a1) = kdot (z - a1)^2 / (1 - kappa)
    a1, a2, z, t = -1.0, 2.0, 0.5, 0.25
    c = 1.0 / (1 - t)
    assert mixture_diffusion(z, t, a1, a1, a2) == pytest.approx(c * (z - a1) ** 2)
    assert mixture_diffusion(z, t, a2, a1, a2) == pytest.approx(c * (z - a2) ** 2)
    assert kfe_residual(MixtureUniform(a1, a2), MixtureDiffusion(), z, t, [neumann(f, a1, a2) for f in battery()]) <= 1e-4


def test_mixture_diffusion_nonnegative():
    x = np.linspace(-1, 2, 301)
    for z in (-1.0, 0.0, 1.7, 2.0):
        assert np.all(mixture_diffusion(z, 0.6, x, -1.0, 2.0) >= 0)


def test_mixture_jump_intensity():
    assert mixture_jump(0.3, 0.5)[0] == pytest.approx(2.0)
    assert mixture_jump(0.3, 0.0)[0] == pytest.approx(1.0)
    assert mixture_jump(0.3, 0.5)[1] == 0.3
    with pytest.raises(SingularityError):
        mixture_jump(0.0, 1.0)


def test_mixture_jump_zero_where_schedule_is_flat():
    # cosine schedule has kappa_dot = 0 at t = 0
    assert mixture_jump(0.0, 0.0, Schedule.parse("cosine"))[0] == pytest.approx(0.0)


def test_ctmc_rates():
    assert np.all(ctmc_mixture_rates(1, 0.3, 1, 4) == 0)
    row = ctmc_mixture_rates(1, 0.5, 0, 2)
    assert np.allclose(row, [-2.0, 2.0])
    rows = ctmc_mixture_rates(np.array([0, 1, 2]), 0.2, np.array([2, 1, 0]), 3)
    assert np.allclose(rows.sum(axis=-1), 0.0)
    with pytest.raises(DomainError):
        ctmc_mixture_rates(3, 0.5, 0, 3)


def test_density_jump_stationary():
    grid = np.linspace(-1, 1, 101)
    lam, J = jump_from_density_path(np.ones_like(grid), np.zeros_like(grid), grid)
    assert np.all(lam == 0) and J.sum() == pytest.approx(1.0)


def test_density_jump_recovers_mixture_intensity():
    path = MixtureUniform(0.0, 1.0)
    grid = np.linspace(0.0, 1.0, 201)
    t, z = 0.4, 0.5
    p, amass = path.cond_density(z, t, grid)
    dp, damass = path.cond_density_dt(z, t, grid)
    lam, J, lam_a, J_a = jump_from_density_path(p, dp, grid, atoms=([z], [0.4], [1.0]))
    assert np.allclose(lam, 1 / (1 - t))
    assert J.sum() + J_a.sum() == pytest.approx(1.0, abs=1e-9)
    assert J_a[0] == pytest.approx(1.0)


def test_density_jump_normalized():
    path = GeometricAverage()
    grid = np.linspace(-6, 6, 2001)
    p, _ = path.cond_density(0.8, 0.3, grid)
    dp, _ = path.cond_density_dt(0.8, 0.3, grid)
    _, J = jump_from_density_path(p, dp, grid)
    assert abs(J.sum() - 1.0) <= 1e-9


def test_density_jump_needs_positive_density():
    with pytest.raises(DomainError):
        jump_from_density_path(np.array([1.0, 0.0]), np.zeros(2), np.array([0.0, 1.0]))


# generator objects


def test_condot_jump_probs_on_simplex():
    g = CondOTJump(JumpBins(-3, 3, 128))(GeometricAverage(), 0.5, 0.3, np.linspace(-2, 2, 9))
    assert g.check() == []
    assert g.jump_rate.shape == (9, 1)


def test_mixture_jump_on_atom_support():
    sup = JumpAtoms([-1.0, 1.0])
    g = MixtureJump(sup)(MixtureUniform(-2, 2), 1.0, 0.5, np.array([0.3]))
    assert np.allclose(g.jump_probs[0, 0], [0.0, 1.0])
    assert g.jump_rate[0, 0] == pytest.approx(2.0)


def test_jump_atoms_strict():
    sup = JumpAtoms([0.0, 1.0])
    with pytest.raises(DomainError):
        sup.nearest(0.5)
    assert sup.nearest(0.5, strict=False) in (0, 1)


def test_jump_bins_validation():
    with pytest.raises(DomainError):
        JumpBins(1.0, 0.0)
    b = JumpBins(-2, 2, 129)
    assert b.centers[b.nearest(-1.0)] == pytest.approx(-1.0)


def test_make_generator_names():
    geo, mix, disc = GeometricAverage(), MixtureUniform(), MixtureDiscrete(3)
    assert isinstance(make_generator("flow", geo), CondOTFlow)
    assert isinstance(make_generator("jump", geo), CondOTJump)
    assert isinstance(make_generator("flow", mix), MixtureFlow)
    assert isinstance(make_generator("diffusion", mix), MixtureDiffusion)
    assert isinstance(make_generator("jump", mix), MixtureJump)
    assert isinstance(make_generator("ctmc", disc), CTMCMixture)
    assert isinstance(make_generator("density_jump", mix), DensityJump)
    s = make_generator("superposition:flow+jump@0.25", geo)
    assert isinstance(s, Superposed) and s.weights == [0.25, 0.75]
    s3 = make_generator("superposition:flow+diffusion+jump", mix)
    assert len(s3.parts) == 3 and np.allclose(s3.weights, 1 / 3)
    prod = make_generator("flow*ctmc", ProductPath([geo, disc]))
    assert isinstance(prod, ProductGenerator)


def test_make_generator_errors():
    with pytest.raises(UnsupportedError):
        make_generator("diffusion", GeometricAverage())
    with pytest.raises(UnsupportedError):
        make_generator("ctmc", GeometricAverage())
    with pytest.raises(DomainError):
        make_generator("superposition:flow", GeometricAverage())
    with pytest.raises(ContractError):
        make_generator("superposition:flow+jump@1.5", GeometricAverage())
    with pytest.raises(ShapeError):
        make_generator("flow*flow*flow", ProductPath([GeometricAverage(), GeometricAverage()]))


def test_affine_merges_jump_measures():
    path = GeometricAverage()
    x = np.linspace(-2, 2, 5)
    bins = JumpBins(-3, 3, 64)
    g1 = CondOTJump(bins)(path, 1.0, 0.4, x)
    g2 = CondOTFlow()(path, 1.0, 0.4, x)
    h = affine([g1, g2], [0.5, 0.5])
    assert np.allclose(h.jump_measure(), 0.5 * g1.jump_measure())
    assert np.allclose(h.velocity, 0.5 * g2.velocity)


def test_affine_signature_mismatch():
    a = GenOut(np.array([0]), velocity=np.zeros((2, 1)))
    b = GenOut(np.array([0, 0]), velocity=np.zeros((2, 2)))
    with pytest.raises(ShapeError):
        affine([a, b], [0.5, 0.5])


def test_marginal_fast_paths_match_default_loop(rng):
    from genmatch.generators import CondGenerator

    points = np.array([[-1.0], [0.5], [1.0]])
    cases = [
        (GeometricAverage(), CondOTFlow(), rng.standard_normal(20)),
        (GeometricAverage(), CondOTJump(JumpBins(-3, 3, 64)), rng.standard_normal(20)),
        (MixtureUniform(-2, 2), MixtureJump(JumpAtoms(points)), rng.uniform(-2, 2, 20)),
        (MixtureDiscrete(3), CTMCMixture(), rng.integers(0, 3, 20).astype(float)),
    ]
    for path, gen, x in cases:
        pts = points if path.kind != "mixture_discrete" else np.array([[0.0], [1.0], [2.0]])
        x = x.reshape(-1, 1)
        w = rng.dirichlet(np.ones(3), size=20)
        fast = gen.marginal(path, pts, 0.4, x, w)
        slow = CondGenerator.marginal(gen, path, pts, 0.4, x, w)
        for field in ("velocity", "rates"):
            a, b = getattr(fast, field), getattr(slow, field)
            if a is not None:
                assert np.allclose(a, b)
        if fast.jump_rate is not None:
            assert np.allclose(fast.jump_measure(), slow.on_support(fast.bins).jump_measure())


def test_generators_solve_kfe_on_spot_checks():
    assert kfe_residual(GeometricAverage(), CondOTFlow(), 1.0, 0.5) <= 1e-4
    assert kfe_residual(MixtureUniform(-2, 2), MixtureJump(), 0.3, 0.5) <= 1e-6
    assert kfe_residual(GeometricAverage(Schedule.parse("poly:2")), CondOTFlow(), -0.5, 0.6) <= 1e-4


def test_fd_and_analytic_time_derivatives_agree():
    path, gen = MixtureUniform(-2, 2, Schedule.parse("cosine")), MixtureFlow()
    _, a = kfe_residual(path, gen, 0.5, 0.35, detail=True)
    _, b = kfe_residual(path, gen, 0.5, 0.35, method="fd", detail=True)
    for k in a:
        assert a[k] == pytest.approx(b[k], abs=1e-6)


def test_product_generator_concatenates():
    path = ProductPath([GeometricAverage(), MixtureDiscrete(2)])
    g = make_generator("flow*ctmc", path)(path, np.array([1.0, 1.0]), 0.5, np.array([[0.0, 0.0]]))
    assert g.velocity[0, 0] == pytest.approx(2.0)
    assert np.allclose(g.rates[0, 1], [-2.0, 2.0])
    assert list(g.vocab) == [0, 2]


def test_battery_is_smooth_and_named():
    names = [f.name for f in battery()]
    assert len(names) == len(set(names)) == 7
