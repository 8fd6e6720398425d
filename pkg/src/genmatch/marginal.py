"""Marginal generators over finite datasets and generator combinators.

The marginal generator at x is the posterior-weighted average of conditional
generators. Combinators build new generators for the same marginal path:
convex superposition, a Langevin (divergence-free) component, and a
predictor-corrector mix of forward and backward-time generators.
"""
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, ShapeError, UnsupportedError
from .generators import GenOut, affine, concat
from .paths import GeometricAverage, ProductPath, posterior_weights

WEIGHT_TOL = 1e-12


def superpose(g1, g2, a1, a2):
    """Markov superposition a1 * g1 + a2 * g2 with a1, a2 >= 0 summing to 1."""
    if a1 < 0 or a2 < 0 or abs(a1 + a2 - 1.0) > WEIGHT_TOL:
        raise ContractError("superposition weights must be nonnegative and sum to 1")
    if a1 == 1.0:
        return g1
    if a2 == 1.0:
        return g2
    return affine([g1, g2], [a1, a2])


def add_langevin(g, score, beta):
    """Add the Langevin component: drift beta * score and diffusion 2 beta."""
    beta = np.asarray(beta, dtype=float)
    if np.any(beta < 0):
        raise ContractError("Langevin weight must be nonnegative")
    score = np.asarray(score, dtype=float)
    if score.ndim == 1:
        score = score.reshape(1, -1)
    if score.shape[1] != g.dim:
        raise ShapeError("score and generator dimensions differ")
    if np.all(beta == 0):
        return g
    b = beta if beta.ndim == 0 else beta.reshape(-1, 1)
    vel = b * score if g.velocity is None else g.velocity + b * score
    diff = np.broadcast_to(2.0 * b, vel.shape)
    diff = diff.copy() if g.diffusion is None else g.diffusion + diff
    mask = g.vocab == 0
    vel = np.where(mask, vel, 0.0)
    diff = np.where(mask, diff, 0.0)
    return GenOut(g.vocab, vel, diff, g.jump_rate, g.jump_probs, g.bins, g.rates)


def backward_flow(g):
    """Backward-time generator of a pure flow: the negated velocity."""
    for field in ("diffusion", "jump_rate", "rates"):
        a = getattr(g, field)
        if a is not None and np.any(a != 0):
            raise UnsupportedError("backward generators are provided for pure flows only")
    vel = None if g.velocity is None else -g.velocity
    return GenOut(g.vocab, velocity=vel)


def predictor_corrector(gF, gB, a1, a2):
    """a1 * gF + a2 * gB with a1, a2 >= 0 and a1 - a2 = 1."""
    if a1 < 0 or a2 < 0 or abs(a1 - a2 - 1.0) > WEIGHT_TOL:
        raise ContractError("predictor-corrector weights need a1, a2 >= 0 and a1 - a2 = 1")
    if a2 == 0:
        return gF
    return affine([gF, gB], [a1, a2])


def product_compose(parts):
    """Assemble factor outputs into one output on the product space.

    ``parts`` is a list of ``(columns, GenOut)``; columns (a slice, range or
    index list) must partition 0..D-1. Factors with no columns are skipped.
    """
    blocks = []
    for cols, g in parts:
        if isinstance(cols, slice):
            cols = range(cols.start or 0, cols.stop)
        cols = list(cols)
        if not cols:
            continue
        if len(cols) != g.dim:
            raise ShapeError("factor columns and generator dimension differ")
        blocks.append((cols, g))
    if not blocks:
        raise ShapeError("nothing to compose")
    used = sorted(c for cols, _ in blocks for c in cols)
    if used != list(range(len(used))):
        raise ShapeError("factor signatures overlap or leave a gap")
    blocks.sort(key=lambda b: b[0][0])
    for cols, _ in blocks:
        if cols != list(range(cols[0], cols[0] + len(cols))):
            raise ShapeError("factor columns must be contiguous")
    return concat([g for _, g in blocks])


def marginal_score(data, t, x, path=None):
    """Score of the marginal of the geometric-average path over ``data``."""
    path = path or GeometricAverage(dim=data.dim)
    if not isinstance(path, GeometricAverage):
        raise UnsupportedError("closed-form scores exist only for the geometric-average path")
    single = np.ndim(x) <= 1
    xb = np.asarray(x, dtype=float).reshape(-1, path.dim)
    w = posterior_weights(path, data, t, xb)
    kappa, _ = path.kappa(t)
    s = (kappa * (w @ data.points) - xb) / (1.0 - kappa) ** 2
    return s[0] if single else s


@dataclass(frozen=True)
class MarginalModel:
    """Exact marginal generator of ``path`` over ``data`` built from ``generator``.

    ``langevin_beta`` adds a Langevin component using the exact marginal score;
    with ``langevin_weighting="path"`` the effective weight is
    beta * (1 - kappa)^2 (the squared noise coefficient of the path), otherwise
    it is the constant beta. ``pc`` = (a1, a2) mixes the forward generator with
    the backward flow plus a Langevin corrector of weight ``pc_beta``.
    """

    path: object
    data: object
    generator: object
    langevin_beta: float = 0.0
    langevin_weighting: str = "path"
    pc: tuple = None
    pc_beta: float = 1.0

    def __post_init__(self):
        if self.data.dim != self.path.dim:
            raise ShapeError("dataset and path dimensions differ")
        if self.langevin_beta < 0 or self.pc_beta < 0:
            raise ContractError("Langevin weights must be nonnegative")
        if self.langevin_weighting not in ("path", "constant"):
            raise ContractError("langevin_weighting is 'path' or 'constant'")
        if self.pc is not None:
            a1, a2 = self.pc
            if a1 < 0 or a2 < 0 or abs(a1 - a2 - 1.0) > WEIGHT_TOL:
                raise ContractError("predictor-corrector weights need a1, a2 >= 0 and a1 - a2 = 1")

    @property
    def vocab(self):
        return self.path.vocab

    @property
    def dim(self):
        return self.path.dim

    def sample_prior(self, n, rng):
        return self.path.sample_prior(n, rng)

    def weights(self, t, x):
        return posterior_weights(self.path, self.data, t, x)

    def langevin_weight(self, beta, t):
        if self.langevin_weighting == "constant":
            return beta
        kappa, _ = self.path.kappa(t)
        return beta * (1.0 - kappa) ** 2

    def __call__(self, t, x):
        return marginal_genout(self, t, x)


def marginal_genout(model, t, x):
    """GenOut of the marginal generator at states x (n, D)."""
    x = np.asarray(x, dtype=float).reshape(-1, model.dim)
    w = model.weights(t, x)
    g = model.generator.marginal(model.path, model.data.points, t, x, w)
    needs_score = model.langevin_beta > 0 or (model.pc is not None and model.pc[1] > 0 and model.pc_beta > 0)
    score = None
    if needs_score:
        if not isinstance(model.path, GeometricAverage):
            raise UnsupportedError("Langevin components need the geometric-average path")
        kappa, _ = model.path.kappa(t)
        score = (kappa * (w @ model.data.points) - x) / (1.0 - kappa) ** 2
    if model.pc is not None and model.pc[1] > 0:
        gB = backward_flow(g)
        if model.pc_beta > 0:
            gB = add_langevin(gB, score, model.langevin_weight(model.pc_beta, t))
        g = predictor_corrector(g, gB, *model.pc)
    if model.langevin_beta > 0:
        g = add_langevin(g, score, model.langevin_weight(model.langevin_beta, t))
    return g


class ConditionalModel:
    """The conditional generator pinned to one data point z, for simulation."""

    def __init__(self, path, generator, z):
        self.path = path
        self.generator = generator
        self.z = np.asarray(z, dtype=float).reshape(1, -1)
        if self.z.shape[1] != path.dim:
            raise ShapeError("z does not match the path dimension")

    @property
    def vocab(self):
        return self.path.vocab

    @property
    def dim(self):
        return self.path.dim

    def sample_prior(self, n, rng):
        return self.path.sample_prior(n, rng)

    def __call__(self, t, x):
        x = np.asarray(x, dtype=float).reshape(-1, self.dim)
        return self.generator(self.path, self.z, t, x)


def reflection_bounds(path):
    """(a1, a2) per column for mixture-uniform columns, else (-inf, inf)."""
    parts = path.parts if isinstance(path, ProductPath) else [path]
    lo, hi = [], []
    for p in parts:
        a1, a2 = (p.a1, p.a2) if p.kind == "mixture_uniform" else (-np.inf, np.inf)
        lo += [a1] * p.dim
        hi += [a2] * p.dim
    return np.array(lo), np.array(hi)
