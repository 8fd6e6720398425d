"""Closed-form conditional generators solving the KFE, and the GenOut container.

A generator is stored through its linear parameterization: a velocity, a
diagonal diffusion, a per-column jump measure ``jump_rate * jump_probs`` over a
shared support of jump destinations, and per-column rate rows for token
columns. Every array is full width over the D columns of the state; ``vocab``
marks token columns (vocab > 0) and Euclidean columns (vocab == 0).
"""
import logging
from dataclasses import dataclass, replace

import numpy as np

from .errors import ContractError, DomainError, ShapeError, SingularityError, UnsupportedError
from .paths import ATOM_ATOL, SINGULAR_EPS, ProductPath, path_slices
from .schedule import LINEAR, Schedule

log = logging.getLogger(__name__)


# --------------------------------------------------------------------------
# jump supports


@dataclass(frozen=True)
class JumpBins:
    """``count`` equally spaced jump destinations covering [lo, hi]."""

    lo: float = -1.0
    hi: float = 1.0
    count: int = 128

    def __post_init__(self):
        if not self.lo < self.hi:
            raise DomainError("JumpBins needs lo < hi")
        if self.count < 2:
            raise DomainError("JumpBins needs at least two bins")

    @property
    def centers(self):
        return np.linspace(self.lo, self.hi, self.count)

    @property
    def spacing(self):
        return (self.hi - self.lo) / (self.count - 1)

    def nearest(self, v):
        idx = np.rint((np.asarray(v, dtype=float) - self.lo) / self.spacing)
        return np.clip(idx, 0, self.count - 1).astype(int)


class JumpAtoms:
    """An arbitrary finite set of jump destinations (sorted, distinct)."""

    def __init__(self, values):
        v = np.unique(np.asarray(values, dtype=float).ravel())
        if v.size == 0:
            raise ShapeError("JumpAtoms needs at least one value")
        self._centers = v
        self._centers.setflags(write=False)

    @property
    def centers(self):
        return self._centers

    @property
    def count(self):
        return self._centers.size

    def __eq__(self, other):
        return isinstance(other, JumpAtoms) and np.array_equal(self._centers, other._centers)

    def __hash__(self):
        return hash(self._centers.tobytes())

    def __repr__(self):
        return f"JumpAtoms({self.count} values)"

    def nearest(self, v, strict=True):
        v = np.asarray(v, dtype=float)
        idx = np.clip(np.searchsorted(self._centers, v), 1, max(self.count - 1, 1))
        if self.count == 1:
            idx = np.zeros(v.shape, dtype=int)
        else:
            left = self._centers[idx - 1]
            idx = np.where(np.abs(v - left) <= np.abs(self._centers[idx] - v), idx - 1, idx)
        if strict and np.any(np.abs(self._centers[idx] - v) > ATOM_ATOL):
            raise DomainError("jump destination is not one of the support atoms")
        return idx


def merge_supports(supports):
    """Common support of several jump supports (atoms merge by union)."""
    supports = [s for s in supports if s is not None]
    if not supports:
        return None
    first = supports[0]
    if all(s == first for s in supports[1:]):
        return first
    if all(isinstance(s, JumpAtoms) for s in supports):
        return JumpAtoms(np.concatenate([s.centers for s in supports]))
    raise ShapeError("jump measures must share one binning to be combined")


# --------------------------------------------------------------------------
# GenOut


@dataclass
class GenOut:
    """Linear parameterization of a generator at n states.

    Fields are ``None`` when the component is absent. ``jump_probs`` may have a
    leading dimension of 1 when the destination law does not depend on x.
    """

    vocab: np.ndarray
    velocity: np.ndarray = None
    diffusion: np.ndarray = None
    jump_rate: np.ndarray = None
    jump_probs: np.ndarray = None
    bins: object = None
    rates: np.ndarray = None

    def __post_init__(self):
        self.vocab = np.asarray(self.vocab, dtype=int).ravel()

    @property
    def dim(self):
        return self.vocab.size

    @property
    def n(self):
        for a in (self.velocity, self.diffusion, self.jump_rate, self.rates):
            if a is not None:
                return a.shape[0]
        if self.jump_probs is not None:
            return self.jump_probs.shape[0]
        return 0

    @property
    def euclidean(self):
        return self.vocab == 0

    @classmethod
    def zeros(cls, n, vocab):
        vocab = np.asarray(vocab, dtype=int)
        out = cls(vocab, velocity=np.zeros((n, vocab.size)))
        if np.any(vocab > 0):
            out.rates = np.zeros((n, vocab.size, vocab.max()))
        return out

    def jump_measure(self):
        if self.jump_rate is None:
            return None
        return self.jump_rate[:, :, None] * self.jump_probs

    def with_measure(self, measure, bins):
        rate, probs = split_measure(measure)
        return replace(self, jump_rate=rate, jump_probs=probs, bins=bins)

    def on_support(self, support):
        """Jump measure re-expressed on ``support`` (destinations snap to the
        nearest target point)."""
        if self.jump_rate is None or self.bins == support:
            return replace(self, bins=support if self.jump_rate is None else self.bins)
        if isinstance(support, JumpBins):
            idx = support.nearest(self.bins.centers)
        else:
            idx = support.nearest(self.bins.centers, strict=False)
        move = np.zeros((self.bins.count, support.count))
        move[np.arange(self.bins.count), idx] = 1.0
        return replace(self, jump_probs=self.jump_probs @ move, bins=support)

    def cols(self, sl):
        """Restriction to a column slice."""
        def cut(a, axis=1):
            return None if a is None else a[(slice(None),) * axis + (sl,)]

        rates = cut(self.rates)
        vocab = self.vocab[sl]
        if rates is not None:
            rates = rates[:, :, : vocab.max()] if np.any(vocab > 0) else None
        return GenOut(vocab, cut(self.velocity), cut(self.diffusion), cut(self.jump_rate), cut(self.jump_probs), self.bins if self.jump_rate is not None else None, rates)

    def check(self, atol=1e-9):
        """Return a list of violated invariants (empty when valid)."""
        bad = []
        if self.diffusion is not None and np.any(self.diffusion < 0):
            bad.append("negative diffusion")
        if self.jump_rate is not None:
            if np.any(self.jump_rate < 0):
                bad.append("negative jump intensity")
            sums = self.jump_probs.sum(axis=2)
            if np.any(np.abs(sums - 1.0) > atol) or np.any(self.jump_probs < -atol):
                bad.append("jump probabilities not on the simplex")
        if self.rates is not None:
            tok = self.vocab > 0
            r = self.rates[:, tok]
            if np.any(np.abs(r.sum(axis=2)) > atol):
                bad.append("rate rows do not sum to zero")
            # only the diagonal entry may be negative
            if np.any((r < -atol).sum(axis=2) > 1):
                bad.append("negative off-diagonal rate")
        return bad


def split_measure(measure):
    """(n, D, B) nonnegative measure -> (total rate, probabilities)."""
    rate = measure.sum(axis=2)
    safe = np.where(rate > 0, rate, 1.0)
    probs = measure / safe[:, :, None]
    empty = rate <= 0
    if np.any(empty):
        probs[empty] = 1.0 / measure.shape[2]
        rate = np.where(empty, 0.0, rate)
    return rate, probs


def affine(outs, weights):
    """Sum_i weights_i * outs_i componentwise; weights are scalars or (n,) arrays.

    Jump parts are combined as measures and split back into (rate, probs).
    """
    if len(outs) != len(weights):
        raise ShapeError("one weight per generator output")
    vocab = outs[0].vocab
    if any(not np.array_equal(o.vocab, vocab) for o in outs):
        raise ShapeError("generator outputs have different state signatures")

    def col(w):
        w = np.asarray(w, dtype=float)
        return w if w.ndim == 0 else w.reshape(-1, 1)

    def combine(field):
        parts = [(col(w), getattr(o, field)) for o, w in zip(outs, weights) if getattr(o, field) is not None]
        if not parts:
            return None
        total = parts[0][0] * parts[0][1] if parts[0][1].ndim == 2 else parts[0][0][..., None] * parts[0][1]
        for w, a in parts[1:]:
            total = total + (w * a if a.ndim == 2 else w[..., None] * a)
        return total

    res = GenOut(vocab, combine("velocity"), combine("diffusion"), rates=combine("rates"))
    jumpers = [(o, w) for o, w in zip(outs, weights) if o.jump_rate is not None]
    if jumpers:
        support = merge_supports([o.bins for o, _ in jumpers])
        measure = None
        for o, w in jumpers:
            m = o.on_support(support).jump_measure() if o.bins != support else o.jump_measure()
            w = np.asarray(w, dtype=float)
            m = (w if w.ndim == 0 else w.reshape(-1, 1, 1)) * m
            measure = m if measure is None else measure + m
        if np.any(measure < -1e-12):
            raise DomainError("combined jump measure is negative")
        res = res.with_measure(np.maximum(measure, 0.0), support)
    return res


def concat(outs):
    """Column-wise concatenation of outputs on a product space."""
    n = max(o.n for o in outs)
    vocab = np.concatenate([o.vocab for o in outs])

    def stack(field):
        if all(getattr(o, field) is None for o in outs):
            return None
        return np.concatenate(
            [np.broadcast_to(getattr(o, field), (n, o.dim)) if getattr(o, field) is not None else np.zeros((n, o.dim)) for o in outs],
            axis=1,
        )

    res = GenOut(vocab, stack("velocity"), stack("diffusion"))
    jumpers = [o for o in outs if o.jump_rate is not None]
    if jumpers:
        support = merge_supports([o.bins for o in jumpers])
        B = support.count
        probs = []
        for o in outs:
            if o.jump_rate is None:
                probs.append(np.full((n, o.dim, B), 1.0 / B))
            else:
                p = o.on_support(support).jump_probs if o.bins != support else o.jump_probs
                probs.append(np.broadcast_to(p, (n, o.dim, B)))
        res.jump_rate = stack("jump_rate")
        res.jump_probs = np.concatenate(probs, axis=1)
        res.bins = support
    if np.any(vocab > 0):
        N = vocab.max()
        rates = np.zeros((n, vocab.size, N))
        start = 0
        for o in outs:
            if o.rates is not None:
                rates[:, start : start + o.dim, : o.rates.shape[2]] = o.rates
            start += o.dim
        res.rates = rates
    return res


# --------------------------------------------------------------------------
# closed-form conditional solutions


def _kappa(s, t, what):
    kappa, kdot = Schedule.parse(s)(t)
    if np.any(np.asarray(kappa) >= 1.0 - SINGULAR_EPS):
        raise SingularityError(f"{what}: kappa(t) too close to 1")
    return kappa, kdot


def condot_flow(z, t, x, s=LINEAR):
    """Velocity kappa_dot (z - x) / (1 - kappa); (z - x) / (1 - t) when linear."""
    kappa, kdot = _kappa(s, t, "condot_flow")
    return kdot * (np.asarray(z, dtype=float) - np.asarray(x, dtype=float)) / (1.0 - kappa)


def condot_poly(z, tau, x):
    """k(x) = x^2 - (tau + 1) x z - (1 - tau)^2 + tau z^2 of the linear CondOT path."""
    return x * x - (tau + 1.0) * x * z - (1.0 - tau) ** 2 + tau * z * z


def condot_roots(z, t, s=LINEAR):
    """Roots of k; the jump intensity vanishes strictly between them."""
    tau, _ = _kappa(s, t, "condot_roots")
    z = np.asarray(z, dtype=float)
    half = 0.5 * abs(1.0 - tau) * np.sqrt(z * z + 4.0)
    mid = 0.5 * (tau + 1.0) * z
    return mid - half, mid + half


def condot_jump_rate(z, t, x, s=LINEAR):
    tau, kdot = _kappa(s, t, "condot_jump")
    k = condot_poly(np.asarray(z, dtype=float), tau, np.asarray(x, dtype=float))
    return kdot * np.maximum(k, 0.0) / (1.0 - tau) ** 3


def condot_jump_probs(z, t, centers, s=LINEAR):
    """Destination law over ``centers``; shape z.shape + (B,). Rows whose
    masses all vanish come back as the uniform placeholder with a False flag."""
    tau, _ = _kappa(s, t, "condot_jump")
    if np.ndim(tau):
        tau = np.asarray(tau)[..., None]
    z = np.asarray(z, dtype=float)[..., None]
    c = np.asarray(centers, dtype=float)
    sd = 1.0 - tau
    mass = np.maximum(-condot_poly(z, tau, c), 0.0) * np.exp(-0.5 * ((c - tau * z) / sd) ** 2)
    total = mass.sum(axis=-1, keepdims=True)
    ok = total[..., 0] > 0
    probs = np.where(total > 0, mass / np.where(total > 0, total, 1.0), 1.0 / c.size)
    return probs, ok


def condot_jump(z, t, x, bins, s=LINEAR):
    """Per column (intensity, bin probabilities) of the CondOT jump solution."""
    lam = condot_jump_rate(z, t, x, s)
    probs, ok = condot_jump_probs(z, t, bins.centers, s)
    if not np.all(ok):
        log.warning("CondOT jump: all bin masses vanish, intensity zeroed")
    lam = np.where(ok, lam, 0.0)
    return lam, probs


def _check_interval(x, a1, a2):
    x = np.asarray(x, dtype=float)
    if np.any(x < a1 - 1e-12) or np.any(x > a2 + 1e-12):
        raise DomainError("state outside the prior support [a1, a2]")
    return x


def mixture_flow(z, t, x, a1, a2, s=LINEAR):
    """Velocity kappa_dot / (1 - kappa) * ((x - a1) - (a2 - a1) 1[x > z]).

    The flux vanishes at both ends of [a1, a2] and the velocity points toward
    z from either side; the atom itself (x == z) does not move.
    """
    kappa, kdot = _kappa(s, t, "mixture_flow")
    x = _check_interval(x, a1, a2)
    z = np.asarray(z, dtype=float)
    u = kdot / (1.0 - kappa) * ((x - a1) - (a2 - a1) * (x > z))
    return np.where(np.abs(x - z) <= ATOM_ATOL, 0.0, u)


def mixture_diffusion(z, t, x, a1, a2, s=LINEAR):
    """Drift-free squared diffusion of the reflected SDE on [a1, a2]."""
    kappa, kdot = _kappa(s, t, "mixture_diffusion")
    x = _check_interval(x, a1, a2)
    z = np.asarray(z, dtype=float)
    w = a2 - a1
    g = 0.5 * (z - a1) ** 2 / w + np.maximum(x - z, 0.0) - 0.5 * (x - a1) ** 2 / w
    return np.maximum(2.0 * kdot * w / (1.0 - kappa) * g, 0.0)


def mixture_jump(z, t, s=LINEAR):
    """Intensity kappa_dot / (1 - kappa) with destination exactly z."""
    kappa, kdot = _kappa(s, t, "mixture_jump")
    return kdot / (1.0 - kappa), z


def ctmc_mixture_rates(z_tok, t, x_tok, N, s=LINEAR):
    """Rate row(s) over the vocabulary; shape broadcast(z, x) + (N,)."""
    z_tok, x_tok = np.asarray(z_tok), np.asarray(x_tok)
    for tok in (z_tok, x_tok):
        if np.any(tok < 0) or np.any(tok >= N) or np.any(tok != np.round(tok)):
            raise DomainError("token out of range")
    lam, _ = mixture_jump(z_tok, t, s)
    zi, xi = np.broadcast_arrays(z_tok.astype(int), x_tok.astype(int))
    rows = np.zeros(zi.shape + (N,))
    move = (zi != xi).astype(float) * lam
    np.put_along_axis(rows, zi[..., None], move[..., None], axis=-1)
    np.put_along_axis(rows, xi[..., None], -move[..., None], axis=-1)
    rows[zi == xi] = 0.0
    return rows


def trapezoid_weights(grid):
    grid = np.asarray(grid, dtype=float)
    w = np.zeros_like(grid)
    d = np.diff(grid)
    w[:-1] += 0.5 * d
    w[1:] += 0.5 * d
    return w


def jump_from_density_path(p, dpdt, grid, atoms=None):
    """Minimal jump solution of a 1D path given on a grid.

    Returns ``(lam, J)`` with lam = [-dp/dt]_+ / p pointwise and J the
    normalized positive part of dp/dt: ``J`` holds the probability mass at each
    grid node (trapezoid weights applied), so ``J.sum() == 1``. Optional
    ``atoms = (positions, mass, dmass)`` adds point masses; then the return
    is ``(lam, J, lam_atoms, J_atoms)``.
    """
    p, dpdt, grid = (np.asarray(a, dtype=float) for a in (p, dpdt, grid))
    if np.any(p <= 0):
        raise DomainError("density must be positive on the grid")
    lam = np.maximum(-dpdt, 0.0) / p
    mass = np.maximum(dpdt, 0.0) * trapezoid_weights(grid)
    if atoms is not None:
        pos, amass, admass = (np.atleast_1d(np.asarray(a, dtype=float)) for a in atoms)
        with np.errstate(divide="ignore", invalid="ignore"):
            lam_atoms = np.where(amass > 0, np.maximum(-admass, 0.0) / amass, 0.0)
        amass_pos = np.maximum(admass, 0.0)
        total = mass.sum() + amass_pos.sum()
        if total <= 0:
            n = grid.size + pos.size
            return np.zeros_like(lam), np.full(grid.size, 1.0 / n), np.zeros_like(lam_atoms), np.full(pos.size, 1.0 / n)
        return lam, mass / total, lam_atoms, amass_pos / total
    total = mass.sum()
    if total <= 0:
        return np.zeros_like(lam), np.full(grid.size, 1.0 / grid.size)
    return lam, mass / total


# --------------------------------------------------------------------------
# conditional generator objects


def _batch(a, d):
    a = np.asarray(a, dtype=float)
    if a.ndim == 0:
        return a.reshape(1, 1)
    if a.ndim == 1:
        return a.reshape(1, -1) if a.size == d else a.reshape(-1, 1)
    if a.shape[1] != d:
        raise ShapeError(f"expected {d} columns, got {a.shape[1]}")
    return a


class CondGenerator:
    """Base class: a conditional generator for one factor path.

    ``__call__(path, z, t, x)`` returns the conditional GenOut at states x
    (z is one data point or one per row). ``marginal`` averages it under the
    posterior weights ``w`` (n, K) over data ``points`` (K, d).
    """

    name = "base"
    kinds = ()

    def supports(self, path):
        return path.kind in self.kinds

    def _require(self, path):
        if not self.supports(path):
            raise UnsupportedError(f"{self.name} generator is not defined for {path.kind} paths")

    def __call__(self, path, z, t, x):
        raise NotImplementedError

    def marginal(self, path, points, t, x, w):
        outs, weights = [], []
        for k in range(points.shape[0]):
            wk = w[:, k]
            if not np.any(wk > 0):
                continue
            outs.append(self(path, points[k], t, x))
            weights.append(wk)
        return affine(outs, weights)

    def breakpoints(self, path, z, t):
        """Points where the field or density is not smooth (per column)."""
        return []


class CondOTFlow(CondGenerator):
    name = "flow"
    kinds = ("geometric",)

    def __call__(self, path, z, t, x):
        self._require(path)
        x = _batch(x, path.dim)
        u = condot_flow(_batch(z, path.dim), t, x, path.schedule)
        return GenOut(path.vocab, velocity=np.broadcast_to(u, x.shape).copy())

    def marginal(self, path, points, t, x, w):
        kappa, kdot = _kappa(path.schedule, t, "condot_flow")
        mean_z = w @ points
        return GenOut(path.vocab, velocity=kdot * (mean_z - x) / (1.0 - kappa))


class CondOTJump(CondGenerator):
    name = "jump"
    kinds = ("geometric",)

    def __init__(self, bins=None):
        self.bins = bins or JumpBins(-2.0, 2.0, 128)

    def __call__(self, path, z, t, x, bins=None):
        self._require(path)
        bins = bins or self.bins
        x = _batch(x, path.dim)
        z = _batch(z, path.dim)
        lam, probs = condot_jump(z, t, x, bins, path.schedule)
        lam = np.broadcast_to(lam, x.shape).copy()
        return GenOut(path.vocab, jump_rate=lam, jump_probs=probs, bins=bins)

    def marginal(self, path, points, t, x, w):
        lam = condot_jump_rate(points[None, :, :], t, x[:, None, :], path.schedule)  # (n, K, d)
        probs, ok = condot_jump_probs(points, t, self.bins.centers, path.schedule)  # (K, d, B)
        lam = lam * ok[None]
        measure = np.einsum("nkd,kdb->ndb", w[:, :, None] * lam, probs)
        return GenOut(path.vocab).with_measure(measure, self.bins)

    def breakpoints(self, path, z, t):
        lo, hi = condot_roots(z, t, path.schedule)
        return [lo, hi]


class MixtureFlow(CondGenerator):
    name = "flow"
    kinds = ("mixture_uniform",)

    def __call__(self, path, z, t, x):
        self._require(path)
        x = _batch(x, path.dim)
        u = mixture_flow(_batch(z, path.dim), t, x, path.a1, path.a2, path.schedule)
        return GenOut(path.vocab, velocity=np.broadcast_to(u, x.shape).copy())

    def breakpoints(self, path, z, t):
        return [np.asarray(z, dtype=float)]


class MixtureDiffusion(CondGenerator):
    name = "diffusion"
    kinds = ("mixture_uniform",)

    def __call__(self, path, z, t, x):
        self._require(path)
        x = _batch(x, path.dim)
        s2 = mixture_diffusion(_batch(z, path.dim), t, x, path.a1, path.a2, path.schedule)
        return GenOut(path.vocab, diffusion=np.broadcast_to(s2, x.shape).copy())

    def breakpoints(self, path, z, t):
        return [np.asarray(z, dtype=float)]


class MixtureJump(CondGenerator):
    """Jump straight to z at rate kappa_dot / (1 - kappa).

    Destinations live on ``support`` when given (data coordinates, or bins
    whose nearest center stands in for z), otherwise on the atoms {z}.
    """

    name = "jump"
    kinds = ("mixture_uniform",)

    def __init__(self, support=None):
        self.support = support

    def __call__(self, path, z, t, x):
        self._require(path)
        x = _batch(x, path.dim)
        z = _batch(z, path.dim)
        lam, _ = mixture_jump(z, t, path.schedule)
        support = self.support or JumpAtoms(z)
        idx = support.nearest(z)
        probs = np.zeros(z.shape + (support.count,))
        np.put_along_axis(probs, idx[..., None], 1.0, axis=-1)
        lam = np.broadcast_to(lam, x.shape).astype(float)
        return GenOut(path.vocab, jump_rate=lam, jump_probs=probs, bins=support)

    def marginal(self, path, points, t, x, w):
        lam, _ = mixture_jump(points, t, path.schedule)
        support = self.support or JumpAtoms(points)
        idx = support.nearest(points)  # (K, d)
        n, d = x.shape
        probs = np.empty((n, d, support.count))
        for j in range(d):
            onehot = np.zeros((points.shape[0], support.count))
            onehot[np.arange(points.shape[0]), idx[:, j]] = 1.0
            probs[:, j] = w @ onehot
        return GenOut(path.vocab, jump_rate=np.full((n, d), float(lam)), jump_probs=probs, bins=support)


class CTMCMixture(CondGenerator):
    name = "ctmc"
    kinds = ("mixture_discrete",)

    def __call__(self, path, z, t, x):
        self._require(path)
        x = _batch(x, path.dim)
        rows = ctmc_mixture_rates(_batch(z, path.dim), t, x, path.vocab_size, path.schedule)
        return GenOut(path.vocab, rates=np.broadcast_to(rows, x.shape + (path.vocab_size,)).copy())

    def marginal(self, path, points, t, x, w):
        lam, _ = mixture_jump(points, t, path.schedule)
        N = path.vocab_size
        n, d = x.shape
        rates = np.empty((n, d, N))
        rows = np.arange(n)
        for j in range(d):
            onehot = np.zeros((points.shape[0], N))
            onehot[np.arange(points.shape[0]), points[:, j].astype(int)] = 1.0
            P = w @ onehot
            xi = x[:, j].astype(int)
            r = lam * P
            r[rows, xi] = -lam * (1.0 - P[rows, xi])
            rates[:, j] = r
        return GenOut(path.vocab, rates=rates)


class DensityJump(CondGenerator):
    """Minimal jump solution built from the path density and its time derivative.

    The destination law keeps only support points of positive mass; on the
    mixture path it collapses to the atom at z.
    """

    name = "density_jump"
    kinds = ("mixture_uniform", "geometric")

    def __init__(self, grid_size=4001, width=8.0):
        self.grid_size = grid_size
        self.width = width

    def _grid(self, path, z, t):
        if path.kind == "mixture_uniform":
            return np.linspace(path.a1, path.a2, self.grid_size)
        kappa, _ = path.kappa(t)
        m, sd = kappa * z, 1.0 - kappa
        return np.linspace(m - self.width * sd, m + self.width * sd, self.grid_size)

    def law(self, path, z, t):
        """(destinations, probabilities) for a scalar z."""
        grid = self._grid(path, z, t)
        p, _ = path.cond_density(z, t, grid)
        dp, _ = path.cond_density_dt(z, t, grid)
        if path.kind == "mixture_uniform":
            amass, _ = path.kappa(t)
            _, admass = path.kappa(t)
            _, J, _, Ja = jump_from_density_path(p, dp, grid, atoms=([z], [amass], [admass]))
            dest, probs = np.append(grid, z), np.append(J, Ja)
        else:
            _, J = jump_from_density_path(p, dp, grid)
            dest, probs = grid, J
        keep = probs > 0
        return dest[keep], probs[keep]

    def rate(self, path, z, t, x):
        x = np.asarray(x, dtype=float)
        if path.kind == "mixture_uniform":
            cont, atom = path.cond_density(z, t, x)
            dcont, datom = path.cond_density_dt(z, t, x)
            on_atom = np.abs(x - z) <= ATOM_ATOL
            with np.errstate(divide="ignore", invalid="ignore"):
                off = np.where(cont > 0, np.maximum(-dcont, 0.0) / cont, 0.0)
                at = np.where(atom > 0, np.maximum(-datom, 0.0) / np.where(atom > 0, atom, 1.0), 0.0)
            return np.where(on_atom, at, off)
        cont, _ = path.cond_density(z, t, x)
        dcont, _ = path.cond_density_dt(z, t, x)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(cont > 0, np.maximum(-dcont, 0.0) / cont, 0.0)

    def __call__(self, path, z, t, x):
        self._require(path)
        x = _batch(x, path.dim)
        z = np.broadcast_to(_batch(z, path.dim), x.shape)
        zs = np.unique(z)
        laws = {float(v): self.law(path, float(v), t) for v in zs}
        support = JumpAtoms(np.concatenate([laws[float(v)][0] for v in zs]))
        probs = np.zeros(x.shape + (support.count,))
        for v, (dest, pr) in laws.items():
            row = np.zeros(support.count)
            row[support.nearest(dest)] = pr
            probs[z == v] = row
        lam = self.rate(path, z, t, x)
        return GenOut(path.vocab, jump_rate=lam, jump_probs=probs, bins=support)

    def breakpoints(self, path, z, t):
        return [np.asarray(z, dtype=float)] if path.kind == "mixture_uniform" else []


class Superposed(CondGenerator):
    """Convex superposition of conditional generators for the same path."""

    name = "superposition"

    def __init__(self, parts, weights):
        if len(parts) != len(weights):
            raise ShapeError("one weight per generator")
        w = np.asarray(weights, dtype=float)
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ContractError("superposition weights must be nonnegative and sum to 1")
        self.parts, self.weights = list(parts), list(w)

    def supports(self, path):
        return all(p.supports(path) for p in self.parts)

    def __call__(self, path, z, t, x):
        return affine([p(path, z, t, x) for p in self.parts], self.weights)

    def marginal(self, path, points, t, x, w):
        return affine([p.marginal(path, points, t, x, w) for p in self.parts], self.weights)

    def breakpoints(self, path, z, t):
        return [b for p in self.parts for b in p.breakpoints(path, z, t)]


class ProductGenerator:
    """One conditional generator per factor of a product path."""

    name = "product"

    def __init__(self, parts):
        self.parts = list(parts)

    def __call__(self, path, z, t, x):
        z = _batch(z, path.dim)
        x = _batch(x, path.dim)
        return concat([g(f, z[:, s], t, x[:, s]) for g, (f, s) in zip(self.parts, path_slices(path))])

    def marginal(self, path, points, t, x, w):
        return concat([g.marginal(f, points[:, s], t, x[:, s], w) for g, (f, s) in zip(self.parts, path_slices(path))])


# --------------------------------------------------------------------------
# name registry

_BY_NAME = {
    ("flow", "geometric"): CondOTFlow,
    ("jump", "geometric"): CondOTJump,
    ("flow", "mixture_uniform"): MixtureFlow,
    ("diffusion", "mixture_uniform"): MixtureDiffusion,
    ("jump", "mixture_uniform"): MixtureJump,
    ("ctmc", "mixture_discrete"): CTMCMixture,
    ("jump", "mixture_discrete"): CTMCMixture,
    ("density_jump", "mixture_uniform"): DensityJump,
    ("density_jump", "geometric"): DensityJump,
}


def make_generator(name, path, bins=None, support=None):
    """Resolve a generator name for a path.

    Names: ``flow``, ``diffusion``, ``jump``, ``ctmc``, ``density_jump`` and
    ``superposition:<name>+<name>[+...][@<w1>,<w2>,...]`` (equal weights by
    default; two parts also accept a single weight).
    Product paths take one name per factor joined by ``*`` or a single name.
    """
    if isinstance(path, ProductPath):
        names = name.split("*") if "*" in name else [name] * len(path.parts)
        if len(names) != len(path.parts):
            raise ShapeError("one generator name per product factor")
        parts = []
        for nm, f in zip(names, path.parts):
            nm = "ctmc" if f.kind == "mixture_discrete" and nm in ("flow", "jump") else nm
            parts.append(make_generator(nm, f, bins, support))
        return ProductGenerator(parts)
    if name.startswith("superposition:"):
        body = name.split(":", 1)[1]
        weights = None
        if "@" in body:
            body, a = body.split("@")
            try:
                weights = [float(v) for v in a.split(",")]
            except ValueError:
                raise DomainError(f"bad superposition weights in {name!r}") from None
        names = body.split("+")
        if len(names) < 2:
            raise DomainError("superposition needs at least two generator names")
        if weights is None:
            weights = [1.0 / len(names)] * len(names)
        elif len(weights) == 1 and len(names) == 2:
            weights = [weights[0], 1.0 - weights[0]]
        if len(weights) != len(names):
            raise DomainError("one superposition weight per generator")
        return Superposed([make_generator(n, path, bins, support) for n in names], weights)
    key = (name, path.kind)
    if key not in _BY_NAME:
        if name == "diffusion" and path.kind == "geometric":
            raise UnsupportedError("no pure-diffusion solution exists for the CondOT path")
        raise UnsupportedError(f"no {name!r} generator for {path.kind} paths")
    cls = _BY_NAME[key]
    if cls is CondOTJump:
        return cls(bins)
    if cls is MixtureJump:
        return cls(support)
    return cls()
