"""Conditional probability paths p_t(dx|z) and finite datasets.

Three factor types are provided, each acting independently on every column it
owns: :class:`MixtureUniform` and :class:`MixtureDiscrete` (a kappa-weighted
mixture of a point mass at z and a uniform prior) and :class:`GeometricAverage`
(x = (1 - kappa) x0 + kappa z with a standard normal x0). A
:class:`ProductPath` concatenates factors column-wise.

Densities are reported per column as ``(continuous_part, atom_mass)`` against
Lebesgue measure for Euclidean columns and counting measure for token columns.
"""
import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, EmptyPosteriorError, ShapeError, SingularityError
from .schedule import LINEAR, Schedule

ATOM_ATOL = 1e-9
SINGULAR_EPS = 1e-9
_LOG_2PI = math.log(2.0 * math.pi)


def _as_batch(a, dim):
    a = np.asarray(a, dtype=float)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        a = a.reshape(1, -1) if a.shape[0] == dim else a.reshape(-1, 1)
    if a.shape[-1] != dim:
        raise ShapeError(f"state has {a.shape[-1]} columns, path expects {dim}")
    return a


def _time_col(t):
    """Scalar time stays scalar; a per-sample vector becomes a column."""
    t = np.asarray(t, dtype=float)
    return float(t) if t.ndim == 0 else t.reshape(-1, 1)


class _Factor:
    dim = 1
    schedule = LINEAR

    @property
    def vocab(self):
        return np.zeros(self.dim, dtype=int)

    @property
    def factors(self):
        return [self]

    def kappa(self, t):
        return self.schedule(np.asarray(t, dtype=float))

    def _guard(self, kappa, what):
        if np.any(np.asarray(kappa) >= 1.0 - SINGULAR_EPS):
            raise SingularityError(f"{what}: kappa(t) too close to 1")


@dataclass(frozen=True)
class MixtureUniform(_Factor):
    """kappa delta_z + (1 - kappa) Unif[a1, a2], per column."""

    a1: float = -1.0
    a2: float = 1.0
    schedule: Schedule = LINEAR
    dim: int = 1
    kind = "mixture_uniform"

    def __post_init__(self):
        if not self.a1 < self.a2:
            raise DomainError("MixtureUniform needs a1 < a2")
        if self.dim < 1:
            raise DomainError("dimension must be positive")

    @property
    def width(self):
        return self.a2 - self.a1

    def sample_prior(self, n, rng):
        return rng.uniform(self.a1, self.a2, size=(n, self.dim))

    def sample_cond(self, z, t, rng):
        z = _as_batch(z, self.dim)
        kappa, _ = self.kappa(t)
        kappa = _time_col(kappa)
        keep = rng.random(z.shape) < kappa
        prior = rng.uniform(self.a1, self.a2, size=z.shape)
        return np.where(keep, z, prior)

    def cond_density(self, z, t, x):
        kappa, _ = self.kappa(t)
        x = np.asarray(x, dtype=float)
        inside = (x >= self.a1) & (x <= self.a2)
        cont = np.where(inside, (1.0 - kappa) / self.width, 0.0)
        return cont, np.broadcast_to(kappa, cont.shape).astype(float)

    def cond_density_dt(self, z, t, x):
        kappa, kdot = self.kappa(t)
        self._guard(kappa, "cond_density_dt")
        x = np.asarray(x, dtype=float)
        inside = (x >= self.a1) & (x <= self.a2)
        dcont = np.where(inside, -kdot / self.width, 0.0)
        return dcont, np.broadcast_to(kdot, dcont.shape).astype(float)

    def loglik(self, x, points, t):
        """Return ``(atom_order, log_likelihood)`` of shape (n, K).

        A column where x coincides with z counts as one order of point mass; the
        posterior keeps only data points of maximal order.
        """
        kappa, _ = self.kappa(t)
        kappa = _time_col(kappa)
        n, K = x.shape[0], points.shape[0]
        inside = (x >= self.a1) & (x <= self.a2)
        with np.errstate(divide="ignore"):
            log_atom = np.log(kappa)
            log_cont = np.where(inside, np.log((1.0 - kappa) / self.width), -np.inf)
        order = np.zeros((n, K), dtype=int)
        logl = np.zeros((n, K))
        has_atom = np.asarray(kappa > 0.0)
        for d in range(self.dim):
            values, zcode = np.unique(points[:, d], return_inverse=True)
            xcode = atom_codes(values, x[:, d])
            eq = (zcode[None, :] == xcode[:, None]) & has_atom.reshape(-1, 1)
            order += eq
            logl += np.where(eq, log_atom, log_cont[:, d : d + 1])
        return order, logl


def _uniform_key(self, x, points):
    codes = [atom_codes(np.unique(points[:, d]), x[:, d]) for d in range(self.dim)]
    inside = (x >= self.a1) & (x <= self.a2)
    return np.column_stack(codes + [inside.astype(int)])


MixtureUniform.posterior_key = _uniform_key


def atom_codes(values, x, atol=ATOM_ATOL):
    """Index of the sorted ``values`` entry within ``atol`` of each x, else -1."""
    idx = np.clip(np.searchsorted(values, x), 0, values.size - 1)
    left = np.maximum(idx - 1, 0)
    best = np.where(np.abs(values[left] - x) < np.abs(values[idx] - x), left, idx)
    return np.where(np.abs(values[best] - x) <= atol, best, -1)


@dataclass(frozen=True)
class MixtureDiscrete(_Factor):
    """kappa delta_z + (1 - kappa) Unif{0..N-1}, per token column."""

    vocab_size: int = 2
    schedule: Schedule = LINEAR
    dim: int = 1
    kind = "mixture_discrete"

    def __post_init__(self):
        if self.vocab_size < 1:
            raise DomainError("vocabulary size must be positive")

    @property
    def vocab(self):
        return np.full(self.dim, self.vocab_size, dtype=int)

    def _check_tokens(self, x):
        x = np.asarray(x)
        if np.any(x < 0) or np.any(x >= self.vocab_size) or np.any(x != np.round(x)):
            raise DomainError("token out of range")

    def sample_prior(self, n, rng):
        return rng.integers(0, self.vocab_size, size=(n, self.dim)).astype(float)

    def sample_cond(self, z, t, rng):
        z = _as_batch(z, self.dim)
        self._check_tokens(z)
        kappa, _ = self.kappa(t)
        keep = rng.random(z.shape) < _time_col(kappa)
        prior = rng.integers(0, self.vocab_size, size=z.shape).astype(float)
        return np.where(keep, z, prior)

    def cond_density(self, z, t, x):
        kappa, _ = self.kappa(t)
        cont = np.broadcast_to((1.0 - kappa) / self.vocab_size, np.shape(x)).astype(float)
        return cont, np.broadcast_to(kappa, cont.shape).astype(float)

    def cond_density_dt(self, z, t, x):
        kappa, kdot = self.kappa(t)
        self._guard(kappa, "cond_density_dt")
        dcont = np.broadcast_to(-kdot / self.vocab_size, np.shape(x)).astype(float)
        return dcont, np.broadcast_to(kdot, dcont.shape).astype(float)

    def loglik(self, x, points, t):
        kappa, _ = self.kappa(t)
        kappa = _time_col(kappa)
        kappa3 = kappa if np.ndim(kappa) == 0 else kappa[:, :, None]
        eq = x[:, None, :] == points[None, :, :]
        pmf = (1.0 - kappa3) / self.vocab_size + kappa3 * eq
        with np.errstate(divide="ignore"):
            logl = np.log(pmf).sum(axis=2)
        return np.zeros(logl.shape, dtype=int), logl

    def posterior_key(self, x, points):
        return x.astype(int)


@dataclass(frozen=True)
class GeometricAverage(_Factor):
    """N(kappa z, (1 - kappa)^2) per column; the CondOT path for linear kappa."""

    schedule: Schedule = LINEAR
    dim: int = 1
    kind = "geometric"

    def mean_std(self, z, t):
        kappa, _ = self.kappa(t)
        return kappa * np.asarray(z, dtype=float), 1.0 - kappa

    def sample_prior(self, n, rng):
        return rng.standard_normal((n, self.dim))

    def sample_cond(self, z, t, rng):
        z = _as_batch(z, self.dim)
        kappa, _ = self.kappa(t)
        kappa = _time_col(kappa)
        x0 = rng.standard_normal(z.shape)
        return (1.0 - kappa) * x0 + kappa * z

    def cond_density(self, z, t, x):
        kappa, _ = self.kappa(t)
        self._guard(kappa, "cond_density (use atom semantics at t = 1)")
        m, s = kappa * np.asarray(z, dtype=float), 1.0 - kappa
        x = np.asarray(x, dtype=float)
        dens = np.exp(-0.5 * ((x - m) / s) ** 2) / (s * math.sqrt(2.0 * math.pi))
        return dens, np.zeros_like(dens)

    def cond_density_dt(self, z, t, x):
        kappa, kdot = self.kappa(t)
        self._guard(kappa, "cond_density_dt")
        z = np.asarray(z, dtype=float)
        x = np.asarray(x, dtype=float)
        dens, _ = self.cond_density(z, t, x)
        s = 1.0 - kappa
        d = kdot * dens * (1.0 / s - (x - kappa * z) * (x - z) / s**3)
        return d, np.zeros_like(d)

    def loglik(self, x, points, t):
        kappa, _ = self.kappa(t)
        self._guard(kappa, "posterior")
        kappa = _time_col(kappa)
        kappa3 = kappa if np.ndim(kappa) == 0 else kappa[:, :, None]
        s = 1.0 - kappa3
        r = (x[:, None, :] - kappa3 * points[None, :, :]) / s
        logl = (-0.5 * r**2 - np.log(s) - 0.5 * _LOG_2PI).sum(axis=2)
        return np.zeros(logl.shape, dtype=int), logl

    def score(self, x, points, t):
        """Per-data-point conditional scores, shape (n, K, d)."""
        kappa, _ = self.kappa(t)
        self._guard(kappa, "score")
        kappa = _time_col(kappa)
        kappa3 = kappa if np.ndim(kappa) == 0 else kappa[:, :, None]
        return (kappa3 * points[None, :, :] - x[:, None, :]) / (1.0 - kappa3) ** 2


@dataclass(frozen=True)
class ProductPath:
    """Column-wise product of factor paths, conditionally independent given z."""

    parts: tuple = field(default_factory=tuple)
    kind = "product"

    def __post_init__(self):
        if not self.parts:
            raise ShapeError("a product path needs at least one factor")
        object.__setattr__(self, "parts", tuple(self.parts))

    @property
    def factors(self):
        return list(self.parts)

    @property
    def dim(self):
        return sum(p.dim for p in self.parts)

    @property
    def vocab(self):
        return np.concatenate([p.vocab for p in self.parts])

    @property
    def schedule(self):
        return self.parts[0].schedule

    def slices(self):
        out, start = [], 0
        for p in self.parts:
            out.append(slice(start, start + p.dim))
            start += p.dim
        return out

    def sample_prior(self, n, rng):
        return np.concatenate([p.sample_prior(n, rng) for p in self.parts], axis=1)

    def sample_cond(self, z, t, rng):
        z = _as_batch(z, self.dim)
        return np.concatenate(
            [p.sample_cond(z[:, s], t, rng) for p, s in zip(self.parts, self.slices())], axis=1
        )

    def posterior_key(self, x, points):
        keys = []
        for p, s in zip(self.parts, self.slices()):
            if not hasattr(p, "posterior_key"):
                return None
            keys.append(p.posterior_key(x[:, s], points[:, s]))
        return np.column_stack(keys)

    def loglik(self, x, points, t):
        order, logl = 0, 0.0
        for p, s in zip(self.parts, self.slices()):
            o, l = p.loglik(x[:, s], points[:, s], t)
            order = order + o
            logl = logl + l
        return order, logl


def path_slices(path):
    """(factor, column slice) pairs for any path."""
    if isinstance(path, ProductPath):
        return list(zip(path.parts, path.slices()))
    return [(path, slice(0, path.dim))]


@dataclass
class Dataset:
    """An empirical data distribution: atoms ``points`` (K, d) with ``weights``.

    Weights are normalized on construction; token columns store integer values
    as floats.
    """

    points: np.ndarray
    weights: np.ndarray = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts.reshape(-1, 1)
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise ShapeError("dataset points must be a non-empty (K, d) array")
        w = np.ones(len(pts)) if self.weights is None else np.asarray(self.weights, dtype=float)
        if w.shape != (len(pts),):
            raise ShapeError("one weight per data point is required")
        if np.any(w < 0) or not np.all(np.isfinite(w)) or w.sum() <= 0:
            raise DomainError("dataset weights must be nonnegative with positive sum")
        self.points = pts
        self.weights = w / w.sum()

    def __len__(self):
        return len(self.points)

    @property
    def dim(self):
        return self.points.shape[1]

    def sample(self, n, rng):
        idx = rng.choice(len(self.points), size=n, p=self.weights)
        return self.points[idx], idx

    @classmethod
    def two_point(cls, a=-1.0, b=1.0, weights=None):
        return cls(np.array([[a], [b]]), weights)

    @classmethod
    def checkerboard(cls, resolution=16, squares=4, lo=-1.0, hi=1.0):
        """Cell centers of a ``resolution`` x ``resolution`` grid on [lo, hi]^2
        lying in the dark squares of a ``squares`` x ``squares`` board."""
        if resolution % squares:
            raise DomainError("resolution must be a multiple of the board size")
        step = (hi - lo) / resolution
        centers = lo + step * (np.arange(resolution) + 0.5)
        per = resolution // squares
        pts = [
            (centers[i], centers[j])
            for i in range(resolution)
            for j in range(resolution)
            if (i // per + j // per) % 2 == 0
        ]
        return cls(np.array(pts))

    @classmethod
    def tokens(cls, probs):
        """Distribution over tokens 0..N-1 with the given probabilities."""
        probs = np.asarray(probs, dtype=float)
        return cls(np.arange(len(probs), dtype=float).reshape(-1, 1), probs)

    @classmethod
    def from_csv(cls, path, weight_column=False):
        rows = []
        with open(path, newline="") as fh:
            for lineno, row in enumerate(csv.reader(fh), start=1):
                if not row or row[0].lstrip().startswith("#"):
                    continue
                try:
                    rows.append([float(v) for v in row])
                except ValueError:
                    if not rows:  # header
                        continue
                    raise DomainError(f"{path}:{lineno}: non-numeric value") from None
        if not rows:
            raise ShapeError(f"{path}: no data rows")
        arr = np.array(rows)
        if weight_column:
            return cls(arr[:, :-1], arr[:, -1])
        return cls(arr)

    def to_csv(self, path, weight_column=True):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            for p, w in zip(self.points, self.weights):
                writer.writerow([repr(float(v)) for v in p] + ([repr(float(w))] if weight_column else []))

    def coordinate_values(self):
        """Sorted distinct coordinate values over all columns."""
        return np.unique(self.points)


def sample_cond(path, z, t, rng, n=None):
    """Draw x ~ p_t(.|z); ``z`` is one state or a batch (n, d)."""
    if not (0.0 <= float(np.min(t)) and float(np.max(t)) <= 1.0):
        raise DomainError("t must lie in [0, 1]")
    z = _as_batch(z, path.dim)
    if n is not None:
        z = np.broadcast_to(z, (n, path.dim))
    return path.sample_cond(z, t, rng)


def cond_density(path, z, t, x):
    """Per-column ``(continuous_part, atom_mass_at_z)``."""
    return path.cond_density(z, t, x)


def cond_density_dt(path, z, t, x):
    """Per-column time derivative of :func:`cond_density`."""
    return path.cond_density_dt(z, t, x)


def posterior_weights(path, data, t, x):
    """Posterior p(z_k | x) over the data atoms, shape (n, K) or (K,).

    Computed in log space with max subtraction; for mixture columns a
    coincidence with an atom dominates the continuous part.
    """
    if data.dim != path.dim:
        raise ShapeError("dataset and path signatures differ")
    single = np.ndim(x) <= 1 and np.size(x) == path.dim
    xb = _as_batch(x, path.dim)
    key = None
    if np.ndim(t) == 0 and hasattr(path, "posterior_key"):
        key = path.posterior_key(xb, data.points)
    if key is not None and len(xb) > 1:
        # the posterior depends on x only through the key, so evaluate each
        # distinct key once
        _, first, inv = np.unique(key, axis=0, return_index=True, return_inverse=True)
        w = _posterior(path, data, t, xb[first])[inv.ravel()]
    else:
        w = _posterior(path, data, t, xb)
    return w[0] if single else w


def _posterior(path, data, t, xb):
    order, logl = path.loglik(xb, data.points, t)
    order = np.broadcast_to(order, logl.shape)
    with np.errstate(divide="ignore"):
        logw = logl + np.log(data.weights)[None, :]
    logw = np.where(order == order.max(axis=1, keepdims=True), logw, -np.inf)
    top = logw.max(axis=1, keepdims=True)
    if np.any(~np.isfinite(top)):
        raise EmptyPosteriorError("no data point has positive likelihood at x")
    w = np.exp(logw - top)
    w /= w.sum(axis=1, keepdims=True)
    return w
