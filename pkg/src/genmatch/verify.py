"""Independent oracles: KFE residuals, a CTMC ODE oracle, two-sample
statistics and the conditional/marginal gradient-equality experiment."""
import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .errors import CoverageError, DomainError, InstabilityError, ShapeError
from .generators import (
    CondOTFlow,
    CondOTJump,
    CTMCMixture,
    DensityJump,
    GenOut,
    JumpBins,
    MixtureDiffusion,
    MixtureFlow,
    MixtureJump,
    condot_roots,
    trapezoid_weights,
)
from .marginal import MarginalModel, marginal_genout
from .paths import Dataset, GeometricAverage, MixtureDiscrete, MixtureUniform

# --------------------------------------------------------------------------
# test functions


@dataclass(frozen=True)
class TestFunction:
    """A smooth scalar function with its first two derivatives."""

    __test__ = False  # keep pytest from collecting this class

    name: str
    f: object
    df: object
    d2f: object


def _tf(name, f, df, d2f):
    return TestFunction(name, f, df, d2f)


CONSTANT = _tf("one", lambda x: np.ones_like(x), lambda x: np.zeros_like(x), lambda x: np.zeros_like(x))


def battery():
    """x, x^2, x^3, exp(-x^2/2), sin(x), sin(2x) and tanh(x)."""
    def gauss(x):
        return np.exp(-0.5 * x * x)

    def sech2(x):
        return 1.0 / np.cosh(x) ** 2

    fs = [
        _tf("x", lambda x: x, np.ones_like, np.zeros_like),
        _tf("x^2", lambda x: x * x, lambda x: 2.0 * x, lambda x: np.full_like(x, 2.0)),
        _tf("x^3", lambda x: x**3, lambda x: 3.0 * x * x, lambda x: 6.0 * x),
        _tf("gauss", gauss, lambda x: -x * gauss(x), lambda x: (x * x - 1.0) * gauss(x)),
        _tf("tanh", np.tanh, sech2, lambda x: -2.0 * np.tanh(x) * sech2(x)),
    ]
    for w in (1.0, 2.0):
        fs.append(_tf(f"sin{w:g}x", lambda x, w=w: np.sin(w * x), lambda x, w=w: w * np.cos(w * x), lambda x, w=w: -w * w * np.sin(w * x)))
    return fs


def neumann(tf, a1, a2):
    """tf composed with a smooth map of [a1, a2] onto itself whose derivative
    vanishes at both ends; such functions satisfy reflecting boundary
    conditions."""
    w = a2 - a1

    def phi(x):
        return a1 + 0.5 * w * (1.0 - np.cos(np.pi * (x - a1) / w))

    def dphi(x):
        return 0.5 * np.pi * np.sin(np.pi * (x - a1) / w)

    def d2phi(x):
        return 0.5 * np.pi**2 / w * np.cos(np.pi * (x - a1) / w)

    return _tf(
        f"{tf.name}@neumann",
        lambda x: tf.f(phi(x)),
        lambda x: tf.df(phi(x)) * dphi(x),
        lambda x: tf.d2f(phi(x)) * dphi(x) ** 2 + tf.df(phi(x)) * d2phi(x),
    )


class ProductTestFunction:
    """f(x) = prod_d f_d(x_d) for states with several columns."""

    def __init__(self, factors):
        self.factors = list(factors)
        self.name = "*".join(f.name for f in self.factors)


def _factors(tf, d):
    if isinstance(tf, ProductTestFunction):
        if len(tf.factors) != d:
            raise ShapeError("test function and state dimensions differ")
        return tf.factors
    if d != 1:
        raise ShapeError("use a ProductTestFunction for multi-column states")
    return [tf]


def apply_generator(g, tf, x):
    """(L f)(x) for the generator with linear parameterization g, per row of x."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, 1) if g.dim == 1 else x.reshape(1, -1)
    n, d = x.shape
    if d != g.dim:
        raise ShapeError("state and generator dimensions differ")
    facs = _factors(tf, d)
    vals = np.column_stack([f.f(x[:, j]) for j, f in enumerate(facs)])
    out = np.zeros(n)
    for j, f in enumerate(facs):
        rest = np.prod(np.delete(vals, j, axis=1), axis=1) if d > 1 else 1.0
        term = np.zeros(n)
        if g.vocab[j] == 0:
            if g.velocity is not None:
                term += g.velocity[:, j] * f.df(x[:, j])
            if g.diffusion is not None:
                term += 0.5 * g.diffusion[:, j] * f.d2f(x[:, j])
            if g.jump_rate is not None:
                probs = np.broadcast_to(g.jump_probs, (n,) + g.jump_probs.shape[1:])[:, j]
                mean_f = probs @ f.f(g.bins.centers)
                term += g.jump_rate[:, j] * (mean_f - vals[:, j])
        elif g.rates is not None:
            N = g.vocab[j]
            fy = f.f(np.arange(N, dtype=float))
            term += g.rates[:, j, :N] @ fy - g.rates[:, j, :N].sum(axis=1) * vals[:, j]
        out += term * rest
    return out


# --------------------------------------------------------------------------
# quadrature


@dataclass
class QuadratureGrid:
    """Sorted nodes with positive weights; atoms are added by the caller."""

    nodes: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        if self.nodes.shape != self.weights.shape or self.nodes.ndim != 1:
            raise ShapeError("nodes and weights must be matching 1D arrays")
        if np.any(np.diff(self.nodes) < 0):
            raise ShapeError("quadrature nodes must be sorted")

    @property
    def lo(self):
        return self.nodes[0]

    @property
    def hi(self):
        return self.nodes[-1]

    @classmethod
    def uniform(cls, lo, hi, n=4001):
        nodes = np.linspace(lo, hi, n)
        return cls(nodes, trapezoid_weights(nodes))

    @classmethod
    def segments(cls, lo, hi, breaks=(), n=4001, gap=1e-8):
        """Trapezoid rule on [lo, hi] split at ``breaks``, leaving a gap of
        ``gap`` on each side of every break so no node sits on a jump."""
        cuts = sorted(float(b) for b in np.ravel(breaks) if lo + gap < b < hi - gap)
        edges = [lo] + cuts + [hi]
        spans = [(a + (gap if i > 0 else 0.0), b - (gap if i < len(edges) - 2 else 0.0)) for i, (a, b) in enumerate(zip(edges[:-1], edges[1:]))]
        total = sum(b - a for a, b in spans)
        nodes, weights = [], []
        for a, b in spans:
            k = max(5, int(round(n * (b - a) / total)))
            seg = np.linspace(a, b, k)
            nodes.append(seg)
            weights.append(trapezoid_weights(seg))
        return cls(np.concatenate(nodes), np.concatenate(weights))

    @classmethod
    def discrete(cls, N):
        return cls(np.arange(N, dtype=float), np.ones(N))


def default_grid(path, z, t, breaks=(), n=4001, width=8.0):
    if path.kind == "geometric":
        kappa, _ = path.kappa(t)
        m, sd = kappa * z, 1.0 - kappa
        return QuadratureGrid.segments(m - width * sd, m + width * sd, breaks, n)
    if path.kind == "mixture_uniform":
        return QuadratureGrid.segments(path.a1, path.a2, breaks, n)
    if path.kind == "mixture_discrete":
        return QuadratureGrid.discrete(path.vocab_size)
    raise DomainError(f"no default grid for {path.kind}")


def _check_coverage(path, z, t, grid):
    if path.kind == "geometric":
        p, _ = path.cond_density(z, t, grid.nodes)
        mass = float(p @ grid.weights)
        if abs(mass - 1.0) > 1e-6:
            raise CoverageError(f"grid captures density mass {mass:.8f}")
    elif path.kind == "mixture_uniform":
        if grid.lo > path.a1 + 1e-6 or grid.hi < path.a2 - 1e-6:
            raise CoverageError("grid does not span the prior support")
    elif path.kind == "mixture_discrete":
        if grid.nodes.size != path.vocab_size:
            raise CoverageError("grid must enumerate the vocabulary")


def _expectation(path, z, t, grid, node_vals, atom_val=0.0, with_dt=False):
    """<p_t(.|z), h> (or its time derivative) for h given on the nodes and at
    the atom z of mixture paths."""
    dens = path.cond_density_dt if with_dt else path.cond_density
    cont, _ = dens(z, t, grid.nodes)
    total = (cont * grid.weights) @ node_vals
    if path.kind in ("mixture_uniform", "mixture_discrete"):
        _, atom = dens(z, t, np.array([z]))
        total = total + float(atom[0]) * atom_val
    return float(total)


def kfe_residual(path, cond_gen, z, t, fset=None, grid=None, method="analytic", fd_step=1e-4, detail=False):
    """max_f |d/dt <p_t(.|z), f> - <p_t(.|z), L_t f>| for a one-column path.

    ``method="fd"`` replaces the analytic time derivative by a central
    difference of the expectation in t.
    """
    if not 0.05 - 1e-12 <= t <= 0.9 + 1e-12:
        raise DomainError("kfe_residual is checked for 0.05 <= t <= 0.9")
    if path.dim != 1:
        raise ShapeError("kfe_residual works on one-column factor paths")
    z = float(z)
    fset = fset if fset is not None else battery()
    if grid is None:
        grid = default_grid(path, z, t, cond_gen.breakpoints(path, z, t))
    _check_coverage(path, z, t, grid)
    nodes = grid.nodes
    has_atom = path.kind != "geometric"
    g_nodes = cond_gen(path, z, t, nodes.reshape(-1, 1))
    g_atom = cond_gen(path, z, t, np.array([[z]])) if has_atom else None
    zz = np.array([z])
    res = {}
    for tf in fset:
        f_atom = float(tf.f(zz)[0])
        if method == "analytic":
            lhs = _expectation(path, z, t, grid, tf.f(nodes), f_atom, with_dt=True)
        else:
            hi = _expectation(path, z, t + fd_step, grid, tf.f(nodes), f_atom)
            lo = _expectation(path, z, t - fd_step, grid, tf.f(nodes), f_atom)
            lhs = (hi - lo) / (2 * fd_step)
        lf_atom = float(apply_generator(g_atom, tf, zz.reshape(1, 1))[0]) if has_atom else 0.0
        rhs = _expectation(path, z, t, grid, apply_generator(g_nodes, tf, nodes.reshape(-1, 1)), lf_atom)
        res[tf.name] = lhs - rhs
    worst = max(abs(v) for v in res.values())
    return (worst, res) if detail else worst


class Scaled:
    """A conditional generator with every component multiplied by ``factor``
    (negative control)."""

    def __init__(self, gen, factor):
        self.gen, self.factor = gen, factor
        self.name = f"{gen.name}x{factor:g}"

    def breakpoints(self, path, z, t):
        return self.gen.breakpoints(path, z, t)

    def __call__(self, path, z, t, x):
        g = self.gen(path, z, t, x)
        c = self.factor
        return GenOut(
            g.vocab,
            None if g.velocity is None else c * g.velocity,
            None if g.diffusion is None else c * g.diffusion,
            None if g.jump_rate is None else c * g.jump_rate,
            g.jump_probs,
            g.bins,
            None if g.rates is None else c * g.rates,
        )


class AlignedCondOTJump:
    """CondOT jump whose bins span the destination support for each (z, t)."""

    name = "jump"

    def __init__(self, count=1024):
        self.count = count
        self.base = CondOTJump()

    def breakpoints(self, path, z, t):
        return self.base.breakpoints(path, z, t)

    def __call__(self, path, z, t, x):
        lo, hi = condot_roots(z, t, path.schedule)
        return self.base(path, z, t, x, bins=JumpBins(float(lo), float(hi), self.count))


TS = tuple(np.round(np.arange(0.05, 0.9 + 1e-9, 0.05), 10))
ZS = (-1.0, 0.0, 1.5)
DISCRETE_N = 5
DISCRETE_ZS = (0, 1, DISCRETE_N - 1)


def kfe_pairs(bins=1024):
    """(name, path, generator, threshold, test-function map, z values)."""
    geo = GeometricAverage()
    mix = MixtureUniform(-2.0, 2.0)
    disc = MixtureDiscrete(DISCRETE_N)
    plain = battery()
    reflected = [neumann(f, mix.a1, mix.a2) for f in plain]
    return [
        ("condot/flow", geo, CondOTFlow(), 1e-4, plain, ZS),
        ("condot/jump", geo, AlignedCondOTJump(bins), 1e-3, plain, ZS),
        ("mixture/flow", mix, MixtureFlow(), 1e-4, plain, ZS),
        ("mixture/diffusion", mix, MixtureDiffusion(), 1e-4, reflected, ZS),
        ("mixture/jump", mix, MixtureJump(), 1e-4, plain, ZS),
        ("mixture_discrete/ctmc", disc, CTMCMixture(), 1e-4, plain, DISCRETE_ZS),
        ("mixture/density_jump", mix, DensityJump(), 1e-4, plain, ZS),
    ]


def kfe_suite(ts=TS, bins=1024, negative_control=True, pairs=None):
    """Residual report for every implemented (path, generator) pair."""
    report = []
    for name, path, gen, thr, fset, zs in pairs or kfe_pairs(bins):
        worst, neg = 0.0, math.inf
        for t in ts:
            for z in zs:
                worst = max(worst, kfe_residual(path, gen, z, float(t), fset))
                if negative_control:
                    neg = min(neg, kfe_residual(path, Scaled(gen, 2.0), z, float(t), fset))
        row = {"pair": name, "max_residual": worst, "threshold": thr, "pass": worst <= thr}
        if negative_control:
            row["negative_control_min"] = neg
            row["negative_control_pass"] = neg >= 10 * thr
        report.append(row)
    return report


# --------------------------------------------------------------------------
# CTMC oracle


def ctmc_oracle(rate_fn, p0, n_steps, t0=0.0, t1=1.0, times=None):
    """RK4 integration of dp/dt = p Q_t (rows of Q_t are the rate rows of
    each source state). Returns ``(times, trajectory, max_drift)``; extra
    ``times`` are inserted into the uniform grid."""
    p = np.asarray(p0, dtype=float).copy()
    if abs(p.sum() - 1.0) > 1e-9 or np.any(p < 0):
        raise DomainError("p0 must be a probability vector")
    grid = np.linspace(t0, t1, n_steps + 1)
    if times is not None:
        grid = np.unique(np.concatenate([grid, [tt for tt in times if t0 <= tt <= t1]]))

    def f(t, v):
        Q = np.asarray(rate_fn(t), dtype=float)
        return v @ Q

    traj, drift = [p.copy()], 0.0
    for a, b in zip(grid[:-1], grid[1:]):
        h = b - a
        k1 = f(a, p)
        k2 = f(a + h / 2, p + h / 2 * k1)
        k3 = f(a + h / 2, p + h / 2 * k2)
        k4 = f(b, p + h * k3)
        p = p + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if np.any(p < -1e-9):
            raise InstabilityError(f"negative probability at t={b:.6g}; reduce the step")
        drift = max(drift, abs(p.sum() - 1.0))
        p = np.maximum(p, 0.0)
        p /= p.sum()
        traj.append(p.copy())
    return grid, np.array(traj), drift


def marginal_rate_matrix(model, t):
    """Rate rows of a one-column token model at every source token."""
    N = int(model.vocab[0])
    g = model(t, np.arange(N, dtype=float).reshape(-1, 1))
    return g.rates[:, 0, :N]


# --------------------------------------------------------------------------
# two-sample statistics


def _hist(x, edges):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    inside = np.all([(x[:, j] >= e[0]) & (x[:, j] <= e[-1]) for j, e in enumerate(edges)], axis=0)
    h, _ = np.histogramdd(x[inside], bins=edges)
    return np.append(h.ravel(), np.count_nonzero(~inside))


def tv_hist(samples, reference, edges, weights=None):
    """Half the L1 distance between normalized histograms (with an overflow bin).

    ``reference`` is a sample array, a :class:`Dataset` (atoms with weights)
    or, for one column, a density callable integrated over each bin.
    """
    samples = np.asarray(samples, dtype=float)
    if samples.shape[0] < 1000:
        raise DomainError("tv_hist needs at least 1000 samples")
    if isinstance(edges, np.ndarray) and edges.ndim == 1:
        edges = [edges]
    edges = [np.asarray(e, dtype=float) for e in edges]
    if not edges or any(e.size < 2 for e in edges):
        raise ShapeError("bin edges are empty")
    p = _hist(samples, edges)
    p = p / p.sum()
    if isinstance(reference, Dataset):
        pts = reference.points
        inside = np.all([(pts[:, j] >= e[0]) & (pts[:, j] <= e[-1]) for j, e in enumerate(edges)], axis=0)
        h, _ = np.histogramdd(pts[inside], bins=edges, weights=reference.weights[inside])
        q = np.append(h.ravel(), reference.weights[~inside].sum())
    elif callable(reference):
        if len(edges) != 1:
            raise ShapeError("density references are one-dimensional")
        e = edges[0]
        q = np.empty(e.size - 1)
        for i, (a, b) in enumerate(zip(e[:-1], e[1:])):
            xs = np.linspace(a, b, 65)
            q[i] = trapezoid_weights(xs) @ reference(xs)
        q = np.append(q, max(0.0, 1.0 - q.sum()))
    else:
        q = _hist(reference, edges)
    q = q / q.sum()
    return 0.5 * float(np.abs(p - q).sum())


def _mean_dist(A, B, same, block=1000):
    total, count = 0.0, 0
    for i in range(0, len(A), block):
        D = cdist(A[i : i + block], B)
        total += D.sum()
        count += D.size
    if same:
        count -= len(A)  # zero diagonal terms are excluded
    return total / count


def energy_distance(A, B, max_n=5000, seed=0):
    """2 E|a - b| - E|a - a'| - E|b - b'| (U-statistics within each set).
    Larger sets are subsampled to ``max_n`` points with a fixed seed."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    A = A.reshape(len(A), -1)
    B = B.reshape(len(B), -1)
    if len(A) == 0 or len(B) == 0:
        raise ShapeError("energy distance needs nonempty samples")
    rng = np.random.default_rng(seed)
    if len(A) > max_n:
        A = A[rng.choice(len(A), max_n, replace=False)]
    if len(B) > max_n:
        B = B[rng.choice(len(B), max_n, replace=False)]
    ab = _mean_dist(A, B, False)
    aa = _mean_dist(A, A, True) if len(A) > 1 else 0.0
    bb = _mean_dist(B, B, True) if len(B) > 1 else 0.0
    return max(0.0, 2.0 * ab - aa - bb)


# --------------------------------------------------------------------------
# conditional vs marginal gradients


def default_features(x, t):
    """[1, x, t, x t] for one column."""
    x = np.asarray(x, dtype=float).reshape(-1)
    t = np.broadcast_to(np.asarray(t, dtype=float).reshape(-1), x.shape)
    return np.column_stack([np.ones_like(x), x, t, x * t])


def gm_gradient(path, data, cond_gen, features, theta, t_eps=1e-3, n_t=96, n_x=64):
    """Exact GM gradient of E ||features @ theta - u_t(x)||^2 for the
    geometric-average path, by Gauss-Legendre in t and Gauss-Hermite per
    mixture component in x."""
    if not isinstance(path, GeometricAverage) or path.dim != 1:
        raise DomainError("the exact GM gradient is implemented for the 1D geometric-average path")
    tg, tw = np.polynomial.legendre.leggauss(n_t)
    tg = t_eps + (1 - 2 * t_eps) * (tg + 1) / 2
    tw = tw / 2  # expectation under Unif[eps, 1 - eps]
    xg, xw = np.polynomial.hermite.hermgauss(n_x)
    model = MarginalModel(path, data, cond_gen)
    grad = np.zeros_like(theta, dtype=float)
    for t, wt in zip(tg, tw):
        kappa, _ = path.kappa(t)
        xs = (kappa * data.points[:, 0][:, None] + (1 - kappa) * math.sqrt(2.0) * xg[None, :]).ravel()
        ws = (data.weights[:, None] * xw[None, :] / math.sqrt(math.pi)).ravel()
        u = marginal_genout(model, t, xs.reshape(-1, 1)).velocity[:, 0]
        phi = features(xs, t)
        grad += wt * 2.0 * phi.T @ (ws * (phi @ theta - u))
    return grad


def cgm_gradient(path, data, cond_gen, features, theta, M, rng, t_eps=1e-3, chunk=250_000):
    """Monte Carlo CGM gradient and its per-coordinate standard error."""
    s1 = np.zeros_like(theta, dtype=float)
    s2 = np.zeros_like(theta, dtype=float)
    done = 0
    while done < M:
        m = min(chunk, M - done)
        t = rng.uniform(t_eps, 1 - t_eps, m)
        z, _ = data.sample(m, rng)
        x = path.sample_cond(z, t, rng)
        u = cond_gen(path, z, t[:, None], x).velocity[:, 0]
        phi = features(x[:, 0], t)
        per = 2.0 * phi * (phi @ theta - u)[:, None]
        s1 += per.sum(axis=0)
        s2 += (per**2).sum(axis=0)
        done += m
    mean = s1 / M
    se = np.sqrt(np.maximum(s2 / M - mean**2, 0.0) / M)
    return mean, se


def gradient_equality_check(path, data, cond_gen, features=default_features, M=1_000_000, rng=None, theta=None, t_eps=1e-3):
    """Compare the exact GM gradient to the Monte Carlo CGM gradient at one
    parameter vector of a linear model; returns cosine similarity, max
    coordinate gap and the standard error at that coordinate."""
    rng = rng if rng is not None else np.random.default_rng(0)
    k = features(np.zeros(1), 0.5).shape[1]
    theta = np.asarray(theta, dtype=float) if theta is not None else np.random.default_rng(12345).standard_normal(k)
    g_gm = gm_gradient(path, data, cond_gen, features, theta, t_eps)
    g_cgm, se = cgm_gradient(path, data, cond_gen, features, theta, M, rng, t_eps)
    gap = np.abs(g_gm - g_cgm)
    j = int(np.argmax(gap))
    cos = float(g_gm @ g_cgm / (np.linalg.norm(g_gm) * np.linalg.norm(g_cgm)))
    return {"cosine": cos, "max_gap": float(gap[j]), "se": float(se[j]), "gm": g_gm, "cgm": g_cgm}
