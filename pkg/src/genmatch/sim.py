"""Simulation of Markov processes from generator fields.

``euler_step`` is the universal sampler: per Euclidean column it either jumps
(with a probability set by the jump schedule) or takes a drift-diffusion step;
token columns step with (I + hQ). ``simulate`` runs a model from its prior on
a uniform grid, stopping one step short of t = 1.
"""
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, StepSizeError
from .generators import CondOTJump, ProductGenerator, Superposed
from .marginal import reflection_bounds

SCHEDULES = ("auto", "linear_hazard", "condot_survival")


def jump_survival(lam, t, h):
    """No-jump probability over [t, t + h] for an intensity scaling like (1 - t)^-3."""
    if np.any(np.asarray(t + h) >= 1.0):
        raise DomainError("jump_survival needs t + h < 1")
    lam = np.asarray(lam, dtype=float)
    s = 1.0 - t
    return np.exp(0.5 * lam * s * (1.0 - s * s / (s - h) ** 2))


def reflect(x, a1, a2):
    """Fold x into [a1, a2] by repeated reflection at the boundaries."""
    w = a2 - a1
    y = np.mod(np.asarray(x, dtype=float) - a1, 2.0 * w)
    y = np.where(y > w, 2.0 * w - y, y)
    out = a1 + y
    return float(out) if np.ndim(out) == 0 else out


def _categorical(probs, rng):
    """One draw per row of the trailing axis via the inverse CDF."""
    cum = np.cumsum(probs, axis=-1)
    u = rng.random(probs.shape[:-1])[..., None] * cum[..., -1:]
    return np.minimum((cum <= u).sum(axis=-1), probs.shape[-1] - 1)


def ctmc_probs(tokens, rates, h):
    """Transition probabilities e_tok + h * rate_row; raises StepSizeError if
    the stay probability turns negative."""
    tokens = np.asarray(tokens).astype(int)
    probs = h * np.asarray(rates, dtype=float)
    stay = np.take_along_axis(probs, tokens[..., None], axis=-1) + 1.0
    if np.any(stay < -1e-12):
        out = -np.take_along_axis(np.asarray(rates, dtype=float), tokens[..., None], axis=-1)
        raise StepSizeError("step too large for the CTMC rates", suggested_h=float(0.5 / out.max()))
    np.put_along_axis(probs, tokens[..., None], np.maximum(stay, 0.0), axis=-1)
    return np.maximum(probs, 0.0)


def ctmc_step(tok, rate_row, h, rng):
    """Sample the next token of a CTMC after one Euler step."""
    probs = ctmc_probs(np.asarray(tok), np.asarray(rate_row, dtype=float), h)
    nxt = _categorical(probs, rng)
    return int(nxt) if np.ndim(nxt) == 0 else nxt


@dataclass
class StepStats:
    clamps: int = 0
    jumps: int = 0

    def add(self, other):
        self.clamps += other.clamps
        self.jumps += other.jumps


def euler_step(x, g, t, h, rng, jump_schedule="linear_hazard", bounds=None, stats=None):
    """One step of the universal Euler sampler from time t to t + h."""
    if h <= 0:
        raise DomainError("step size must be positive")
    if t + h > 1.0 + 1e-12:
        raise DomainError("t + h exceeds 1")
    x = np.array(x, dtype=float, copy=True)
    if x.ndim == 1:
        x = x.reshape(1, -1)
    n, d = x.shape
    euc = g.vocab == 0
    jumped = np.zeros((n, d), dtype=bool)
    if g.jump_rate is not None:
        lam = np.where(euc, g.jump_rate, 0.0)
        if jump_schedule == "condot_survival":
            p = 1.0 - jump_survival(lam, t, h)
        else:
            p = h * lam
            if stats is not None:
                stats.clamps += int(np.count_nonzero(p > 1.0))
            p = np.clip(p, 0.0, 1.0)
        jumped = rng.random((n, d)) < p
        if np.any(jumped):
            rows, cols = np.nonzero(jumped)
            probs = np.broadcast_to(g.jump_probs, (n, d, g.jump_probs.shape[2]))[rows, cols]
            x[rows, cols] = g.bins.centers[_categorical(probs, rng)]
            if stats is not None:
                stats.jumps += rows.size
    move = euc & ~jumped
    if g.velocity is not None:
        x = np.where(move, x + h * g.velocity, x)
    if g.diffusion is not None:
        eps = rng.standard_normal((n, d))
        x = np.where(move, x + np.sqrt(h * np.maximum(g.diffusion, 0.0)) * eps, x)
    if np.any(~euc) and g.rates is not None:
        tok = ~euc
        rates = g.rates[:, tok]
        x[:, tok] = _categorical(ctmc_probs(x[:, tok], rates, h), rng)
    if bounds is not None:
        lo, hi = bounds
        fin = np.isfinite(lo) & euc
        if np.any(fin):
            x[:, fin] = reflect(x[:, fin], lo[fin], hi[fin])
    return x


@dataclass
class SimConfig:
    """Sampler settings. The run stops at ``t_end`` (default 1 - h);
    ``record_times`` adds grid points at which the state is stored."""

    n_steps: int = 500
    n_samples: int = 1000
    seed: int = 0
    record_trajectories: bool = False
    reflection_bounds: object = "auto"
    jump_schedule: str = "auto"
    t_end: float = None
    record_times: tuple = ()
    chunk_size: int = 4096
    threads: int = 1

    def __post_init__(self):
        if self.n_steps < 1 or self.n_samples < 1 or self.chunk_size < 1:
            raise DomainError("n_steps, n_samples and chunk_size must be positive")
        if self.jump_schedule not in SCHEDULES:
            raise DomainError(f"jump_schedule must be one of {SCHEDULES}")

    @property
    def h(self):
        return 1.0 / self.n_steps

    def time_grid(self):
        h = self.h
        end = self.t_end if self.t_end is not None else 1.0 - h
        if self.n_steps == 1 and self.t_end is None:
            end = 1.0  # a single step is one full Euler displacement
        if not 0.0 < end <= 1.0:
            raise DomainError("t_end must lie in (0, 1]")
        k = int(math.floor(end / h + 1e-9))
        pts = [i * h for i in range(k + 1)] + [float(r) for r in self.record_times if 0 <= r <= end] + [end]
        pts = np.unique(np.round(np.array(pts), 12))
        return pts


@dataclass
class SimResult:
    samples: np.ndarray
    times: np.ndarray
    records: dict = field(default_factory=dict)
    trajectories: np.ndarray = None
    stats: StepStats = field(default_factory=StepStats)


def _uses_condot_jump(gen):
    if isinstance(gen, CondOTJump):
        return True
    if isinstance(gen, (Superposed, ProductGenerator)):
        return any(_uses_condot_jump(p) for p in gen.parts)
    return False


def resolve_schedule(model, cfg):
    if cfg.jump_schedule != "auto":
        return cfg.jump_schedule
    gen = getattr(model, "generator", None)
    path = getattr(model, "path", None)
    if gen is not None and _uses_condot_jump(gen) and path is not None and path.schedule.is_linear:
        return "condot_survival"
    return "linear_hazard"


def resolve_bounds(model, cfg):
    if cfg.reflection_bounds is None:
        return None
    if isinstance(cfg.reflection_bounds, str):
        path = getattr(model, "path", None)
        if path is None:
            return None
        lo, hi = reflection_bounds(path)
        return (lo, hi) if np.any(np.isfinite(lo)) else None
    a1, a2 = cfg.reflection_bounds
    d = model.dim
    return np.full(d, float(a1)), np.full(d, float(a2))


def _run_chunk(model, cfg, chunk, n, grid, schedule, bounds, record_idx):
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(chunk,)))
    x = model.sample_prior(n, rng)
    stats = StepStats()
    recs = {}
    traj = [x.copy()] if cfg.record_trajectories else None
    if 0 in record_idx:
        recs[0] = x.copy()
    for i in range(len(grid) - 1):
        t, h = grid[i], grid[i + 1] - grid[i]
        g = model(t, x)
        x = euler_step(x, g, t, h, rng, schedule, bounds, stats)
        if i + 1 in record_idx:
            recs[i + 1] = x.copy()
        if traj is not None:
            traj.append(x.copy())
    return x, recs, (np.stack(traj) if traj is not None else None), stats


def simulate(model, cfg):
    """Run ``cfg.n_samples`` independent trajectories of ``model``.

    Samples are processed in fixed chunks, each with its own random stream
    derived from (seed, chunk index), so the output does not depend on the
    number of worker threads.
    """
    grid = cfg.time_grid()
    schedule = resolve_schedule(model, cfg)
    bounds = resolve_bounds(model, cfg)
    record_idx = {int(np.argmin(np.abs(grid - r))) for r in cfg.record_times}
    sizes = [min(cfg.chunk_size, cfg.n_samples - s) for s in range(0, cfg.n_samples, cfg.chunk_size)]
    jobs = [(c, n) for c, n in enumerate(sizes)]

    def run(job):
        return _run_chunk(model, cfg, job[0], job[1], grid, schedule, bounds, record_idx)

    if cfg.threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(cfg.threads) as pool:
            parts = list(pool.map(run, jobs))
    else:
        parts = [run(j) for j in jobs]
    samples = np.concatenate([p[0] for p in parts], axis=0)
    stats = StepStats()
    for p in parts:
        stats.add(p[3])
    records = {float(grid[i]): np.concatenate([p[1][i] for p in parts], axis=0) for i in sorted(record_idx)}
    traj = np.concatenate([p[2] for p in parts], axis=1) if cfg.record_trajectories else None
    return SimResult(samples, grid, records, traj, stats)
