"""A small MLP field with hand-written backprop, Adam, and CGM training.

The network maps (x, t) to the linear parameterization of a generator through
typed heads: a velocity, a jump head (log-intensity and bin logits per
Euclidean column) and a CTMC head (rate logits plus a positive scale per token
column). Token inputs are one-hot encoded; time enters through sinusoidal
features sin(2^k pi t), cos(2^k pi t).
"""
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DivergenceError, DomainError, GMError, ShapeError, UnsupportedError
from .generators import GenOut, JumpBins
from .loss import cgm_loss

HEADS = ("velocity", "jump", "ctmc")
LOG_RATE_MAX = 50.0


def time_embedding(t, width):
    t = np.asarray(t, dtype=float).reshape(-1, 1)
    freq = np.pi * 2.0 ** np.arange(width // 2)
    return np.concatenate([np.sin(freq * t), np.cos(freq * t)], axis=1)


def silu(a):
    return a / (1.0 + np.exp(-a))


def silu_grad(a):
    s = 1.0 / (1.0 + np.exp(-a))
    return s * (1.0 + a * (1.0 - s))


def softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


class StateError(GMError):
    """An operation was called out of order."""


class FieldNet:
    """MLP with typed output heads approximating F_t(x)."""

    def __init__(self, vocab, width=64, depth=2, emb=16, heads=("velocity",), bins=None, seed=0, params=None):
        self.vocab = np.asarray(vocab, dtype=int).ravel()
        self.width, self.depth, self.emb = int(width), int(depth), int(emb)
        self.heads = tuple(heads)
        for h in self.heads:
            if h not in HEADS:
                raise DomainError(f"unknown head {h!r}")
        if emb % 2:
            raise DomainError("time embedding width must be even")
        self.bins = bins if bins is not None or "jump" not in self.heads else JumpBins(-2.0, 2.0, 128)
        tok = self.vocab[self.vocab > 0]
        if tok.size and np.any(tok != tok[0]):
            raise UnsupportedError("token columns must share one vocabulary size")
        self.n_euc = int(np.sum(self.vocab == 0))
        self.n_tok = int(tok.size)
        self.N = int(tok[0]) if tok.size else 0
        self.seed = seed
        self.params = params if params is not None else self._init(np.random.default_rng(seed))
        self._cache = None

    @property
    def dim(self):
        return self.vocab.size

    @property
    def in_width(self):
        return self.n_euc + self.n_tok * self.N + self.emb

    def _shapes(self):
        shapes = {}
        fan = self.in_width
        for i in range(self.depth):
            shapes[f"W{i}"], shapes[f"b{i}"] = (fan, self.width), (self.width,)
            fan = self.width
        if "velocity" in self.heads:
            shapes["Wv"], shapes["bv"] = (fan, self.n_euc), (self.n_euc,)
        if "jump" in self.heads:
            B = self.bins.count
            shapes["Wl"], shapes["bl"] = (fan, self.n_euc), (self.n_euc,)
            shapes["Wj"], shapes["bj"] = (fan, self.n_euc * B), (self.n_euc * B,)
        if "ctmc" in self.heads:
            shapes["Wr"], shapes["br"] = (fan, self.n_tok * self.N), (self.n_tok * self.N,)
            shapes["Ws"], shapes["bs"] = (fan, self.n_tok), (self.n_tok,)
        return shapes

    def _init(self, rng):
        params = {}
        for name, shape in self._shapes().items():
            if name.startswith("W"):
                params[name] = rng.standard_normal(shape) / math.sqrt(shape[0])
            else:
                params[name] = np.zeros(shape)
        return params

    def zero_params(self):
        for v in self.params.values():
            v[...] = 0.0

    def inputs(self, x, t):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(1, -1)
        if x.shape[1] != self.dim:
            raise ShapeError(f"network expects {self.dim} columns, got {x.shape[1]}")
        t = np.broadcast_to(np.asarray(t, dtype=float).reshape(-1), (x.shape[0],))
        if np.any(t < 0) or np.any(t > 1):
            raise DomainError("network time must lie in [0, 1]")
        parts = [x[:, self.vocab == 0]]
        if self.n_tok:
            tok = x[:, self.vocab > 0].astype(int)
            parts.append(np.eye(self.N)[tok].reshape(x.shape[0], -1))
        parts.append(time_embedding(t, self.emb))
        return np.concatenate(parts, axis=1)

    def forward(self, x, t):
        """Evaluate every head; activations are kept for :meth:`backward`."""
        p = self.params
        h = self.inputs(x, t)
        n = h.shape[0]
        hs, pre = [h], []
        for i in range(self.depth):
            a = h @ p[f"W{i}"] + p[f"b{i}"]
            h = silu(a)
            pre.append(a)
            hs.append(h)
        out = {}
        if "velocity" in self.heads:
            out["velocity"] = np.zeros((n, self.dim))
            out["velocity"][:, self.vocab == 0] = h @ p["Wv"] + p["bv"]
        if "jump" in self.heads:
            B = self.bins.count
            lam = np.exp(np.minimum(h @ p["Wl"] + p["bl"], LOG_RATE_MAX))
            probs = softmax((h @ p["Wj"] + p["bj"]).reshape(n, self.n_euc, B))
            out["jump_rate"] = np.zeros((n, self.dim))
            out["jump_rate"][:, self.vocab == 0] = lam
            out["jump_probs"] = np.full((n, self.dim, B), 1.0 / B)
            out["jump_probs"][:, self.vocab == 0] = probs
        if "ctmc" in self.heads:
            probs = softmax((h @ p["Wr"] + p["br"]).reshape(n, self.n_tok, self.N))
            scale = np.exp(np.minimum(h @ p["Ws"] + p["bs"], LOG_RATE_MAX))
            out["rate_probs"], out["rate_scale"] = probs, scale
            out["rates"] = scale[..., None] * probs
        self._cache = (hs, pre, out)
        return out

    def backward(self, upstream):
        """Parameter gradients given d loss / d output for the last forward."""
        if self._cache is None:
            raise StateError("backward called before forward")
        hs, pre, out = self._cache
        p = self.params
        h = hs[-1]
        n = h.shape[0]
        grads = {k: np.zeros_like(v) for k, v in p.items()}
        dh = np.zeros_like(h)

        def head(wname, bname, g):
            nonlocal dh
            grads[wname] += h.T @ g
            grads[bname] += g.sum(axis=0)
            dh = dh + g @ p[wname].T

        euc = self.vocab == 0
        if "velocity" in upstream and "velocity" in self.heads:
            head("Wv", "bv", np.asarray(upstream["velocity"])[:, euc])
        if "jump" in self.heads and ("jump_rate" in upstream or "jump_probs" in upstream):
            lam = out["jump_rate"][:, euc]
            probs = out["jump_probs"][:, euc]
            g_lam = np.asarray(upstream.get("jump_rate", np.zeros((n, self.dim))))
            g_lam = g_lam[:, euc] if g_lam.shape[1] == self.dim else g_lam
            raw = h @ p["Wl"] + p["bl"]
            head("Wl", "bl", g_lam * lam * (raw < LOG_RATE_MAX))
            g_p = np.asarray(upstream.get("jump_probs", np.zeros_like(probs)))
            g_p = g_p[:, euc] if g_p.shape[1] == self.dim else g_p
            dlog = probs * (g_p - (g_p * probs).sum(axis=-1, keepdims=True))
            head("Wj", "bj", dlog.reshape(n, -1))
        if "ctmc" in self.heads and "rates" in upstream:
            g = np.asarray(upstream["rates"])
            probs, scale = out["rate_probs"], out["rate_scale"]
            raw = h @ p["Ws"] + p["bs"]
            head("Ws", "bs", scale * (g * probs).sum(axis=-1) * (raw < LOG_RATE_MAX))
            gp = g * scale[..., None]
            dlog = probs * (gp - (gp * probs).sum(axis=-1, keepdims=True))
            head("Wr", "br", dlog.reshape(n, -1))
        for i in reversed(range(self.depth)):
            da = dh * silu_grad(pre[i])
            grads[f"W{i}"] += hs[i].T @ da
            grads[f"b{i}"] += da.sum(axis=0)
            dh = da @ p[f"W{i}"].T
        return grads

    def genout(self, x, t):
        """Network outputs packaged as a GenOut for the sampler."""
        out = self.forward(x, t)
        g = GenOut(self.vocab)
        if "velocity" in out:
            g.velocity = out["velocity"]
        if "jump_rate" in out:
            g.jump_rate, g.jump_probs, g.bins = out["jump_rate"], out["jump_probs"], self.bins
        if "rates" in out:
            x = np.asarray(x, dtype=float).reshape(-1, self.dim)
            tok = x[:, self.vocab > 0].astype(int)
            rates = out["rates"].copy()
            np.put_along_axis(rates, tok[..., None], 0.0, axis=-1)
            np.put_along_axis(rates, tok[..., None], -rates.sum(axis=-1, keepdims=True), axis=-1)
            g.rates = np.zeros((x.shape[0], self.dim, self.N))
            g.rates[:, self.vocab > 0] = rates
        return g

    def architecture(self):
        arch = {"vocab": self.vocab.tolist(), "width": self.width, "depth": self.depth, "emb": self.emb, "heads": list(self.heads)}
        if self.bins is not None and "jump" in self.heads:
            arch["bins"] = [self.bins.lo, self.bins.hi, self.bins.count]
        return arch

    def copy_params(self):
        return {k: v.copy() for k, v in self.params.items()}


def net_forward(net, x, t):
    return net.forward(x, t)


def net_backward(net, upstream):
    return net.backward(upstream)


def flatten(params):
    return np.concatenate([params[k].ravel() for k in sorted(params)])


@dataclass
class Adam:
    """Adam optimizer state over a dict of parameter arrays."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def step(self, params, grads):
        self.step_count += 1
        c1 = 1.0 - self.beta1**self.step_count
        c2 = 1.0 - self.beta2**self.step_count
        for k, g in grads.items():
            if k not in self.m:
                self.m[k] = np.zeros_like(g)
                self.v[k] = np.zeros_like(g)
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


@dataclass
class TrainConfig:
    steps: int = 5000
    batch_size: int = 256
    width: int = 64
    depth: int = 2
    emb: int = 16
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    t_eps: float = 1e-3
    head: str = "velocity"
    log_every: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.head not in HEADS:
            raise DomainError(f"head must be one of {HEADS}")
        if self.steps < 1 or self.batch_size < 1 or self.log_every < 1:
            raise DomainError("steps, batch_size and log_every must be positive")

    def digest(self):
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:16]


def train_model(cfg, path, data, cond_gen, d, rng=None, bins=None):
    """Fit a FieldNet head by minimizing the CGM loss.

    Returns ``(net, curve)`` where ``curve`` lists (step, mean loss over the
    preceding ``log_every`` steps). A non-finite loss raises DivergenceError
    carrying the parameters of the last logged step.
    """
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    if cfg.head == "jump" and bins is None:
        bins = getattr(cond_gen, "bins", None) or JumpBins(-2.0, 2.0, 128)
    net = FieldNet(path.vocab, cfg.width, cfg.depth, cfg.emb, heads=(cfg.head,), bins=bins, seed=cfg.seed)
    opt = Adam(cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
    curve, window = [], []
    good = net.copy_params()
    for step in range(1, cfg.steps + 1):
        loss, upstream, _ = cgm_loss(net, path, data, cond_gen, d, cfg.batch_size, rng, head=cfg.head, t_eps=cfg.t_eps)
        if not math.isfinite(loss):
            raise DivergenceError(f"non-finite loss at step {step}", checkpoint=good, step=step)
        opt.step(net.params, net.backward(upstream))
        window.append(loss)
        if step % cfg.log_every == 0:
            curve.append((step, float(np.mean(window))))
            window = []
            good = net.copy_params()
    return net, curve


class NetModel:
    """A trained network exposed with the model interface used by ``simulate``."""

    def __init__(self, net, path):
        self.net = net
        self.path = path

    @property
    def vocab(self):
        return self.net.vocab

    @property
    def dim(self):
        return self.net.dim

    def sample_prior(self, n, rng):
        return self.path.sample_prior(n, rng)

    def __call__(self, t, x):
        return self.net.genout(x, t)


def save_checkpoint(filename, net, meta=None):
    meta = dict(meta or {})
    meta["architecture"] = net.architecture()
    meta.setdefault("seed", net.seed)
    doc = {"meta": meta, "params": {k: net.params[k].tolist() for k in sorted(net.params)}}
    with open(filename, "w") as fh:
        json.dump(doc, fh, sort_keys=True)


def load_checkpoint(filename):
    with open(filename) as fh:
        doc = json.load(fh)
    arch = doc["meta"]["architecture"]
    bins = JumpBins(*arch["bins"]) if "bins" in arch else None
    params = {k: np.array(v, dtype=float) for k, v in doc["params"].items()}
    net = FieldNet(arch["vocab"], arch["width"], arch["depth"], arch["emb"], tuple(arch["heads"]), bins, doc["meta"].get("seed", 0), params)
    for k, shape in net._shapes().items():
        params[k] = params[k].reshape(shape)
    return net, doc["meta"]
