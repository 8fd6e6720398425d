"""Bregman divergences and the conditional generator matching (CGM) loss.

D(a, b) = phi(a) - phi(b) - <a - b, grad phi(b)> for a convex phi. Every
variant here is a sum of coordinatewise terms, so values reduce over the last
axis and gradients with respect to the prediction b are elementwise.
"""
from dataclasses import dataclass, field

import numpy as np
from scipy.special import xlogy

from .errors import DomainError, ShapeError

KINDS = ("mse", "rate_kl", "mse_cosh", "mse_exp", "product")
CLAMP = 30.0

# how often the exp/cosh argument hit the overflow clamp
saturation = {"count": 0}


@dataclass(frozen=True)
class Bregman:
    """A Bregman divergence. ``product`` sums its ``parts`` over consecutive
    coordinate blocks of the given sizes."""

    kind: str = "mse"
    alpha: float = 1.0
    mix: float = 0.5
    parts: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DomainError(f"unknown Bregman kind {self.kind!r}")
        if not 0.0 <= self.mix <= 1.0:
            raise DomainError("mix must lie in [0, 1]")
        if self.kind == "product" and not self.parts:
            raise DomainError("a product divergence needs parts")

    @classmethod
    def parse(cls, name):
        """``"mse"``, ``"rate_kl"``, ``"mse_cosh:<alpha>"`` or ``"mse_exp:<alpha>"``."""
        if isinstance(name, Bregman):
            return name
        name = str(name).strip().lower()
        if name in ("mse", "rate_kl"):
            return cls(name)
        for kind in ("mse_cosh", "mse_exp"):
            if name == kind:
                return cls(kind)
            if name.startswith(kind + ":"):
                try:
                    return cls(kind, float(name.split(":", 1)[1]))
                except ValueError:
                    raise DomainError(f"bad alpha in {name!r}") from None
        raise DomainError(f"unknown loss {name!r}")

    @property
    def name(self):
        if self.kind in ("mse_cosh", "mse_exp"):
            return f"{self.kind}:{self.alpha:g}"
        return self.kind


def product_sum(*parts):
    """Sum of divergences over coordinate blocks: ``parts`` are (Bregman, size)."""
    return Bregman("product", parts=tuple(parts))


def _clamped(d, v):
    arg = d.alpha * v
    over = np.abs(arg) > CLAMP
    if np.any(over):
        saturation["count"] += int(np.count_nonzero(over))
    return np.clip(arg, -CLAMP, CLAMP)


def _phi0(d, v):
    arg = _clamped(d, v)
    if d.kind == "mse_cosh":
        return np.cosh(arg), d.alpha * np.sinh(arg), d.alpha**2 * np.cosh(arg)
    e = np.exp(arg)
    return e, d.alpha * e, d.alpha**2 * e


def _check(d, a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        a, b = np.broadcast_arrays(a, b)
    if d.kind == "rate_kl":
        if np.any(b <= 0):
            raise DomainError("RateKL needs strictly positive predictions")
        if np.any(a < 0):
            raise DomainError("RateKL needs nonnegative targets")
    return a, b


def _blocks(d, a):
    sizes = [s for _, s in d.parts]
    if sum(sizes) != a.shape[-1]:
        raise ShapeError("product divergence block sizes do not cover the vector")
    return np.cumsum([0] + sizes)


def bregman_terms(d, a, b):
    """Coordinatewise divergence terms (same shape as a)."""
    a, b = _check(d, a, b)
    if d.kind == "mse":
        return (a - b) ** 2
    if d.kind == "rate_kl":
        return xlogy(a, a) - xlogy(a, b) - a + b
    if d.kind == "product":
        edges = _blocks(d, a)
        return np.concatenate(
            [bregman_terms(p, a[..., lo:hi], b[..., lo:hi]) for (p, _), lo, hi in zip(d.parts, edges[:-1], edges[1:])],
            axis=-1,
        )
    fa, _, _ = _phi0(d, a)
    fb, gb, _ = _phi0(d, b)
    breg = np.maximum(fa - fb - (a - b) * gb, 0.0)
    return d.mix * breg + (1.0 - d.mix) * (a - b) ** 2


def bregman_value(d, a, b):
    """D(a, b) summed over the last axis."""
    return bregman_terms(d, a, b).sum(axis=-1)


def bregman_grad_pred(d, a, b):
    """Gradient of D(a, b) with respect to the prediction b: hess phi(b) (b - a)."""
    a, b = _check(d, a, b)
    if d.kind == "mse":
        return 2.0 * (b - a)
    if d.kind == "rate_kl":
        return 1.0 - a / b
    if d.kind == "product":
        edges = _blocks(d, a)
        return np.concatenate(
            [bregman_grad_pred(p, a[..., lo:hi], b[..., lo:hi]) for (p, _), lo, hi in zip(d.parts, edges[:-1], edges[1:])],
            axis=-1,
        )
    _, _, hb = _phi0(d, b)
    return d.mix * hb * (b - a) + (1.0 - d.mix) * 2.0 * (b - a)


# --------------------------------------------------------------------------
# CGM loss

RATE_FLOOR = 1e-300


def sample_training_batch(path, data, batch_size, rng, t_eps=1e-3):
    """(t, z, x) with t ~ Unif[eps, 1 - eps], z ~ data and x ~ p_t(.|z)."""
    t = rng.uniform(t_eps, 1.0 - t_eps, size=batch_size)
    z, _ = data.sample(batch_size, rng)
    x = path.sample_cond(z, t, rng)
    return t, z, x


def _offdiag_mask(x_tok, N):
    mask = np.ones(x_tok.shape + (N,), dtype=bool)
    np.put_along_axis(mask, x_tok.astype(int)[..., None], False, axis=-1)
    return mask


def head_loss(d, head, target, out, x=None, vocab=None):
    """Per-sample divergence and upstream gradients for one head.

    ``target`` is the conditional GenOut, ``out`` the network outputs. Jump
    heads compare the rate measures lambda * probs; CTMC heads compare the
    off-diagonal rate entries.
    """
    n = x.shape[0]
    if head == "velocity":
        euc = vocab == 0
        a, b = target.velocity[:, euc], out["velocity"][:, euc]
        vals = bregman_value(d, a, b)
        return vals, {"velocity": bregman_grad_pred(d, a, b) / n}
    if head == "jump":
        euc = vocab == 0
        a = target.jump_measure()[:, euc]
        lam, probs = out["jump_rate"][:, euc], out["jump_probs"][:, euc]
        b = np.maximum(lam[..., None] * probs, RATE_FLOOR)
        a = np.broadcast_to(a, b.shape)
        vals = bregman_value(d, a.reshape(n, -1), b.reshape(n, -1))
        g = bregman_grad_pred(d, a, b) / n
        return vals, {"jump_rate": (g * probs).sum(axis=-1), "jump_probs": g * lam[..., None]}
    if head == "ctmc":
        tok = vocab > 0
        xt = x[:, tok]
        N = out["rates"].shape[-1]
        mask = _offdiag_mask(xt, N)
        a = np.where(mask, target.rates[:, tok, :N], 0.0)
        b = np.maximum(out["rates"], RATE_FLOOR)
        terms = np.where(mask, bregman_terms(d, a, b), 0.0)
        g = np.where(mask, bregman_grad_pred(d, a, b), 0.0) / n
        return terms.reshape(n, -1).sum(axis=1), {"rates": g}
    raise DomainError(f"unknown head {head!r}")


def cgm_loss(net, path, data, cond_gen, d, batch_size, rng, head="velocity", t_eps=1e-3, batch=None):
    """Monte Carlo CGM loss and the upstream gradients for backpropagation.

    Returns ``(loss, upstream, batch)``; ``upstream`` maps network outputs to
    d loss / d output (already divided by the batch size).
    """
    t, z, x = batch if batch is not None else sample_training_batch(path, data, batch_size, rng, t_eps)
    target = cond_gen(path, z, t[:, None], x)
    if target.jump_rate is not None and getattr(net, "bins", None) is not None:
        target = target.on_support(net.bins)
    out = net.forward(x, t)
    vals, upstream = head_loss(d, head, target, out, x, path.vocab)
    return float(vals.mean()), upstream, (t, z, x)
