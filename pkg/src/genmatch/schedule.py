"""Interpolation schedules kappa(t) on [0, 1] with exact derivatives.

The geometric-average path uses alpha_t = kappa(t) and sigma_t = 1 - kappa(t),
so a single schedule object drives every path in the package.
"""
from dataclasses import dataclass

import numpy as np

from .errors import DomainError

KINDS = ("linear", "poly", "cosine")


@dataclass(frozen=True)
class Schedule:
    """A monotone schedule with kappa(0) = 0 and kappa(1) = 1.

    ``kind`` is one of ``"linear"`` (kappa = t), ``"poly"`` (kappa = t**power)
    or ``"cosine"`` (kappa = 1 - cos(pi t / 2)**2, an extension used in image
    generation practice).
    """

    kind: str = "linear"
    power: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DomainError(f"unknown schedule kind {self.kind!r}")
        if self.kind == "poly" and not self.power > 0:
            raise DomainError("polynomial schedule needs a positive power")

    @classmethod
    def parse(cls, spec):
        """Build a schedule from ``"linear"``, ``"poly:<p>"`` or ``"cosine"``."""
        if isinstance(spec, Schedule):
            return spec
        spec = str(spec).strip().lower()
        if spec == "linear":
            return cls("linear")
        if spec == "cosine":
            return cls("cosine")
        if spec.startswith("poly:"):
            try:
                power = float(spec[5:])
            except ValueError:
                raise DomainError(f"bad polynomial power in {spec!r}") from None
            return cls("poly", power)
        raise DomainError(f"unknown schedule {spec!r}")

    @property
    def name(self):
        if self.kind == "poly":
            return f"poly:{self.power:g}"
        return self.kind

    @property
    def is_linear(self):
        return self.kind == "linear" or (self.kind == "poly" and self.power == 1.0)

    def __call__(self, t):
        """Return ``(kappa, kappa_dot)`` at ``t`` (scalar or array)."""
        t = np.asarray(t, dtype=float)
        if np.any(t < 0.0) or np.any(t > 1.0) or np.any(np.isnan(t)):
            raise DomainError("schedule time must lie in [0, 1]")
        if self.kind == "linear":
            kappa, kdot = t.copy(), np.ones_like(t)
        elif self.kind == "poly":
            p = self.power
            kappa = t**p
            # t**(p-1) is singular at t = 0 for p < 1; the derivative is +inf there
            with np.errstate(divide="ignore"):
                kdot = p * t ** (p - 1.0)
        else:
            kappa = 1.0 - np.cos(0.5 * np.pi * t) ** 2
            kdot = 0.5 * np.pi * np.sin(np.pi * t)
        if kappa.ndim == 0:
            return float(kappa), float(kdot)
        return kappa, kdot


LINEAR = Schedule("linear")


def eval_schedule(s, t):
    """Evaluate schedule ``s`` at time ``t``; returns ``(kappa, kappa_dot)``."""
    return Schedule.parse(s)(t)
