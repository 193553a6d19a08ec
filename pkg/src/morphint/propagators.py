"""Single Markov moves at a fixed morphing parameter.

The pure-Python functions here are the readable reference; the engine runs
the compiled twins (``reflect_coord`` and the kernels in :mod:`morphint.engine`),
which draw the same random numbers in the same order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from numba import njit

from .errors import BadParams, NonFiniteGradient, ReflectionLimit

MAX_FOLDS = 64


class PropagatorKind(str, Enum):
    ISMC = "ismc"
    LANGEVIN = "langevin"


@dataclass(frozen=True)
class PropagatorConfig:
    """Move settings: ``delta_max`` for Metropolis, ``diffusion`` for Langevin."""

    kind: PropagatorKind
    delta_max: np.ndarray | None = None
    diffusion: float | None = None

    def __post_init__(self):
        kind = PropagatorKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind is PropagatorKind.ISMC:
            if self.delta_max is None:
                raise BadParams("IS-MC propagator needs delta_max")
            d = np.atleast_1d(np.asarray(self.delta_max, dtype=np.float64)).copy()
            if not np.all(np.isfinite(d)) or np.any(d <= 0):
                raise BadParams("delta_max entries must be positive")
            d.setflags(write=False)
            object.__setattr__(self, "delta_max", d)
        else:
            if self.diffusion is None or not self.diffusion > 0 or not math.isfinite(self.diffusion):
                raise BadParams("Langevin propagator needs a positive diffusion coefficient")
            object.__setattr__(self, "diffusion", float(self.diffusion))

    @classmethod
    def ismc(cls, delta_max) -> PropagatorConfig:
        return cls(PropagatorKind.ISMC, delta_max=delta_max)

    @classmethod
    def langevin(cls, diffusion: float) -> PropagatorConfig:
        return cls(PropagatorKind.LANGEVIN, diffusion=diffusion)

    def deltas_for(self, dim: int) -> np.ndarray:
        d = self.delta_max
        if d.size == 1:
            return np.full(dim, d[0])
        if d.size != dim:
            raise BadParams(f"delta_max has {d.size} entries for a {dim}-dimensional domain")
        return np.array(d)

    def to_dict(self) -> dict:
        if self.kind is PropagatorKind.ISMC:
            d = self.delta_max
            return {"kind": "ismc", "delta_max": float(d[0]) if d.size == 1 else d.tolist()}
        return {"kind": "langevin", "diffusion": self.diffusion}


@njit(inline="always")
def reflect_coord(y, lo, hi):
    """Fold ``y`` into ``[lo, hi]``; returns NaN after too many folds."""
    n = 0
    while y < lo or y > hi:
        if y < lo:
            y = 2.0 * lo - y
        else:
            y = 2.0 * hi - y
        n += 1
        if n > MAX_FOLDS:
            return math.nan
    return y


def reflect(x_prop, domain) -> np.ndarray:
    """Mirror each coordinate back into the domain.

    >>> from morphint.core import make_domain
    >>> reflect([1.2, -2.3, 0.5], make_domain([0, 0, 0], [1, 1, 1]))
    array([0.8, 0.3, 0.5])
    """
    x = np.array(x_prop, dtype=np.float64, ndmin=1)
    lo, hi = domain.lower, domain.upper
    for _ in range(MAX_FOLDS + 1):
        below, above = x < lo, x > hi
        if not (below.any() or above.any()):
            return x
        x = np.where(below, 2.0 * lo - x, x)
        x = np.where(above, 2.0 * hi - x, x)
    raise ReflectionLimit(f"coordinate needs more than {MAX_FOLDS} folds; step too large")


def metropolis_step(x, u_at, cfg: PropagatorConfig, domain, rng_stream):
    """One Metropolis move under the potential ``u_at``.

    Draws ``dim + 1`` uniforms: the box proposal, then the acceptance variate
    (always consumed so the stream layout is path independent).
    """
    x = np.asarray(x, dtype=np.float64)
    delta = cfg.deltas_for(x.size)
    r = rng_stream.uniform(x.size + 1)
    prop = reflect(x + delta * (2.0 * r[:-1] - 1.0), domain)
    u_new = u_at(prop)
    if not math.isfinite(u_new):
        return x, False
    du = u_new - u_at(x)
    if du <= 0.0 or r[-1] < math.exp(-du):
        return prop, True
    return x, False


def langevin_step(x, grad_u_at, cfg: PropagatorConfig, domain, rng_stream, dt: float) -> np.ndarray:
    """Euler-Maruyama step of overdamped Langevin dynamics with scalar ``D``."""
    x = np.asarray(x, dtype=np.float64)
    g = np.asarray(grad_u_at(x), dtype=np.float64)
    if not np.all(np.isfinite(g)):
        raise NonFiniteGradient("gradient is not finite at the current point")
    D = cfg.diffusion
    noise = rng_stream.normal(x.size)
    return reflect(x - dt * D * g + math.sqrt(2.0 * D * dt) * noise, domain)
