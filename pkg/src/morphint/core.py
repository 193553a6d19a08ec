"""Integration domain, run configuration and result containers."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import (
    DegenerateInterval,
    DimensionMismatch,
    InsufficientBlocks,
    InvalidRunConfig,
    NonPositiveTrial,
    VolumeOverflow,
)
from .propagators import PropagatorConfig


class RunWarning(str, Enum):
    LOW_ACCEPTANCE = "LowAcceptance"
    LARGE_RELATIVE_SIGMA = "LargeRelativeSigma"
    CANCELLATION = "CancellationWarning"
    EPSILON_TOO_LARGE = "EpsilonTooLarge"


LOW_ACCEPTANCE_PCT = 30.0
LARGE_RELATIVE_SIGMA = 0.1


@dataclass(frozen=True)
class HyperRectangle:
    lower: np.ndarray
    upper: np.ndarray
    volume: float

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def widths(self) -> np.ndarray:
        return self.upper - self.lower

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower) and np.all(x <= self.upper))

    def to_dict(self) -> dict:
        return {"lower": self.lower.tolist(), "upper": self.upper.tolist()}


def make_domain(lower, upper) -> HyperRectangle:
    """Build a hyper-rectangle from per-dimension bounds.

    Raises
    ------
    DimensionMismatch
        If the bound arrays differ in length or are empty.
    DegenerateInterval
        If some ``lower[i] >= upper[i]``.
    VolumeOverflow
        If the product of widths is not a finite positive double; rescale the
        variables in that case.
    """
    lo = np.array(lower, dtype=np.float64).ravel()
    hi = np.array(upper, dtype=np.float64).ravel()
    if lo.size != hi.size or lo.size == 0:
        raise DimensionMismatch(f"bounds have lengths {lo.size} and {hi.size}")
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
        raise DegenerateInterval("bounds must be finite")
    bad = np.flatnonzero(lo >= hi)
    if bad.size:
        i = int(bad[0])
        raise DegenerateInterval(f"dimension {i}: lower {lo[i]} >= upper {hi[i]}")
    with np.errstate(over="ignore", under="ignore"):
        volume = float(np.prod(hi - lo))
    if not math.isfinite(volume) or volume <= 0.0:
        raise VolumeOverflow(f"domain volume is not representable ({volume})")
    lo.setflags(write=False)
    hi.setflags(write=False)
    return HyperRectangle(lo, hi, volume)


@dataclass(frozen=True)
class FlatReference:
    """Constant pseudo-potential ``c`` whose integral over the domain is ``e0``."""

    c: float
    e0: float

    def rescaled(self, delta: float) -> FlatReference:
        return FlatReference(self.c + delta, self.e0 * math.exp(-delta))


def flat_reference(domain: HyperRectangle, e_trial: float | None = None) -> FlatReference:
    if e_trial is None:
        e_trial = domain.volume
    e_trial = float(e_trial)
    if not (e_trial > 0.0 and math.isfinite(e_trial)):
        raise NonPositiveTrial(f"e_trial must be positive and finite, got {e_trial}")
    return FlatReference(math.log(domain.volume / e_trial), e_trial)


@dataclass(frozen=True)
class MorphRun:
    n_traj: int
    n_steps: int
    n_blocks: int
    propagator: PropagatorConfig
    master_seed: int = 0
    e_trial: float | None = None

    def __post_init__(self):
        for name in ("n_traj", "n_steps", "n_blocks"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise InvalidRunConfig(f"{name} must be a positive integer, got {v}")
        if self.n_blocks < 2:
            raise InsufficientBlocks("at least two blocks are needed for the uncertainty")
        if self.n_traj % self.n_blocks:
            raise InsufficientBlocks(f"n_blocks={self.n_blocks} does not divide n_traj={self.n_traj}")
        if self.n_traj < 2 * self.n_blocks:
            raise InsufficientBlocks(
                f"{self.n_traj} trajectories in {self.n_blocks} blocks leaves fewer than two per block"
            )
        if not 0 <= int(self.master_seed) < 2**64:
            raise InvalidRunConfig("master_seed must be an unsigned 64-bit integer")
        if self.e_trial is not None and not self.e_trial > 0:
            raise NonPositiveTrial(f"e_trial must be positive, got {self.e_trial}")

    @property
    def block_size(self) -> int:
        return self.n_traj // self.n_blocks

    def replace(self, **changes) -> MorphRun:
        kw = dict(
            n_traj=self.n_traj,
            n_steps=self.n_steps,
            n_blocks=self.n_blocks,
            propagator=self.propagator,
            master_seed=self.master_seed,
            e_trial=self.e_trial,
        )
        kw.update(changes)
        return MorphRun(**kw)

    def to_dict(self) -> dict:
        return {
            "n_traj": self.n_traj,
            "n_steps": self.n_steps,
            "n_blocks": self.n_blocks,
            "propagator": self.propagator.to_dict(),
            "master_seed": int(self.master_seed),
            "e_trial": self.e_trial,
        }


@dataclass(frozen=True)
class TrajectoryRecord:
    work: float
    moves_attempted: int
    moves_accepted: int
    final_point: np.ndarray


@dataclass(frozen=True)
class IntegralEstimate:
    value: float
    sigma: float
    bias: float
    acceptance_pct: float
    block_factors: np.ndarray
    warnings: tuple[RunWarning, ...] = ()
    sigma_w: float | None = None
    components: dict[str, IntegralEstimate] = field(default_factory=dict)
    max_abs_f: float | None = None

    @property
    def relative_sigma(self) -> float:
        return self.sigma / abs(self.value) if self.value else math.inf

    def to_dict(self) -> dict:
        d = {
            "value": float(self.value),
            "sigma": float(self.sigma),
            "bias": float(self.bias),
            "acceptance_pct": float(self.acceptance_pct),
            "block_factors": [float(v) for v in self.block_factors],
            "warnings": [w.value for w in self.warnings],
        }
        if self.sigma_w is not None:
            d["sigma_w"] = float(self.sigma_w)
        if self.max_abs_f is not None:
            d["max_abs_f"] = float(self.max_abs_f)
        for key, comp in self.components.items():
            d[key] = comp.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> IntegralEstimate:
        comps = {k: cls.from_dict(d[k]) for k in ("plus", "minus") if k in d}
        return cls(
            value=float(d["value"]),
            sigma=float(d["sigma"]),
            bias=float(d["bias"]),
            acceptance_pct=float(d["acceptance_pct"]),
            block_factors=np.array(d["block_factors"], dtype=np.float64),
            warnings=tuple(RunWarning(w) for w in d["warnings"]),
            sigma_w=d.get("sigma_w"),
            components=comps,
            max_abs_f=d.get("max_abs_f"),
        )

    def to_json(self) -> str:
        return dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> IntegralEstimate:
        return cls.from_dict(json.loads(text))


def quality_warnings(value: float, sigma: float, acceptance_pct: float | None) -> list[RunWarning]:
    out = []
    if acceptance_pct is not None and acceptance_pct < LOW_ACCEPTANCE_PCT:
        out.append(RunWarning.LOW_ACCEPTANCE)
    if value == 0.0 or sigma / abs(value) >= LARGE_RELATIVE_SIGMA:
        out.append(RunWarning.LARGE_RELATIVE_SIGMA)
    return out


def format_real(v: float) -> str:
    if math.isnan(v):
        return "NaN"
    if math.isinf(v):
        return "Infinity" if v > 0 else "-Infinity"
    s = "%.17g" % v
    # keep reals recognisable as reals (and -0.0 distinct from 0) in JSON
    return s if any(ch in s for ch in ".en") else s + ".0"


def dumps(obj, indent: int = 2) -> str:
    """JSON text with every real written to 17 significant digits."""

    def enc(o, level):
        pad = " " * (indent * (level + 1))
        end = " " * (indent * level)
        if isinstance(o, bool) or o is None:
            return json.dumps(o)
        if isinstance(o, (int, np.integer)):
            return str(int(o))
        if isinstance(o, (float, np.floating)):
            return format_real(float(o))
        if isinstance(o, str):
            return json.dumps(o, ensure_ascii=False)
        if isinstance(o, Enum):
            return json.dumps(o.value)
        if isinstance(o, dict):
            if not o:
                return "{}"
            items = [f"{pad}{json.dumps(str(k))}: {enc(v, level + 1)}" for k, v in o.items()]
            return "{\n" + ",\n".join(items) + "\n" + end + "}"
        if isinstance(o, (list, tuple, np.ndarray)):
            if len(o) == 0:
                return "[]"
            if all(isinstance(v, (int, float, np.number)) and not isinstance(v, bool) for v in o):
                return "[" + ", ".join(enc(v, level + 1) for v in o) + "]"
            items = [pad + enc(v, level + 1) for v in o]
            return "[\n" + ",\n".join(items) + "\n" + end + "]"
        raise TypeError(f"cannot serialize {type(o).__name__}")

    return enc(obj, 0)
