"""Morphing protocol, work accumulation and the exponential-work estimator.

Each trajectory starts from a uniform point (the flat reference), and on every
step first accumulates the work ``dt * dlam * (u1(x) - c)`` at the frozen
position, then makes one move under the morphed potential
``lam * u1 + (1 - lam) * c``.  The integral is ``e0 * mean(exp(-w))``.
"""

from __future__ import annotations

import csv
import logging
import math
import multiprocessing
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from numba import njit, uint64
from scipy import stats

from .core import (
    LOW_ACCEPTANCE_PCT,
    FlatReference,
    HyperRectangle,
    IntegralEstimate,
    MorphRun,
    RunWarning,
    TrajectoryRecord,
    flat_reference,
    quality_warnings,
)
from .errors import (
    InsufficientBlocks,
    NonFiniteGradient,
    ReflectionLimit,
    TrajectoryAborted,
    TuningFailed,
)
from .integrands import Integrand, Signedness
from .propagators import PropagatorConfig, PropagatorKind, reflect_coord
from .rng import derive_key, draw_uniform, trajectory_keys

log = logging.getLogger(__name__)

TUNE_BRANCH = 0x7475
TUNE_GRID = tuple(2.0**k for k in range(-6, 7))

# kernel status codes
_OK, _BAD_START, _BAD_GRADIENT, _BAD_REFLECT = 0, 1, 2, 3


class ScheduleKind(str, Enum):
    LINEAR = "linear"


@dataclass(frozen=True)
class MorphSchedule:
    """Morphing parameter ``lam(t)`` on ``t`` in [0, 1]."""

    kind: ScheduleKind = ScheduleKind.LINEAR

    def lam(self, t):
        return np.asarray(t, dtype=np.float64)

    def rate(self, t):
        return np.ones_like(np.asarray(t, dtype=np.float64))

    def grid(self, n_steps: int) -> tuple[np.ndarray, np.ndarray]:
        """``lam`` at every step boundary and ``dlam/dt`` at each step start."""
        t = np.arange(n_steps + 1, dtype=np.float64) / n_steps
        return self.lam(t), self.rate(t[:-1])


LINEAR = MorphSchedule()


# ---------------------------------------------------------------- kernels


@njit
def _ismc_path(u_fn, key, lo, hi, delta, lam, dlam, c, x, xn, trace, stride):
    n = lo.size
    ctr = uint64(0)
    for d in range(n):
        x[d] = lo[d] + (hi[d] - lo[d]) * draw_uniform(key, ctr)
        ctr += uint64(1)
    x0 = x.copy()
    u = u_fn(x)
    if not math.isfinite(u):
        return 0.0, 0, _BAD_START
    n_steps = lam.size - 1
    dt = 1.0 / n_steps
    w = 0.0
    comp = 0.0  # Kahan compensation, keeps constant integrands exact for long paths
    acc = 0
    for s in range(1, n_steps + 1):
        inc = dt * dlam[s - 1] * (u - c) - comp
        t = w + inc
        comp = (t - w) - inc
        w = t
        ls = lam[s]
        for d in range(n):
            y = x[d] + delta[d] * (2.0 * draw_uniform(key, ctr) - 1.0)
            ctr += uint64(1)
            y = reflect_coord(y, lo[d], hi[d])
            if y != y:
                return w, acc, _BAD_REFLECT
            xn[d] = y
        alpha = draw_uniform(key, ctr)
        ctr += uint64(1)
        un = u_fn(xn)
        if math.isfinite(un):
            du = (ls * un + (1.0 - ls) * c) - (ls * u + (1.0 - ls) * c)
            if du <= 0.0 or alpha < math.exp(-du):
                for d in range(n):
                    x[d] = xn[d]
                u = un
                acc += 1
        if stride > 0 and s % stride == 0:
            r = 0.0
            for d in range(n):
                r += (x[d] - x0[d]) ** 2
            trace[s // stride - 1] = math.sqrt(r)
    return w, acc, _OK


@njit
def _langevin_path(u_fn, grad_fn, key, lo, hi, diffusion, lam, dlam, c, x, xn, trace, stride):
    n = lo.size
    ctr = uint64(0)
    for d in range(n):
        x[d] = lo[d] + (hi[d] - lo[d]) * draw_uniform(key, ctr)
        ctr += uint64(1)
    x0 = x.copy()
    g = np.empty(n)
    noise = np.empty(n + 1)
    u = u_fn(x)
    if not math.isfinite(u):
        return 0.0, 0, _BAD_START
    n_steps = lam.size - 1
    dt = 1.0 / n_steps
    drift = dt * diffusion
    amp = math.sqrt(2.0 * diffusion * dt)
    w = 0.0
    comp = 0.0  # Kahan compensation, keeps constant integrands exact for long paths
    acc = 0
    for s in range(1, n_steps + 1):
        inc = dt * dlam[s - 1] * (u - c) - comp
        t = w + inc
        comp = (t - w) - inc
        w = t
        ls = lam[s]
        grad_fn(x, g)
        for d in range(0, n, 2):
            a = draw_uniform(key, ctr)
            b = draw_uniform(key, ctr + uint64(1))
            ctr += uint64(2)
            r = math.sqrt(-2.0 * math.log(a))
            noise[d] = r * math.cos(2.0 * math.pi * b)
            noise[d + 1] = r * math.sin(2.0 * math.pi * b)
        for d in range(n):
            gd = ls * g[d]
            if not math.isfinite(gd):
                return w, acc, _BAD_GRADIENT
            y = x[d] - drift * gd + amp * noise[d]
            y = reflect_coord(y, lo[d], hi[d])
            if y != y:
                return w, acc, _BAD_REFLECT
            xn[d] = y
        un = u_fn(xn)
        if math.isfinite(un):
            for d in range(n):
                x[d] = xn[d]
            u = un
            acc += 1
        if stride > 0 and s % stride == 0:
            r2 = 0.0
            for d in range(n):
                r2 += (x[d] - x0[d]) ** 2
            trace[s // stride - 1] = math.sqrt(r2)
    return w, acc, _OK


@njit
def _ismc_batch(u_fn, keys, lo, hi, delta, lam, dlam, c, works, accepted, status, finals):
    x = np.empty(lo.size)
    xn = np.empty(lo.size)
    trace = np.empty(0)
    for i in range(keys.size):
        w, a, st = _ismc_path(u_fn, keys[i], lo, hi, delta, lam, dlam, c, x, xn, trace, 0)
        works[i] = w
        accepted[i] = a
        status[i] = st
        finals[i, :] = x


@njit
def _langevin_batch(u_fn, grad_fn, keys, lo, hi, diffusion, lam, dlam, c, works, accepted, status, finals):
    x = np.empty(lo.size)
    xn = np.empty(lo.size)
    trace = np.empty(0)
    for i in range(keys.size):
        w, a, st = _langevin_path(u_fn, grad_fn, keys[i], lo, hi, diffusion, lam, dlam, c, x, xn, trace, 0)
        works[i] = w
        accepted[i] = a
        status[i] = st
        finals[i, :] = x


# ------------------------------------------------------------- ensembles


@dataclass(frozen=True)
class WorkEnsemble:
    works: np.ndarray
    accepted: np.ndarray
    attempted: np.ndarray
    final_points: np.ndarray
    block_size: int

    @property
    def n_traj(self) -> int:
        return self.works.size

    @property
    def n_blocks(self) -> int:
        return self.works.size // self.block_size

    @property
    def sigma_w(self) -> float:
        return float(np.std(self.works, ddof=1)) if self.works.size > 1 else 0.0

    @property
    def acceptance_pct(self) -> float:
        total = int(self.attempted.sum())
        return 100.0 * int(self.accepted.sum()) / total if total else 100.0

    @property
    def records(self) -> list[TrajectoryRecord]:
        return [
            TrajectoryRecord(float(w), int(n), int(a), p)
            for w, n, a, p in zip(self.works, self.attempted, self.accepted, self.final_points)
        ]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            out = csv.writer(fh, lineterminator="\n")
            out.writerow(["traj_index", "block_index", "work", "accepted", "attempted"])
            for i in range(self.n_traj):
                out.writerow(
                    [i, i // self.block_size, "%.17g" % self.works[i], int(self.accepted[i]), int(self.attempted[i])]
                )


def _student_factor(m: int) -> float:
    return float(stats.t.ppf(stats.norm.cdf(1.0), m - 1) / 1.0)


def jarzynski_estimate(
    ensemble: WorkEnsemble,
    ref: FlatReference,
    student_t: bool = False,
    check_acceptance: bool = True,
) -> IntegralEstimate:
    """Exponential work average with block-average uncertainty.

    ``value = e0 * mean(exp(-w))``; the uncertainty is the standard error of
    the mean of the per-block morphing factors.  With ``student_t`` and fewer
    than 30 blocks, sigma is widened by the one-sigma Student-t quantile.
    """
    w = np.asarray(ensemble.works, dtype=np.float64)
    b = int(ensemble.block_size)
    if w.size == 0 or b < 1 or w.size % b:
        raise InsufficientBlocks("work ensemble is empty or not a whole number of blocks")
    m = w.size // b
    if m < 2:
        raise InsufficientBlocks(f"need at least 2 blocks, got {m}")
    shift = float(np.min(w))
    scaled = np.exp(-(w - shift))
    # e0 * exp(-shift) formed in log space: works of several hundred are fine
    # as long as the integral itself is representable
    with np.errstate(under="ignore", over="ignore"):
        amp = float(np.exp(math.log(ref.e0) - shift))
        blocks = np.exp(-shift) * scaled.reshape(m, b).mean(axis=1)
    if not math.isfinite(amp):
        raise OverflowError("e0 * exp(-work) overflows; supply an e_trial closer to the integral")
    mean_s = float(np.mean(scaled))
    blocks_s = scaled.reshape(m, b).mean(axis=1)
    sigma = amp * math.sqrt(float(np.sum((blocks_s - mean_s) ** 2)) / (m * (m - 1)))
    if student_t and m < 30:
        sigma *= _student_factor(m)
    value = amp * mean_s
    bias = -(sigma**2) / (2.0 * value) if value else 0.0
    acc = ensemble.acceptance_pct
    warns = quality_warnings(value, sigma, acc if check_acceptance else None)
    return IntegralEstimate(
        value=value,
        sigma=sigma,
        bias=bias,
        acceptance_pct=acc,
        block_factors=blocks,
        warnings=tuple(warns),
        sigma_w=ensemble.sigma_w,
    )


# ------------------------------------------------------------------ runs

_POOL_CONTEXT: dict = {}


def _launch(ctx, keys):
    n = keys.size
    works = np.empty(n)
    accepted = np.empty(n, dtype=np.int64)
    status = np.empty(n, dtype=np.int64)
    finals = np.empty((n, ctx["lo"].size))
    if ctx["kind"] is PropagatorKind.ISMC:
        _ismc_batch(
            ctx["u"], keys, ctx["lo"], ctx["hi"], ctx["delta"], ctx["lam"], ctx["dlam"], ctx["c"],
            works, accepted, status, finals,
        )
    else:
        _langevin_batch(
            ctx["u"], ctx["grad"], keys, ctx["lo"], ctx["hi"], ctx["diffusion"], ctx["lam"], ctx["dlam"],
            ctx["c"], works, accepted, status, finals,
        )
    return works, accepted, status, finals


def _pool_chunk(bounds):
    ctx = _POOL_CONTEXT["ctx"]
    a, b = bounds
    return _launch(ctx, ctx["keys"][a:b])


def _execute(ctx, keys, workers: int):
    if workers <= 1 or keys.size < 2:
        return _launch(ctx, keys)
    # compile in the parent so forked workers inherit the machine code
    _launch(ctx, keys[:0])
    edges = np.linspace(0, keys.size, min(workers, keys.size) + 1).astype(int)
    chunks = list(zip(edges[:-1], edges[1:]))
    _POOL_CONTEXT["ctx"] = dict(ctx, keys=keys)
    try:
        with ProcessPoolExecutor(max_workers=len(chunks), mp_context=multiprocessing.get_context("fork")) as pool:
            parts = list(pool.map(_pool_chunk, chunks))
    finally:
        _POOL_CONTEXT.clear()
    return tuple(np.concatenate([p[k] for p in parts]) for k in range(4))


def _context(integrand: Integrand, domain: HyperRectangle, propagator: PropagatorConfig, n_steps, c, schedule):
    lam, dlam = schedule.grid(int(n_steps))
    ctx = {
        "kind": propagator.kind,
        "u": integrand.u_kernel,
        "lo": np.ascontiguousarray(domain.lower, dtype=np.float64),
        "hi": np.ascontiguousarray(domain.upper, dtype=np.float64),
        "lam": lam,
        "dlam": dlam,
        "c": float(c),
    }
    if propagator.kind is PropagatorKind.ISMC:
        ctx["delta"] = propagator.deltas_for(domain.dim)
    else:
        if integrand.grad_u_kernel is None:
            raise ValueError("Langevin propagation needs an integrand with a gradient")
        ctx["grad"] = integrand.grad_u_kernel
        ctx["diffusion"] = propagator.diffusion
    return ctx


def _raise_for_status(status, offset=0):
    bad = np.flatnonzero(status != _OK)
    if not bad.size:
        return
    i = int(bad[0])
    code = int(status[i])
    if code == _BAD_START:
        raise TrajectoryAborted("pseudo-potential is not finite at the starting point", i + offset)
    if code == _BAD_GRADIENT:
        raise NonFiniteGradient("gradient is not finite along the path", i + offset)
    raise ReflectionLimit(f"trajectory {i + offset}: move needs too many boundary folds")


def run_ensemble(
    integrand: Integrand,
    domain: HyperRectangle,
    run: MorphRun,
    schedule: MorphSchedule = LINEAR,
    workers: int = 1,
    ref: FlatReference | None = None,
) -> WorkEnsemble:
    """Run every trajectory of ``run`` and collect the work values."""
    if integrand.dim != domain.dim:
        raise ValueError(f"integrand has dimension {integrand.dim}, domain {domain.dim}")
    if ref is None:
        ref = flat_reference(domain, run.e_trial)
    keys = trajectory_keys(int(run.master_seed), run.n_blocks, run.block_size)
    ctx = _context(integrand, domain, run.propagator, run.n_steps, ref.c, schedule)
    works, accepted, status, finals = _execute(ctx, keys, workers)
    _raise_for_status(status)
    attempted = np.full(run.n_traj, run.n_steps, dtype=np.int64)
    return WorkEnsemble(works, accepted, attempted, finals, run.block_size)


def run_integration(
    integrand: Integrand,
    domain: HyperRectangle,
    run: MorphRun,
    schedule: MorphSchedule = LINEAR,
    workers: int = 1,
    student_t: bool = False,
    return_ensemble: bool = False,
):
    """Integrate a strictly positive integrand over ``domain``.

    Signed integrands must go through :func:`morphint.splitting.integrate_signed`.
    The result does not depend on ``workers``.
    """
    if integrand.signedness is not Signedness.STRICTLY_POSITIVE:
        raise ValueError("integrand may change sign; use splitting.integrate_signed")
    ref = flat_reference(domain, run.e_trial)
    ens = run_ensemble(integrand, domain, run, schedule, workers, ref)
    est = jarzynski_estimate(
        ens, ref, student_t=student_t, check_acceptance=run.propagator.kind is PropagatorKind.ISMC
    )
    return (est, ens) if return_ensemble else est


def run_trajectory(
    integrand: Integrand,
    ref: FlatReference,
    schedule: MorphSchedule,
    propagator: PropagatorConfig,
    domain: HyperRectangle,
    n_steps: int,
    traj_seed: int,
) -> TrajectoryRecord:
    ctx = _context(integrand, domain, propagator, n_steps, ref.c, schedule)
    works, accepted, status, finals = _launch(ctx, np.array([traj_seed], dtype=np.uint64))
    _raise_for_status(status)
    return TrajectoryRecord(float(works[0]), int(n_steps), int(accepted[0]), finals[0])


def displacement_trace(
    integrand: Integrand,
    domain: HyperRectangle,
    run: MorphRun,
    probe_seed: int,
    schedule: MorphSchedule = LINEAR,
) -> np.ndarray:
    """Distance from the starting point, sampled 1000 times along one path.

    Returns an array of shape ``(k, 2)`` with columns (step, distance).  The
    starting point depends only on ``probe_seed``, so traces for different
    propagator settings share it.
    """
    ref = flat_reference(domain, run.e_trial)
    ctx = _context(integrand, domain, run.propagator, run.n_steps, ref.c, schedule)
    stride = max(1, run.n_steps // 1000)
    trace = np.zeros(run.n_steps // stride)
    x = np.empty(domain.dim)
    xn = np.empty(domain.dim)
    key = np.uint64(probe_seed)
    if ctx["kind"] is PropagatorKind.ISMC:
        _, _, st = _ismc_path(
            ctx["u"], key, ctx["lo"], ctx["hi"], ctx["delta"], ctx["lam"], ctx["dlam"], ctx["c"], x, xn, trace, stride
        )
    else:
        _, _, st = _langevin_path(
            ctx["u"], ctx["grad"], key, ctx["lo"], ctx["hi"], ctx["diffusion"], ctx["lam"], ctx["dlam"], ctx["c"],
            x, xn, trace, stride,
        )
    _raise_for_status(np.array([st]))
    steps = stride * np.arange(1, trace.size + 1)
    return np.column_stack([steps, trace])


# ---------------------------------------------------------------- tuning


@dataclass
class TuningResult:
    delta_max: np.ndarray
    acceptance_pct: float
    table: list[tuple[float, float]] = field(default_factory=list)
    warnings: tuple[RunWarning, ...] = ()

    def to_dict(self) -> dict:
        return {
            "delta_max": self.delta_max.tolist(),
            "acceptance_pct": self.acceptance_pct,
            "table": [{"multiplier": m, "acceptance_pct": a} for m, a in self.table],
            "warnings": [w.value for w in self.warnings],
        }


def pilot_run(run: MorphRun, n_traj: int = 100, n_steps: int = 1000) -> MorphRun:
    """Short run sharing the seed lineage of ``run`` on a separate branch."""
    n_traj = max(4, n_traj + n_traj % 2)
    return run.replace(
        n_traj=n_traj,
        n_steps=n_steps,
        n_blocks=2,
        master_seed=derive_key(int(run.master_seed), TUNE_BRANCH),
    )


def tune_delta_max(
    integrand: Integrand,
    domain: HyperRectangle,
    pilot: MorphRun,
    grid=TUNE_GRID,
    target_pct: float = 50.0,
    refine: bool = True,
    workers: int = 1,
) -> TuningResult:
    """Pick the move size whose pilot acceptance is closest to ``target_pct``.

    Candidates are ``multiplier * width / 100`` per dimension.  After the grid
    sweep, the multiplier is refined by log-linear interpolation between the
    two grid points that bracket the target, and the refined candidate is kept
    if its measured acceptance is closer to the target.
    """
    if pilot.propagator.kind is not PropagatorKind.ISMC:
        raise ValueError("tuning applies to the IS-MC propagator only")
    base = domain.widths / 100.0
    ref = flat_reference(domain, pilot.e_trial)

    def acceptance(mult):
        cfg = PropagatorConfig.ismc(mult * base)
        ens = run_ensemble(integrand, domain, pilot.replace(propagator=cfg), workers=workers, ref=ref)
        return ens.acceptance_pct

    table = [(float(m), acceptance(m)) for m in grid]
    if max(a for _, a in table) < 5.0:
        raise TuningFailed("every candidate move size gives less than 5% acceptance")
    if refine:
        for (m0, a0), (m1, a1) in zip(table, table[1:]):
            if a0 >= target_pct >= a1 and a0 > a1:
                frac = (a0 - target_pct) / (a0 - a1)
                m = float(math.exp(math.log(m0) + frac * (math.log(m1) - math.log(m0))))
                table.append((m, acceptance(m)))
                break
    # nearest to target; ties go to the larger move
    best_m, best_a = min(table, key=lambda r: (abs(r[1] - target_pct), -r[0]))
    warns = (RunWarning.LOW_ACCEPTANCE,) if best_a < LOW_ACCEPTANCE_PCT else ()
    if warns:
        log.warning("best pilot acceptance %.1f%% is below %.0f%%", best_a, LOW_ACCEPTANCE_PCT)
    return TuningResult(best_m * base, best_a, table, warns)
