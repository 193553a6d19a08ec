"""Reference values: nested adaptive Gauss-Kronrod cubature for up to three
variables, product lifting to many dimensions, and the plain Monte Carlo
baselines used for comparison.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numba import njit, uint64

from .core import HyperRectangle, IntegralEstimate, quality_warnings
from .errors import LiftOverflow, NonFiniteSample
from .integrands import Integrand
from .propagators import PropagatorConfig, reflect_coord
from .rng import draw_uniform

# 21-point Kronrod extension of the 10-point Gauss rule (QUADPACK qk21).
XGK = np.array([
    0.995657163025808080735527280689003, 0.973906528517171720077964012084452,
    0.930157491355708226001207180059508, 0.865063366688984510732096688423493,
    0.780817726586416897063717578345042, 0.679409568299024406234327365114874,
    0.562757134668604683339000099272694, 0.433395394129247190799265943165784,
    0.294392862701460198131126603103866, 0.148874338981631210884826001129720,
    0.000000000000000000000000000000000,
])
WGK = np.array([
    0.011694638867371874278064396062192, 0.032558162307964727478818972459390,
    0.054755896574351996031381300244580, 0.075039674810919952767043140916190,
    0.093125454583697605535065465083366, 0.109387158802297641899210590325805,
    0.123491976262065851077958109831074, 0.134709217311473325928054001771707,
    0.142775938577060080797094273138717, 0.147739104901338491374841515972068,
    0.149445554002916905664936468389821,
])
WG = np.array([
    0.066671344308688137593568809893332, 0.149451349150580593145776339657697,
    0.219086362515982043995534934228163, 0.269266719309996355091226921569469,
    0.295524224714752870173892994651338,
])

LIMIT = 400
_EPMACH = np.finfo(np.float64).eps
_UFLOW = np.finfo(np.float64).tiny


class ToleranceNotReached(UserWarning):
    pass


@dataclass(frozen=True)
class CubatureResult:
    value: float
    abs_error_bound: float
    evaluations: int
    converged: bool = True


def _make_level(node_fn, axis, outermost):
    """Adaptive integration over coordinate ``axis``.

    ``node_fn`` returns (value, error, L1 value) of everything nested inside
    at the current point.  Inner levels stop on ``err <= rtol * L1`` so
    slices whose signed integral nearly cancels do not stall; the outermost
    level uses ``|value|``.
    """

    @njit
    def rule(x, a, b, lo, hi, rtol, state):
        c = 0.5 * (a + b)
        hl = 0.5 * (b - a)
        fv = np.empty(21)
        x[axis] = c
        fc, ec, ac = node_fn(x, lo, hi, rtol, state)
        resk = WGK[10] * fc
        ev = WGK[10] * ec
        l1 = WGK[10] * ac
        resg = 0.0
        for j in range(10):
            xj = hl * XGK[j]
            x[axis] = c - xj
            f1, e1, a1 = node_fn(x, lo, hi, rtol, state)
            x[axis] = c + xj
            f2, e2, a2 = node_fn(x, lo, hi, rtol, state)
            fv[2 * j] = f1
            fv[2 * j + 1] = f2
            resk += WGK[j] * (f1 + f2)
            ev += WGK[j] * (e1 + e2)
            l1 += WGK[j] * (a1 + a2)
            if j % 2 == 1:
                resg += WG[j // 2] * (f1 + f2)
        reskh = 0.5 * resk
        resasc = WGK[10] * abs(fc - reskh)
        resabs = WGK[10] * abs(fc)
        for j in range(10):
            resasc += WGK[j] * (abs(fv[2 * j] - reskh) + abs(fv[2 * j + 1] - reskh))
            resabs += WGK[j] * (abs(fv[2 * j]) + abs(fv[2 * j + 1]))
        result = resk * hl
        err = abs((resk - resg) * hl)
        resasc *= hl
        resabs *= hl
        if resasc != 0.0 and err != 0.0:
            err = resasc * min(1.0, (200.0 * err / resasc) ** 1.5)
        if resabs > _UFLOW / (50.0 * _EPMACH):
            err = max(50.0 * _EPMACH * resabs, err)
        return result, err + ev * hl, l1 * hl

    @njit
    def level(x, lo, hi, rtol, state):
        inner = rtol * 0.1
        A = np.empty(LIMIT)
        B = np.empty(LIMIT)
        R = np.empty(LIMIT)
        E = np.empty(LIMIT)
        L = np.empty(LIMIT)
        saved = x[axis]
        A[0], B[0] = lo[axis], hi[axis]
        R[0], E[0], L[0] = rule(x, lo[axis], hi[axis], lo, hi, inner, state)
        n = 1
        while state[1] == 0:
            total = 0.0
            errsum = 0.0
            l1 = 0.0
            worst = 0
            for i in range(n):
                total += R[i]
                errsum += E[i]
                l1 += L[i]
                if E[i] > E[worst]:
                    worst = i
            scale = abs(total) if outermost else l1
            if errsum <= rtol * scale or errsum <= 1e-300:
                break
            if n >= LIMIT:
                state[2] = 1
                break
            a, b = A[worst], B[worst]
            m = 0.5 * (a + b)
            if not (a < m < b):
                state[2] = 1
                break
            r1, e1, l1a = rule(x, a, m, lo, hi, inner, state)
            r2, e2, l1b = rule(x, m, b, lo, hi, inner, state)
            A[worst], B[worst], R[worst], E[worst], L[worst] = a, m, r1, e1, l1a
            A[n], B[n], R[n], E[n], L[n] = m, b, r2, e2, l1b
            n += 1
        x[axis] = saved
        total = 0.0
        errsum = 0.0
        l1 = 0.0
        for i in range(n):
            total += R[i]
            errsum += E[i]
            l1 += L[i]
        return total, errsum, l1

    return level


def _make_leaf(f):
    @njit
    def leaf(x, lo, hi, rtol, state):
        v = f(x)
        state[0] += 1
        if not math.isfinite(v):
            state[1] = 1
            return 0.0, 0.0, 0.0
        return v, 0.0, abs(v)

    return leaf


@lru_cache(maxsize=64)
def _cubature_kernel(f_kernel, dim):
    fn = _make_leaf(f_kernel)
    for axis in range(dim - 1, -1, -1):
        fn = _make_level(fn, axis, axis == 0)
    return fn


def cubature_3d(block: Integrand, domain: HyperRectangle, rel_tol: float = 1e-8) -> CubatureResult:
    """Iterated adaptive Gauss-Kronrod integration of a 1-, 2- or 3-variable
    integrand.  Nodes never touch the interval ends, so integrable endpoint
    singularities are handled.

    Raises NonFiniteSample if the integrand is not finite at some node;
    warns with ToleranceNotReached (and ``converged=False``) when the
    subdivision limit is hit.
    """
    if block.dim not in (1, 2, 3) or domain.dim != block.dim:
        raise ValueError("cubature_3d handles 1 to 3 variables with a matching domain")
    if not rel_tol >= 1e-10:
        raise ValueError("rel_tol must be at least 1e-10")
    kern = _cubature_kernel(block.f_kernel, block.dim)
    state = np.zeros(3, dtype=np.int64)
    x = np.array(0.5 * (domain.lower + domain.upper))
    value, err, _ = kern(x, np.array(domain.lower), np.array(domain.upper), float(rel_tol), state)
    if state[1]:
        raise NonFiniteSample("integrand is not finite at an interior node")
    converged = not state[2] and err <= rel_tol * abs(value)
    if not converged:
        warnings.warn(
            f"cubature stopped with error {err:.3g} (value {value:.6g})", ToleranceNotReached, stacklevel=2
        )
    return CubatureResult(float(value), float(err), int(state[0]), bool(converged))


def product_lift_log10(block_value: float, terns: int) -> tuple[float, float]:
    """``(sign, log10 |block_value ** terns|)`` without forming the power."""
    if block_value == 0.0:
        return 0.0, -math.inf
    sign = -1.0 if (block_value < 0 and terns % 2) else 1.0
    return sign, terns * math.log10(abs(block_value))


def product_lift(block_value: float, terns: int) -> float:
    """``block_value ** terns`` for a product of identical blocks."""
    if int(terns) != terns or terns < 1:
        raise ValueError("terns must be a positive integer")
    sign, lg = product_lift_log10(block_value, int(terns))
    if lg > 308.0 and lg > math.log10(np.finfo(np.float64).max):
        raise LiftOverflow(f"result 10^{lg:.3f} does not fit in a double; use product_lift_log10")
    return sign * abs(block_value) ** int(terns)


def split_log10(value: float) -> tuple[float, int]:
    """Mantissa and decimal exponent, ``value = m * 10**e`` with 1 <= |m| < 10."""
    if value == 0.0 or not math.isfinite(value):
        return value, 0
    e = math.floor(math.log10(abs(value)))
    m = value / 10.0**e
    if abs(m) >= 10.0:
        m, e = m / 10.0, e + 1
    return m, int(e)


# -------------------------------------------------------------- baselines


@njit
def _sample_mean_kernel(f_fn, key, lo, hi, n_points):
    n = lo.size
    x = np.empty(n)
    mean = 0.0
    m2 = 0.0
    ctr = uint64(0)
    for i in range(n_points):
        for d in range(n):
            x[d] = lo[d] + (hi[d] - lo[d]) * draw_uniform(key, ctr)
            ctr += uint64(1)
        v = f_fn(x)
        delta = v - mean
        mean += delta / (i + 1)
        m2 += delta * (v - mean)
    return mean, m2


def baseline_sample_mean(integrand: Integrand, domain: HyperRectangle, n_points: int, seed: int) -> IntegralEstimate:
    """Volume times the average of f at uniformly drawn points."""
    if n_points < 1:
        raise ValueError("n_points must be positive")
    mean, m2 = _sample_mean_kernel(
        integrand.f_kernel, np.uint64(seed), np.array(domain.lower), np.array(domain.upper), int(n_points)
    )
    var = m2 / (n_points - 1) if n_points > 1 else 0.0
    value = domain.volume * mean
    sigma = domain.volume * math.sqrt(max(var, 0.0) / n_points)
    return IntegralEstimate(
        value=value,
        sigma=sigma,
        bias=0.0,
        acceptance_pct=100.0,
        block_factors=np.array([mean]),
        warnings=tuple(quality_warnings(value, sigma, None)),
    )


@njit
def _chain_kernel(u_fn, key, lo, hi, delta, n_steps, n_segments, seg_max, seg_sum, burn_in):
    """Metropolis chain targeting exp(-u).  For each segment, accumulates
    exp(u) as a scaled sum (max, sum of exp(u - max))."""
    n = lo.size
    x = np.empty(n)
    xn = np.empty(n)
    ctr = uint64(0)
    for d in range(n):
        x[d] = lo[d] + (hi[d] - lo[d]) * draw_uniform(key, ctr)
        ctr += uint64(1)
    u = u_fn(x)
    acc = 0
    per = max(1, (n_steps - burn_in) // n_segments)
    for k in range(n_segments):
        seg_max[k] = -math.inf
        seg_sum[k] = 0.0
    for s in range(n_steps):
        for d in range(n):
            y = x[d] + delta[d] * (2.0 * draw_uniform(key, ctr) - 1.0)
            ctr += uint64(1)
            xn[d] = reflect_coord(y, lo[d], hi[d])
        alpha = draw_uniform(key, ctr)
        ctr += uint64(1)
        un = u_fn(xn)
        if math.isfinite(un):
            du = un - u
            if du <= 0.0 or alpha < math.exp(-du):
                for d in range(n):
                    x[d] = xn[d]
                u = un
                acc += 1
        if s < burn_in:
            continue
        k = min((s - burn_in) // per, n_segments - 1)
        if u > seg_max[k]:
            seg_sum[k] = seg_sum[k] * math.exp(seg_max[k] - u) + 1.0
            seg_max[k] = u
        else:
            seg_sum[k] += math.exp(u - seg_max[k])
    return acc


def baseline_ismc(
    integrand: Integrand,
    domain: HyperRectangle,
    n_chains: int,
    n_steps: int,
    delta_max,
    seed: int,
    burn_in: int = 0,
    n_segments: int = 10,
) -> IntegralEstimate:
    """Direct Metropolis sampling of f with the harmonic-mean estimator.

    Chains target ``f / E``; since the average of ``1/f`` under that density
    is ``V / E``, the estimate is ``V / mean(1/f)`` over all chain states.
    The uncertainty comes from the spread of per-segment means.  This is a
    comparison baseline and fails on strongly peaked integrands.
    """
    from .rng import derive_key

    if n_chains < 1 or n_steps < 1:
        raise ValueError("n_chains and n_steps must be positive")
    delta = PropagatorConfig.ismc(delta_max).deltas_for(domain.dim)
    lo, hi = np.array(domain.lower), np.array(domain.upper)
    maxes, sums, counts = [], [], []
    accepted = 0
    kept = n_steps - burn_in
    n_seg = max(1, min(n_segments, kept))
    per = max(1, kept // n_seg)
    for ch in range(n_chains):
        smax = np.empty(n_seg)
        ssum = np.empty(n_seg)
        accepted += _chain_kernel(
            integrand.u_kernel, np.uint64(derive_key(seed, ch)), lo, hi, delta, int(n_steps), n_seg, smax, ssum,
            int(burn_in),
        )
        cnt = np.full(n_seg, per, dtype=np.float64)
        cnt[-1] = kept - per * (n_seg - 1)
        maxes.append(smax)
        sums.append(ssum)
        counts.append(cnt)
    smax, ssum, cnt = np.concatenate(maxes), np.concatenate(sums), np.concatenate(counts)
    top = float(smax.max())
    # segment means of 1/f, scaled by exp(-top)
    h = ssum * np.exp(smax - top) / cnt
    hbar = float(np.sum(ssum * np.exp(smax - top)) / cnt.sum())
    value = domain.volume * math.exp(-top) / hbar
    spread = float(np.std(h, ddof=1) / math.sqrt(h.size)) if h.size > 1 else 0.0
    sigma = value * spread / hbar
    acc_pct = 100.0 * accepted / (n_chains * n_steps)
    return IntegralEstimate(
        value=value,
        sigma=sigma,
        bias=0.0,
        acceptance_pct=acc_pct,
        block_factors=h,
        warnings=tuple(quality_warnings(value, sigma, acc_pct)),
    )
