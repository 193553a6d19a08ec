"""Signed integrands as the difference of two strictly positive ones.

``f = f_plus - f_minus`` with ``f_pm = (K * sqrt(f^2 + eps^2) +- f) / 2``.
Each component is integrated by the morphing engine on its own seed branch
and the uncertainties are added in quadrature.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .core import HyperRectangle, IntegralEstimate, MorphRun, RunWarning, flat_reference, quality_warnings
from .engine import LINEAR, pilot_run, run_integration, tune_delta_max
from .errors import BadSplitConfig
from .integrands import Integrand, Signedness
from .propagators import PropagatorConfig, PropagatorKind
from .rng import derive_key

PLUS_BRANCH, MINUS_BRANCH = 1, 2


@dataclass(frozen=True)
class SplitConfig:
    K: float = 2.0
    epsilon: float = 1e-5

    def __post_init__(self):
        if not (self.K >= 1.0 and math.isfinite(self.K)):
            raise BadSplitConfig(f"K must be >= 1, got {self.K}")
        if not (self.epsilon > 0.0 and math.isfinite(self.epsilon)):
            raise BadSplitConfig(f"epsilon must be positive, got {self.epsilon}")

    def to_dict(self) -> dict:
        return {"K": self.K, "epsilon": self.epsilon}


@njit(error_model="numpy")
def split_value(v, K, eps, sign):
    """``(K * hypot(v, eps) + sign * v) / 2`` without cancellation."""
    if not math.isfinite(v):
        return math.nan
    s = sign * v
    if s >= 0.0:
        return 0.5 * (K * math.hypot(v, eps) + s)
    a = -s
    if a <= eps:
        return 0.5 * (K * math.hypot(a, eps) - a)
    # K*h - |v| rewritten to avoid cancellation (matters for K close to 1)
    r = eps / a
    return 0.5 * ((K * K - 1.0) * a + K * K * eps * r) / (K * math.sqrt(1.0 + r * r) + 1.0)


def _component_kernels(parent: Integrand, K: float, eps: float, sign: float):
    f0 = parent.f_kernel
    gf0 = parent.grad_f_kernel

    @njit(error_model="numpy")
    def g(x):
        return split_value(f0(x), K, eps, sign)

    @njit(error_model="numpy")
    def u(x):
        v = g(x)
        if v > 0.0 and v < math.inf:
            return -math.log(v)
        return math.inf

    grad_u = grad_f = None
    if gf0 is not None:

        @njit(error_model="numpy")
        def grad_f(x, out):
            gf0(x, out)
            v = f0(x)
            k = 0.5 * (K * v / math.hypot(v, eps) + sign)
            for i in range(x.size):
                out[i] *= k

        @njit(error_model="numpy")
        def grad_u(x, out):
            grad_f(x, out)
            v = g(x)
            for i in range(x.size):
                out[i] = -out[i] / v

    return g, u, grad_u, grad_f


def split_components(integrand: Integrand, cfg: SplitConfig = SplitConfig()) -> tuple[Integrand, Integrand]:
    """Return ``(f_plus, f_minus)``, both strictly positive."""
    if not isinstance(cfg, SplitConfig):
        raise BadSplitConfig("cfg must be a SplitConfig")
    parts = []
    for sign, tag in ((1.0, "plus"), (-1.0, "minus")):
        g, u, gu, gf = _component_kernels(integrand, float(cfg.K), float(cfg.epsilon), sign)
        spec = {"component": tag, "parent": integrand.spec, **cfg.to_dict()}
        parts.append(
            Integrand(integrand.dim, Signedness.STRICTLY_POSITIVE, g, u, gu, gf, name=f"{integrand.name}_{tag}", spec=spec)
        )
    return parts[0], parts[1]


def integrate_signed(
    integrand: Integrand,
    domain: HyperRectangle,
    run: MorphRun,
    cfg: SplitConfig = SplitConfig(),
    tune: bool = False,
    workers: int = 1,
    schedule=LINEAR,
    return_tuning: bool = False,
):
    """Integrate a possibly sign-changing function as ``E_plus - E_minus``.

    With ``tune`` the IS-MC move size is tuned separately for each component.
    The returned estimate holds both component estimates under
    ``components['plus']`` / ``components['minus']`` and the largest ``|f|``
    seen at the trajectory end points in ``max_abs_f``.
    """
    f_plus, f_minus = split_components(integrand, cfg)
    results = {}
    tuning = {}
    max_abs = 0.0
    for comp, tag, branch in ((f_plus, "plus", PLUS_BRANCH), (f_minus, "minus", MINUS_BRANCH)):
        crun = run.replace(master_seed=derive_key(int(run.master_seed), branch))
        if tune and run.propagator.kind is PropagatorKind.ISMC:
            tr = tune_delta_max(comp, domain, pilot_run(crun), workers=workers)
            crun = crun.replace(propagator=PropagatorConfig.ismc(tr.delta_max))
            tuning[tag] = tr
        est, ens = run_integration(comp, domain, crun, schedule=schedule, workers=workers, return_ensemble=True)
        results[tag] = est
        fv = np.abs(integrand.eval_f(ens.final_points))
        fv = fv[np.isfinite(fv)]
        if fv.size:
            max_abs = max(max_abs, float(fv.max()))
    plus, minus = results["plus"], results["minus"]
    value = plus.value - minus.value
    sigma = math.hypot(plus.sigma, minus.sigma)
    acc = 0.5 * (plus.acceptance_pct + minus.acceptance_pct)
    warns = []
    for w in plus.warnings + minus.warnings:
        if w is RunWarning.LOW_ACCEPTANCE and w not in warns:
            warns.append(w)
    for w in quality_warnings(value, sigma, None):
        if w not in warns:
            warns.append(w)
    if abs(value) < sigma:
        warns.append(RunWarning.CANCELLATION)
    if cfg.epsilon > 1e-3 * max_abs:
        warns.append(RunWarning.EPSILON_TOO_LARGE)
    e0 = flat_reference(domain, run.e_trial).e0
    blocks = e0 * (plus.block_factors - minus.block_factors)
    est = IntegralEstimate(
        value=value,
        sigma=sigma,
        bias=plus.bias - minus.bias,
        acceptance_pct=acc,
        block_factors=blocks,
        warnings=tuple(warns),
        sigma_w=None,
        components={"plus": plus, "minus": minus},
        max_abs_f=max_abs,
    )
    return (est, tuning) if return_tuning else est
