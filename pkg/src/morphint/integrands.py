"""Integrands: compiled evaluators of f, u = -ln f and their gradients.

An :class:`Integrand` carries numba kernels operating on one point (a 1-D
float64 array).  The engine, the oracle and the splitting module compose these
kernels directly; the ``eval_*`` methods are the array-friendly Python face.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from typing import Callable

import numpy as np
from numba import njit
from scipy.special import erf

from .errors import BadParams, UnknownName, UnsupportedDomain
from .expression import ExpressionProgram


class Signedness(str, Enum):
    STRICTLY_POSITIVE = "StrictlyPositive"
    MAY_SIGN_CHANGE = "MaySignChange"


BUILTINS = ("PhiA", "PhiB", "PhiC", "GenzC0", "GenzGaussian", "Constant")


def _vectorize_scalar(kernel):
    @njit
    def run(X):
        out = np.empty(X.shape[0])
        for i in range(X.shape[0]):
            out[i] = kernel(X[i])
        return out

    return run


def _vectorize_grad(kernel):
    @njit
    def run(X):
        out = np.empty_like(X)
        for i in range(X.shape[0]):
            kernel(X[i], out[i])
        return out

    return run


@dataclass(eq=False)
class Integrand:
    """A function on R^dim with compiled kernels.

    ``f_kernel(x)`` returns the (possibly signed) value.  ``u_kernel(x)``
    returns ``-ln f(x)`` and +inf wherever f is not positive and finite.
    ``grad_u_kernel(x, out)`` and ``grad_f_kernel(x, out)`` fill ``out``.
    """

    dim: int
    signedness: Signedness
    f_kernel: Callable
    u_kernel: Callable
    grad_u_kernel: Callable | None = None
    grad_f_kernel: Callable | None = None
    name: str = "custom"
    spec: dict = field(default_factory=dict)
    _vec: dict = field(default_factory=dict, repr=False)

    @property
    def has_gradient(self) -> bool:
        return self.grad_u_kernel is not None

    def _vectorized(self, which):
        fn = self._vec.get(which)
        if fn is None:
            kern = getattr(self, which)
            if kern is None:
                raise AttributeError(f"{self.name} has no {which}")
            fn = _vectorize_grad(kern) if which.startswith("grad") else _vectorize_scalar(kern)
            self._vec[which] = fn
        return fn

    def _call(self, which, x):
        X = np.ascontiguousarray(x, dtype=np.float64)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        if X.shape[1] != self.dim:
            raise BadParams(f"expected points of dimension {self.dim}, got {X.shape[1]}")
        out = self._vectorized(which)(X)
        return out[0] if single else out

    def eval_f(self, x):
        return self._call("f_kernel", x)

    def eval_u(self, x):
        return self._call("u_kernel", x)

    def eval_grad_u(self, x):
        return self._call("grad_u_kernel", x)

    def eval_grad_f(self, x):
        return self._call("grad_f_kernel", x)


# ---------------------------------------------------------------- blocks


@njit(inline="always")
def _phi_a_parts(x, o):
    a, b, c = x[o], x[o + 1], x[o + 2]
    p = 2.0 * a - 0.5 * b * b * b + 3.0 * c
    q = 4.0 * a * a + 8.0 * b + 2.0 * c
    return a, b, c, p, q


@njit(inline="always")
def phi_a_u(x, o):
    _, _, _, p, q = _phi_a_parts(x, o)
    cq = math.cos(q)
    return 10.0 * math.cos(p) + 5.0 * cq * cq


@njit(inline="always")
def phi_a_grad_u(x, o, out):
    a, b, _, p, q = _phi_a_parts(x, o)
    sp = -10.0 * math.sin(p)
    sq = -5.0 * math.sin(2.0 * q)
    out[o] = sp * 2.0 + sq * 8.0 * a
    out[o + 1] = sp * (-1.5 * b * b) + sq * 8.0
    out[o + 2] = sp * 3.0 + sq * 2.0


@njit(inline="always")
def phi_b_f(x, o):
    a, b, c = x[o], x[o + 1], x[o + 2]
    r = -0.3 * a * a + 4.0 * b + 0.5 * c * c * c
    return -math.exp(-10.0 * math.sin(r)) + math.exp(-phi_a_u(x, o))


@njit(inline="always")
def phi_b_grad_f(x, o, out):
    a, b, c = x[o], x[o + 1], x[o + 2]
    r = -0.3 * a * a + 4.0 * b + 0.5 * c * c * c
    # d/dx of -exp(-10 sin r) = 10 cos(r) exp(-10 sin r) dr/dx
    k = 10.0 * math.cos(r) * math.exp(-10.0 * math.sin(r))
    fa = math.exp(-phi_a_u(x, o))
    phi_a_grad_u(x, o, out)
    out[o] = k * (-0.6 * a) - fa * out[o]
    out[o + 1] = k * 4.0 - fa * out[o + 1]
    out[o + 2] = k * (1.5 * c * c) - fa * out[o + 2]


@njit(inline="always")
def phi_c_f(x, o):
    prod = x[o] * x[o + 1] * x[o + 2]
    return -math.exp(-phi_a_u(x, o)) * math.log(prod)


@njit(inline="always")
def phi_c_grad_f(x, o, out):
    fa = math.exp(-phi_a_u(x, o))
    lg = math.log(x[o] * x[o + 1] * x[o + 2])
    phi_a_grad_u(x, o, out)
    for k in range(3):
        out[o + k] = fa * (out[o + k] * lg - 1.0 / x[o + k])


def _signed_product(block_f, block_grad_f, terns):
    """Kernels for f = prod of signed three-variable blocks."""

    @njit(error_model="numpy")
    def f(x):
        v = 1.0
        for t in range(terns):
            v *= block_f(x, 3 * t)
        return v

    @njit(error_model="numpy")
    def u(x):
        v = f(x)
        if v > 0.0 and v < math.inf:
            return -math.log(v)
        return math.inf

    @njit(error_model="numpy")
    def grad_f(x, out):
        vals = np.empty(terns)
        for t in range(terns):
            vals[t] = block_f(x, 3 * t)
            block_grad_f(x, 3 * t, out)
        for t in range(terns):
            others = 1.0
            for s in range(terns):
                if s != t:
                    others *= vals[s]
            for k in range(3):
                out[3 * t + k] *= others

    @njit(error_model="numpy")
    def grad_u(x, out):
        grad_f(x, out)
        v = f(x)
        for i in range(x.size):
            out[i] = -out[i] / v

    return f, u, grad_u, grad_f


def _positive_from_u(u, grad_u):
    @njit(error_model="numpy")
    def f(x):
        return math.exp(-u(x))

    grad_f = None
    if grad_u is not None:

        @njit(error_model="numpy")
        def grad_f(x, out):
            grad_u(x, out)
            v = math.exp(-u(x))
            for i in range(x.size):
                out[i] = -v * out[i]

    return f, grad_f


@lru_cache(maxsize=None)
def _phi_a_kernels(terns):
    @njit
    def u(x):
        s = 0.0
        for t in range(terns):
            s += phi_a_u(x, 3 * t)
        return s

    @njit
    def grad_u(x, out):
        for t in range(terns):
            phi_a_grad_u(x, 3 * t, out)

    f, grad_f = _positive_from_u(u, grad_u)
    return f, u, grad_u, grad_f


@lru_cache(maxsize=None)
def _phi_b_kernels(terns):
    return _signed_product(phi_b_f, phi_b_grad_f, terns)


@lru_cache(maxsize=None)
def _phi_c_kernels(terns):
    return _signed_product(phi_c_f, phi_c_grad_f, terns)


@lru_cache(maxsize=None)
def _constant_kernels(level):
    @njit
    def u(x):
        return level

    @njit
    def grad_u(x, out):
        out[:] = 0.0

    f, grad_f = _positive_from_u(u, grad_u)
    return f, u, grad_u, grad_f


def _genz_kernels(kind, a, w):
    a = np.array(a, dtype=np.float64)
    w = np.array(w, dtype=np.float64)
    n = a.size
    if kind == "GenzC0":

        @njit
        def u(x):
            s = 0.0
            for i in range(n):
                s += a[i] * abs(x[i] - w[i])
            return s

        @njit
        def grad_u(x, out):
            for i in range(n):
                d = x[i] - w[i]
                out[i] = a[i] * (1.0 if d > 0 else (-1.0 if d < 0 else 0.0))

    else:

        @njit
        def u(x):
            s = 0.0
            for i in range(n):
                d = x[i] - w[i]
                s += a[i] * a[i] * d * d
            return s

        @njit
        def grad_u(x, out):
            for i in range(n):
                out[i] = 2.0 * a[i] * a[i] * (x[i] - w[i])

    f, grad_f = _positive_from_u(u, grad_u)
    return f, u, grad_u, grad_f


def _genz_params(params, dim):
    a = params.get("a", 1.0)
    w = params.get("w", params.get("u", 0.0))
    a = np.broadcast_to(np.asarray(a, dtype=np.float64), (dim,)).copy()
    w = np.broadcast_to(np.asarray(w, dtype=np.float64), (dim,)).copy()
    if np.any(a < 0) or not (np.all(np.isfinite(a)) and np.all(np.isfinite(w))):
        raise BadParams("Genz shape parameters must be finite and non-negative")
    return a, w


def builtin(name: str, terns: int = 1, **params) -> Integrand:
    """Instantiate one of the test integrands.

    ``PhiA``, ``PhiB`` and ``PhiC`` are products of ``terns`` identical
    three-variable blocks (dimension ``3 * terns``).  ``Constant`` needs
    ``k`` (f = exp(-k)) and ``dim``; the Genz families take ``dim`` and the
    per-dimension arrays ``a`` (shape) and ``w`` (shift).
    """
    if name not in BUILTINS:
        raise UnknownName(f"unknown builtin {name!r}; choose from {', '.join(BUILTINS)}")
    if name in ("PhiA", "PhiB", "PhiC"):
        if int(terns) != terns or terns < 1:
            raise BadParams("terns must be a positive integer")
        if params:
            raise BadParams(f"{name} takes no parameters, got {sorted(params)}")
        terns = int(terns)
        kernels = {"PhiA": _phi_a_kernels, "PhiB": _phi_b_kernels, "PhiC": _phi_c_kernels}[name](terns)
        sign = Signedness.STRICTLY_POSITIVE if name == "PhiA" else Signedness.MAY_SIGN_CHANGE
        f, u, gu, gf = kernels
        return Integrand(3 * terns, sign, f, u, gu, gf, name=name, spec={"builtin": name, "terns": terns})
    dim = params.pop("dim", None)
    if dim is None or int(dim) != dim or dim < 1:
        raise BadParams(f"{name} needs a positive integer 'dim'")
    dim = int(dim)
    if name == "Constant":
        extra = set(params) - {"k"}
        if extra:
            raise BadParams(f"unexpected parameters {sorted(extra)}")
        k = float(params.get("k", 0.0))
        if not math.isfinite(k):
            raise BadParams("k must be finite")
        f, u, gu, gf = _constant_kernels(k)
        spec = {"builtin": name, "dim": dim, "k": k}
    else:
        extra = set(params) - {"a", "w", "u"}
        if extra:
            raise BadParams(f"unexpected parameters {sorted(extra)}")
        a, w = _genz_params(params, dim)
        f, u, gu, gf = _genz_kernels(name, a, w)
        spec = {"builtin": name, "dim": dim, "a": a.tolist(), "w": w.tolist()}
    return Integrand(dim, Signedness.STRICTLY_POSITIVE, f, u, gu, gf, name=name, spec=spec)


def from_expression(program: ExpressionProgram, signedness=Signedness.STRICTLY_POSITIVE) -> Integrand:
    """Integrand evaluating a parsed expression.

    Gradients come from central differences with step
    ``h_i = max(1e-6, 1e-8 * |x_i|)``.
    """
    signedness = Signedness(signedness)
    f = program.compile()
    dim = program.dim

    @njit(error_model="numpy")
    def u(x):
        v = f(x)
        if v > 0.0 and v < math.inf:
            return -math.log(v)
        return math.inf

    @njit(error_model="numpy")
    def grad_u(x, out):
        y = x.copy()
        for i in range(dim):
            h = max(1e-6, 1e-8 * abs(x[i]))
            y[i] = x[i] + h
            up = u(y)
            y[i] = x[i] - h
            um = u(y)
            y[i] = x[i]
            out[i] = (up - um) / (2.0 * h)

    @njit(error_model="numpy")
    def grad_f(x, out):
        y = x.copy()
        for i in range(dim):
            h = max(1e-6, 1e-8 * abs(x[i]))
            y[i] = x[i] + h
            fp = f(y)
            y[i] = x[i] - h
            fm = f(y)
            y[i] = x[i]
            out[i] = (fp - fm) / (2.0 * h)

    spec = {"expression": program.source, "dim": dim, "signedness": signedness.value}
    return Integrand(dim, signedness, f, u, grad_u, grad_f, name="expression", spec=spec)


# ------------------------------------------------------------ references


def genz_reference(name: str, params: dict, domain) -> float:
    """Exact integral of a Genz integrand over the unit hypercube."""
    if not (np.all(domain.lower == 0.0) and np.all(domain.upper == 1.0)):
        raise UnsupportedDomain("Genz references are defined on the unit hypercube only")
    a, w = _genz_params(dict(params), domain.dim)
    if name == "GenzC0":
        if np.any((w < 0.0) | (w > 1.0)):
            raise BadParams("the GenzC0 closed form needs shifts w inside [0, 1]")
        factors = np.where(
            a > 0,
            (2.0 - np.exp(-a * w) - np.exp(-a * (1.0 - w))) / np.where(a > 0, a, 1.0),
            1.0,
        )
    elif name == "GenzGaussian":
        safe = np.where(a > 0, a, 1.0)
        factors = np.where(
            a > 0,
            math.sqrt(math.pi) / (2.0 * safe) * (erf(safe * (1.0 - w)) + erf(safe * w)),
            1.0,
        )
    else:
        raise UnknownName(f"no closed form for {name!r}")
    return float(np.prod(factors))
