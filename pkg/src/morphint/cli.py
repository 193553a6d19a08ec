"""Command-line driver: ``morphint --spec run.json --mode integrate``.

A run is described by one JSON document (see ``RUN_SCHEMA``); unknown keys
are rejected.  Exit codes: 0 clean, 1 hard error, 2 finished with warnings.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
import time

import jsonschema
import numpy as np

from . import __version__
from .core import MorphRun, dumps, format_real, make_domain
from .engine import displacement_trace, pilot_run, run_integration, tune_delta_max
from .errors import MorphIntError
from .expression import parse_expression
from .integrands import Signedness, builtin, from_expression, genz_reference
from .oracle import (
    baseline_ismc,
    baseline_sample_mean,
    cubature_3d,
    product_lift,
    split_log10,
)
from .propagators import PropagatorConfig, PropagatorKind
from .splitting import SplitConfig, integrate_signed, split_components

log = logging.getLogger("morphint")

EXIT_OK, EXIT_ERROR, EXIT_WARN = 0, 1, 2
MODES = ("integrate", "tune", "bench", "trace")
WORKERS_ENV = "MORPHINT_WORKERS"

_REAL_OR_LIST = {"oneOf": [{"type": "number"}, {"type": "array", "items": {"type": "number"}, "minItems": 1}]}

INTEGRAND_SCHEMA = {
    "oneOf": [
        {
            "type": "object",
            "properties": {
                "builtin": {"enum": ["PhiA", "PhiB", "PhiC", "GenzC0", "GenzGaussian", "Constant"]},
                "terns": {"type": "integer", "minimum": 1},
                "params": {"type": "object"},
            },
            "required": ["builtin"],
            "additionalProperties": False,
        },
        {
            "type": "object",
            "properties": {
                "expression": {"type": "string"},
                "dim": {"type": "integer", "minimum": 1},
                "signedness": {"enum": [s.value for s in Signedness]},
            },
            "required": ["expression", "dim"],
            "additionalProperties": False,
        },
    ]
}

PROPAGATOR_SCHEMA = {
    "type": "object",
    "properties": {
        "kind": {"enum": ["ismc", "langevin"]},
        "delta_max": {"oneOf": [{"const": "auto"}, _REAL_OR_LIST]},
        "diffusion": {"type": "number"},
    },
    "required": ["kind"],
    "additionalProperties": False,
}

RUN_SCHEMA = {
    "type": "object",
    "properties": {
        "mode": {"enum": list(MODES)},
        "integrand": INTEGRAND_SCHEMA,
        "domain": {
            "type": "object",
            "properties": {"lower": _REAL_OR_LIST, "upper": _REAL_OR_LIST},
            "required": ["lower", "upper"],
            "additionalProperties": False,
        },
        "run": {
            "type": "object",
            "properties": {
                "n_traj": {"type": "integer", "minimum": 1},
                "n_steps": {"type": "integer", "minimum": 1},
                "n_blocks": {"type": "integer", "minimum": 1},
                "master_seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
                "e_trial": {"type": ["number", "null"]},
                "propagator": PROPAGATOR_SCHEMA,
            },
            "required": ["n_steps"],
            "additionalProperties": False,
        },
        "split": {
            "type": "object",
            "properties": {"K": {"type": "number"}, "epsilon": {"type": "number"}},
            "additionalProperties": False,
        },
        "probe_seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "output": {"type": "string"},
        "ensemble_csv": {"type": "string"},
    },
    "required": ["integrand", "domain", "run"],
    "additionalProperties": False,
}

BENCH_ROW_SCHEMA = {
    "type": "object",
    "properties": {
        "function": {"enum": ["PhiA", "PhiB", "PhiC", "GenzC0", "GenzGaussian", "Constant"]},
        "N": {"type": "integer", "minimum": 1},
        "method": {"enum": ["morph-ismc", "morph-langevin", "baseline-ismc", "baseline-mean"]},
        "params": {"type": "object"},
        "n_traj": {"type": "integer", "minimum": 1},
        "n_steps": {"type": "integer", "minimum": 1},
        "n_blocks": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "delta_max": {"oneOf": [{"const": "auto"}, _REAL_OR_LIST]},
        "diffusion": {"type": "number"},
        "n_points": {"type": "integer", "minimum": 1},
        "domain": {
            "type": "object",
            "properties": {"lower": _REAL_OR_LIST, "upper": _REAL_OR_LIST},
            "required": ["lower", "upper"],
            "additionalProperties": False,
        },
    },
    "required": ["function", "N", "method"],
    "additionalProperties": False,
}

BENCH_SCHEMA = {
    "type": "object",
    "properties": {
        "rows": {"type": "array", "items": BENCH_ROW_SCHEMA},
        "output": {"type": "string"},
        "oracle_rel_tol": {"type": "number"},
    },
    "required": ["rows"],
    "additionalProperties": False,
}

BENCH_COLUMNS = (
    "function", "N", "method", "params", "value", "sigma", "pct_error_vs_oracle", "acceptance_pct", "wall_time_s",
)

# default per-tern boxes for the three-variable block functions
_TERN_BOXES = {
    "PhiA": ([-3.0] * 3, [3.0] * 3),
    "PhiB": ([-3.0] * 3, [3.0] * 3),
    "PhiC": ([0.0] * 3, [1.0, 2.0, 3.0]),
}


class SpecError(MorphIntError):
    """The run description is malformed."""


def _validate(doc, schema, what):
    try:
        jsonschema.validate(doc, schema)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise SpecError(f"{what}: {where}: {exc.message}") from None


def load_json(path):
    with open(path, encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise SpecError(f"{path}: not valid JSON ({exc})") from None


def normalize_spec(doc: dict, seed: int | None = None) -> dict:
    """Validate ``doc`` and fill in defaults; the result is itself a valid spec."""
    _validate(doc, RUN_SCHEMA, "run spec")
    spec = json.loads(json.dumps(doc))
    run = spec["run"]
    run.setdefault("n_blocks", 50)
    run.setdefault("master_seed", 0)
    run.setdefault("e_trial", None)
    run.setdefault("propagator", {"kind": "ismc"})
    if seed is not None:
        run["master_seed"] = int(seed)
    prop = run["propagator"]
    if prop["kind"] == "ismc":
        prop.setdefault("delta_max", "auto")
        if "diffusion" in prop:
            raise SpecError("run spec: run/propagator: 'diffusion' applies to langevin only")
    else:
        if "diffusion" not in prop:
            raise SpecError("run spec: run/propagator: langevin needs 'diffusion'")
        if "delta_max" in prop:
            raise SpecError("run spec: run/propagator: 'delta_max' applies to ismc only")
    spec.setdefault("split", {})
    spec["split"].setdefault("K", 2.0)
    spec["split"].setdefault("epsilon", 1e-5)
    return spec


def _build_integrand(ispec: dict):
    if "builtin" in ispec:
        name = ispec["builtin"]
        params = dict(ispec.get("params", {}))
        if name in _TERN_BOXES:
            return builtin(name, terns=ispec.get("terns", 1), **params)
        if "terns" in ispec:
            raise SpecError(f"integrand: 'terns' does not apply to {name}")
        return builtin(name, **params)
    prog = parse_expression(ispec["expression"], ispec["dim"])
    return from_expression(prog, Signedness(ispec.get("signedness", Signedness.STRICTLY_POSITIVE.value)))


def _build_domain(dspec: dict, dim: int):
    lo = np.broadcast_to(np.asarray(dspec["lower"], dtype=float), (dim,)) if np.ndim(dspec["lower"]) == 0 else dspec["lower"]
    hi = np.broadcast_to(np.asarray(dspec["upper"], dtype=float), (dim,)) if np.ndim(dspec["upper"]) == 0 else dspec["upper"]
    return make_domain(lo, hi)


def _propagator(pspec: dict, domain):
    if pspec["kind"] == "langevin":
        return PropagatorConfig.langevin(pspec["diffusion"])
    dm = pspec.get("delta_max", "auto")
    if dm == "auto":
        return PropagatorConfig.ismc(domain.widths / 100.0)
    return PropagatorConfig.ismc(dm)


def _auto_tune(pspec: dict) -> bool:
    return pspec["kind"] == "ismc" and pspec.get("delta_max", "auto") == "auto"


def _setup(spec: dict, single: bool = False):
    """Build the integrand, domain, run and split settings from a normalized spec.

    With ``single`` (trace mode) the trajectory count and block layout are
    irrelevant and replaced by a minimal valid one.
    """
    integrand = _build_integrand(spec["integrand"])
    domain = _build_domain(spec["domain"], integrand.dim)
    r = spec["run"]
    if not single and "n_traj" not in r:
        raise SpecError("run spec: run: 'n_traj' is a required property")
    run = MorphRun(
        n_traj=4 if single else r["n_traj"],
        n_steps=r["n_steps"],
        n_blocks=2 if single else r["n_blocks"],
        propagator=_propagator(r["propagator"], domain),
        master_seed=r["master_seed"],
        e_trial=r["e_trial"],
    )
    split = SplitConfig(float(spec["split"]["K"]), float(spec["split"]["epsilon"]))
    return integrand, domain, run, split


def _value_fields(value: float) -> dict:
    if value == 0.0 or not math.isfinite(value):
        return {"value_decimal": format_real(value), "value_mantissa": value, "value_exponent10": 0}
    m, e = split_log10(value)
    return {"value_decimal": format_real(value), "value_mantissa": m, "value_exponent10": e}


def _write_text(path, text):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def cmd_integrate(spec: dict, workers: int = 1, timing: bool = True) -> tuple[dict, int]:
    """Run one integration; returns ``(report, exit_code)``."""
    t0 = time.perf_counter()
    integrand, domain, run, split = _setup(spec)
    tune = _auto_tune(spec["run"]["propagator"])
    tuning = None
    sigma_w = None
    if integrand.signedness is Signedness.STRICTLY_POSITIVE:
        if tune:
            tr = tune_delta_max(integrand, domain, pilot_run(run), workers=workers)
            run = run.replace(propagator=PropagatorConfig.ismc(tr.delta_max))
            tuning = tr.to_dict()
        est, ens = run_integration(integrand, domain, run, workers=workers, return_ensemble=True)
        sigma_w = ens.sigma_w
        if "ensemble_csv" in spec:
            ens.to_csv(spec["ensemble_csv"])
    else:
        est, trs = integrate_signed(integrand, domain, run, split, tune=tune, workers=workers, return_tuning=True)
        if trs:
            tuning = {k: v.to_dict() for k, v in trs.items()}
    report = {
        "estimate": est.to_dict(),
        **_value_fields(est.value),
        "sigma_w": sigma_w,
        "acceptance_pct": est.acceptance_pct,
        "warnings": [w.value for w in est.warnings],
        "tuning": tuning,
        "wall_time_seconds": time.perf_counter() - t0 if timing else None,
        "version": __version__,
        "config": spec,
    }
    return report, EXIT_WARN if est.warnings else EXIT_OK


def cmd_tune(spec: dict, workers: int = 1, timing: bool = True) -> tuple[dict, int]:
    t0 = time.perf_counter()
    integrand, domain, run, _ = _setup(spec)
    if run.propagator.kind is not PropagatorKind.ISMC:
        raise SpecError("tune mode needs the ismc propagator")
    pilot = pilot_run(run)
    if integrand.signedness is Signedness.STRICTLY_POSITIVE:
        tr = tune_delta_max(integrand, domain, pilot, workers=workers)
        tuning = tr.to_dict()
        warns = list(tr.warnings)
    else:
        from .rng import derive_key
        from .splitting import MINUS_BRANCH, PLUS_BRANCH

        split = SplitConfig(float(spec["split"]["K"]), float(spec["split"]["epsilon"]))
        tuning, warns = {}, []
        for comp, tag, branch in zip(split_components(integrand, split), ("plus", "minus"), (PLUS_BRANCH, MINUS_BRANCH)):
            crun = run.replace(master_seed=derive_key(int(run.master_seed), branch))
            tr = tune_delta_max(comp, domain, pilot_run(crun), workers=workers)
            tuning[tag] = tr.to_dict()
            warns += [w for w in tr.warnings if w not in warns]
    report = {
        "tuning": tuning,
        "warnings": [w.value for w in warns],
        "wall_time_seconds": time.perf_counter() - t0 if timing else None,
        "version": __version__,
        "config": spec,
    }
    return report, EXIT_WARN if warns else EXIT_OK


def cmd_trace(spec: dict, out_path: str) -> int:
    integrand, domain, run, _ = _setup(spec, single=True)
    if integrand.signedness is not Signedness.STRICTLY_POSITIVE:
        raise SpecError("trace mode needs a strictly positive integrand")
    if _auto_tune(spec["run"]["propagator"]):
        tr = tune_delta_max(integrand, domain, pilot_run(run))
        run = run.replace(propagator=PropagatorConfig.ismc(tr.delta_max))
    probe = spec.get("probe_seed", run.master_seed)
    rows = displacement_trace(integrand, domain, run, int(probe))
    with open(out_path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "delta_L"])
        for step, dl in rows:
            w.writerow([int(step), format_real(dl)])
    return EXIT_OK


# ------------------------------------------------------------------ bench


class _Oracle:
    def __init__(self, rel_tol: float):
        self.rel_tol = rel_tol
        self._blocks = {}

    def block(self, name):
        if name not in self._blocks:
            lo, hi = _TERN_BOXES[name]
            self._blocks[name] = cubature_3d(builtin(name), make_domain(lo, hi), self.rel_tol).value
        return self._blocks[name]

    def value(self, name, N, params, domain, default_domain: bool):
        if name in _TERN_BOXES:
            if not default_domain:
                return math.nan
            return product_lift(self.block(name), N // 3)
        if name == "Constant":
            return domain.volume * math.exp(-float(params.get("k", 0.0)))
        try:
            return genz_reference(name, params, domain)
        except MorphIntError:
            return math.nan


def _bench_row(row: dict, oracle: _Oracle, workers: int) -> dict:
    name, N, method = row["function"], row["N"], row["method"]
    params = dict(row.get("params", {}))
    if name in _TERN_BOXES:
        if N % 3:
            raise SpecError(f"{name} needs N divisible by 3, got {N}")
        integrand = builtin(name, terns=N // 3, **params)
        lo, hi = _TERN_BOXES[name]
        lo, hi = lo * (N // 3), hi * (N // 3)
    else:
        integrand = builtin(name, dim=N, **params)
        lo, hi = [0.0] * N, [1.0] * N
    default_domain = "domain" not in row
    domain = make_domain(lo, hi) if default_domain else _build_domain(row["domain"], N)
    seed = row.get("seed", 0)
    n_traj, n_steps = row.get("n_traj", 1000), row.get("n_steps", 10_000)
    shown = {k: v for k, v in row.items() if k not in ("function", "N", "method")}
    t0 = time.perf_counter()
    if method in ("morph-ismc", "morph-langevin"):
        if method == "morph-ismc":
            pspec = {"kind": "ismc", "delta_max": row.get("delta_max", "auto")}
        else:
            pspec = {"kind": "langevin", "diffusion": row.get("diffusion", 0.3)}
        run = MorphRun(n_traj, n_steps, row.get("n_blocks", 50), _propagator(pspec, domain), seed)
        tune = _auto_tune(pspec)
        if integrand.signedness is Signedness.STRICTLY_POSITIVE:
            if tune:
                tr = tune_delta_max(integrand, domain, pilot_run(run), workers=workers)
                run = run.replace(propagator=PropagatorConfig.ismc(tr.delta_max))
                shown["tuned_delta_max"] = tr.delta_max.tolist()
            est = run_integration(integrand, domain, run, workers=workers)
        else:
            est = integrate_signed(integrand, domain, run, tune=tune, workers=workers)
        acc = est.acceptance_pct
    elif method == "baseline-ismc":
        dm = row.get("delta_max", 1.0)
        if dm == "auto":
            raise SpecError("baseline-ismc needs an explicit delta_max")
        est = baseline_ismc(integrand, domain, n_traj, n_steps, dm, seed)
        acc = est.acceptance_pct
    else:
        est = baseline_sample_mean(integrand, domain, row.get("n_points", n_traj * n_steps), seed)
        acc = None
    wall = time.perf_counter() - t0
    ref = oracle.value(name, N, params, domain, default_domain)
    pct = 100.0 * (est.value - ref) / ref if math.isfinite(ref) and ref != 0 else math.nan
    return {
        "function": name,
        "N": N,
        "method": method,
        "params": json.dumps(shown, sort_keys=True),
        "value": format_real(est.value),
        "sigma": format_real(est.sigma),
        "pct_error_vs_oracle": format_real(pct),
        "acceptance_pct": "" if acc is None else format_real(acc),
        "wall_time_s": f"{wall:.3f}",
    }


def cmd_bench(suite: dict, out_path: str, workers: int = 1) -> int:
    """Run every suite row, appending to ``out_path`` as rows finish.

    A failing row is logged and written with empty result cells; the exit
    code is then 1.
    """
    _validate(suite, BENCH_SCHEMA, "bench suite")
    oracle = _Oracle(float(suite.get("oracle_rel_tol", 1e-6)))
    failed = False
    with open(out_path, "w", encoding="utf-8", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=BENCH_COLUMNS, lineterminator="\n")
        w.writeheader()
        fh.flush()
        for i, row in enumerate(suite["rows"]):
            try:
                rec = _bench_row(row, oracle, workers)
            except Exception as exc:  # noqa: BLE001 - keep the other rows
                log.error("bench row %d (%s, N=%s, %s) failed: %s", i, row["function"], row["N"], row["method"], exc)
                failed = True
                rec = {k: "" for k in BENCH_COLUMNS}
                rec.update(function=row["function"], N=row["N"], method=row["method"], params=json.dumps({"error": str(exc)}))
            w.writerow(rec)
            fh.flush()
    return EXIT_ERROR if failed else EXIT_OK


# ------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="morphint", description="Morphing/work-average integration of f over a box.")
    p.add_argument("--spec", required=True, help="JSON run spec (or bench suite in bench mode)")
    p.add_argument("--out", help="output path; defaults to the run file's 'output' or stdout")
    p.add_argument("--workers", type=int, default=None, help=f"worker processes (default ${WORKERS_ENV} or 1)")
    p.add_argument("--seed", type=int, default=None, help="override run.master_seed")
    p.add_argument("--mode", choices=MODES, default=None, help="default: the run file's 'mode' or integrate")
    p.add_argument("--no-timing", action="store_true", help="write wall_time_seconds as null (byte-stable reports)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        workers = args.workers if args.workers is not None else int(os.environ.get(WORKERS_ENV, "1"))
        if workers < 1:
            raise SpecError("--workers must be at least 1")
        if args.seed is not None and not 0 <= args.seed < 2**64:
            raise SpecError("--seed must be an unsigned 64-bit integer")
        doc = load_json(args.spec)
        if not isinstance(doc, dict):
            raise SpecError("spec must be a JSON object")
        mode = args.mode or doc.get("mode", "integrate")
        if mode == "bench":
            out = args.out or doc.get("output")
            if not out:
                raise SpecError("bench mode needs --out or 'output'")
            return cmd_bench(doc, out, workers)
        spec = normalize_spec(doc, args.seed)
        out = args.out or spec.get("output")
        if mode == "trace":
            if not out:
                raise SpecError("trace mode needs --out or 'output'")
            return cmd_trace(spec, out)
        runner = cmd_integrate if mode == "integrate" else cmd_tune
        report, code = runner(spec, workers, timing=not args.no_timing)
        text = dumps(report) + "\n"
        if out:
            _write_text(out, text)
        else:
            sys.stdout.write(text)
        for w in report["warnings"]:
            log.warning("%s", w)
        return code
    except (MorphIntError, OSError, ValueError) as exc:
        print(f"morphint: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
