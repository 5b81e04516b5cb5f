"""Command line entry point ``iml``.

Every command writes a JSON result artifact (to ``--out`` or stdout) with
the layout documented in ``docs/artifact_schema.md``.  Exit codes: 0 all
verdicts pass, 1 a verdict failed, 2 bad input/manifest, 3 runtime error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from . import __version__, acceptance, combinatorics, ldp, model_zoo, moments, pathlab
from .errors import ContractFailure, IMLError, ModelError, SchemaError
from .space import load_model, save_model, spectral_decompose

EXIT_OK, EXIT_CONTRACT, EXIT_SCHEMA, EXIT_RUNTIME = 0, 1, 2, 3
STOCHASTIC = {"simulate", "moments", "mgf", "counting-fuzz"}


# --- small helpers ------------------------------------------------------------------------------


def atomic_write(path, data) -> None:
    """Write via a temp file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data.encode() if isinstance(data, str) else data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _clean(obj):
    """JSON-safe copy: numpy scalars/arrays to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else ("inf" if x > 0 else "-inf" if x < 0 else "nan")
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=2) + "\n"


def _list(value, cast):
    if value is None:
        return None
    if isinstance(value, str):
        return [cast(v) for v in value.split(",") if v.strip()]
    if isinstance(value, (list, tuple)):
        return [cast(v) for v in value]
    return [cast(value)]


def _vector(value, n):
    """A vector from a JSON file path, a literal list, or a scalar (broadcast)."""
    if value is None:
        return np.ones(n)
    if isinstance(value, (int, float)):
        return np.full(n, float(value))
    if isinstance(value, str) and not os.path.exists(value):
        try:
            return np.full(n, float(value))
        except ValueError:
            raise SchemaError(f"vector file {value!r} not found") from None
    if isinstance(value, str):
        with open(value) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{value}: {exc}") from exc
        if isinstance(data, dict):
            data = data.get("values")
    else:
        data = value
    arr = np.asarray(data, dtype=float)
    if arr.shape != (n,):
        raise SchemaError(f"vector has shape {arr.shape}, expected ({n},)")
    return arr


def _load(path):
    try:
        return load_model(path)
    except FileNotFoundError:
        raise SchemaError(f"model file {path!r} not found") from None
    except (json.JSONDecodeError, KeyError, TypeError, ModelError) as exc:
        raise SchemaError(f"{path}: invalid model file ({exc})") from exc


def _need_seed(a):
    if a.seed is None:
        raise SchemaError("a seed is required for stochastic commands")
    return int(a.seed)


# --- command bodies: each returns (params echo, metrics, verdicts) ---------------------------------


def cmd_zoo_build(a):
    fam = a.family
    if fam == "gasket":
        mod = model_zoo.build_gasket_graph(int(a.level))
    elif fam == "grid":
        mod = model_zoo.build_grid(_list(a.dims, int), a.boundary)
    elif fam == "torus":
        mod = model_zoo.build_long_range_torus(int(a.n), float(a.alpha))
    else:
        raise SchemaError(f"unknown family {fam!r}")
    if a.model_out:
        save_model(mod, a.model_out)
    params = {"family": fam, "level": a.level, "dims": a.dims, "boundary": a.boundary, "n": a.n,
              "alpha": a.alpha, "model_out": a.model_out}
    return params, {"label": mod.label, "states": mod.n, "total_mass": mod.total_mass,
                    "conservative": mod.is_conservative}, {}


def cmd_zoo_check(a):
    mod = _load(a.model)
    spec = spectral_decompose(mod)
    window = tuple(_list(a.t_window, float)) if a.t_window else None
    rep = model_zoo.assumption_report(spec, float(a.p), window)
    out = rep.to_dict()
    if a.report:
        atomic_write(a.report, dumps(out))
    verdicts = {"green_finite": bool(math.isfinite(rep.green_sup))}
    return {"model": a.model, "p": a.p, "t_window": window, "report": a.report}, out, verdicts


def cmd_spectral(a):
    mod = _load(a.model)
    spec = spectral_decompose(mod)
    return {"model": a.model}, {"eigenvalues": spec.eigenvalues, "lambda1": spec.lambda1,
                                "conservative": mod.is_conservative}, {}


def cmd_counting_fuzz(a):
    seed = _need_seed(a)
    rep = combinatorics.fuzz(int(a.trials), seed, int(a.pmax), int(a.sstar_max), int(a.xmax), int(a.extra_max))
    params = {"trials": a.trials, "pmax": a.pmax, "sstar_max": a.sstar_max, "xmax": a.xmax,
              "extra_max": a.extra_max, "seed": seed}
    return params, rep, {"closed_form_matches": rep["pass"]}


def _models(a):
    paths = _list(a.models, str)
    if not paths:
        raise SchemaError("--models is required")
    return paths, [_load(p) for p in paths]


def _x0s(a, models):
    x0 = _list(a.x0, int) if a.x0 is not None else [0] * len(models)
    if len(x0) != len(models):
        raise SchemaError("--x0 needs one start per model")
    return x0


def cmd_simulate(a):
    seed = _need_seed(a)
    paths, models = _models(a)
    x0s = _x0s(a, models)
    t, n = float(a.t), int(a.n)
    if a.dump:
        tup = pathlab.sample_surviving_tuple(models, x0s, t, n, seed)
        occs = [np.array([pathlab.occupation_measure(tp[i], models[i].n).masses for tp in tup.tuples])
                for i in range(len(models))]
        pathlab.dump_paths([p for tp in tup.tuples for p in tp], a.dump)
        attempts = tup.attempts
    else:
        ens = pathlab.sample_surviving_occupations(models, x0s, t, n, seed)
        occs, attempts = ens.occupations, ens.attempts
    per = []
    for o in occs:
        per.append({"mean": o.mean(axis=0), "se": o.std(axis=0, ddof=1) / math.sqrt(o.shape[0])})
    params = {"models": paths, "x0": x0s, "t": t, "n": n, "seed": seed, "dump": a.dump}
    return params, {"acceptance": n / attempts, "attempts": attempts, "occupation": per}, {}


def cmd_moments(a):
    paths, models = _models(a)
    specs = [spectral_decompose(m) for m in models]
    x0s = _x0s(a, models)
    f = _vector(a.f, models[0].n)
    t, k, n_exact, eps = float(a.t), int(a.k), int(a.m), float(a.eps)
    formula = moments.mixed_moment_formula(specs, x0s, f, t, k, n_exact, eps)
    params = {"models": paths, "x0": x0s, "f": f, "t": t, "k": k, "m": n_exact, "eps": eps, "n": a.n}
    metrics = {"formula": formula}
    verdicts = {}
    if int(a.n) > 0:
        seed = _need_seed(a)
        params["seed"] = seed
        mc, se = pathlab.mc_moment(models, x0s, f, t, k, n_exact, eps, int(a.n), seed, specs)
        z = (mc - formula) / se if se > 0 else 0.0
        metrics.update(mc=mc, se=se, z=z)
        verdicts["within_3se"] = abs(z) <= 3
    return params, metrics, verdicts


def cmd_varsolve(a):
    mod = _load(a.model)
    spec = spectral_decompose(mod)
    h = _vector(a.h, mod.n)
    res = ldp.variational_N(spec, float(a.theta), float(a.eps), h, int(a.p), seed=a.seed or 0,
                            certify=bool(a.certify))
    params = {"model": a.model, "theta": a.theta, "eps": a.eps, "h": h, "p": a.p, "certify": bool(a.certify)}
    metrics = {"value": res.value, "argmax_psi": res.argmax_psi, "certificate": res.certificate,
               "solver_trace": res.solver_trace}
    verdicts = {"certified": abs(res.certificate) <= 1e-6} if res.certificate is not None else {}
    return params, metrics, verdicts


def cmd_mgf(a):
    seed = _need_seed(a)
    paths, models = _models(a)
    h = _vector(a.h, models[0].n)
    times = _list(a.times, float)
    r = ldp.mc_log_mgf_slope(models, float(a.theta), h, int(a.p), float(a.eps), times, int(a.n), seed)
    rows = [{"t": t, "estimate": v, "se": s, "rhs": r.rhs, "gap": v - r.rhs} for t, v, s in zip(times, r.values, r.ses)]
    if a.csv:
        buf = io.StringIO()
        w = csv.DictWriter(buf, ["t", "estimate", "se", "rhs", "gap"], lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: repr(float(v)) for k, v in row.items()})
        atomic_write(a.csv, buf.getvalue())
    params = {"models": paths, "theta": a.theta, "h": h, "p": a.p, "eps": a.eps, "times": times, "n": a.n,
              "seed": seed, "csv": a.csv}
    metrics = {"rows": rows, "slope": r.slope, "slope_se": r.slope_se, "rhs": r.rhs, "rhs_eps": r.rhs_eps,
               "heavy_tail": r.heavy_tail}
    return params, metrics, {"no_heavy_tail": not r.heavy_tail}


def cmd_acceptance(a):
    echo = None if a.quiet else (lambda s: print(s, file=sys.stderr))
    results = acceptance.run_suite(a.only, echo=echo)
    summ = acceptance.summary(results)
    return {"only": a.only}, summ, {f"{r.number}-{r.name}": r.passed for r in results}


COMMANDS = {
    "zoo-build": cmd_zoo_build,
    "zoo-check": cmd_zoo_check,
    "spectral": cmd_spectral,
    "counting-fuzz": cmd_counting_fuzz,
    "simulate": cmd_simulate,
    "moments": cmd_moments,
    "ldp-varsolve": cmd_varsolve,
    "mgf": cmd_mgf,
    "acceptance": cmd_acceptance,
}

# typed parameters accepted in manifests, per kind
MANIFEST_PARAMS = {
    "zoo-build": {"family": str, "level": int, "dims": (str, list), "boundary": str, "n": int, "alpha": float,
                  "model_out": str},
    "zoo-check": {"model": str, "p": (int, float), "t_window": (str, list), "report": str},
    "spectral": {"model": str},
    "counting-fuzz": {"trials": int, "pmax": int, "sstar_max": int, "xmax": int, "extra_max": int},
    "simulate": {"models": (str, list), "x0": (str, list, int), "t": (int, float), "n": int, "dump": str},
    "moments": {"models": (str, list), "x0": (str, list, int), "f": (str, list, int, float), "t": (int, float),
                "k": int, "m": int, "eps": (int, float), "n": int},
    "ldp-varsolve": {"model": str, "theta": (int, float), "eps": (int, float), "h": (str, list, int, float),
                     "p": int, "certify": bool},
    "mgf": {"models": (str, list), "theta": (int, float), "h": (str, list, int, float), "p": int,
            "eps": (int, float), "times": (str, list), "n": int, "csv": str},
    "acceptance": {"only": (str, list)},
}
REQUIRED = {
    "zoo-build": ["family"], "zoo-check": ["model"], "spectral": ["model"], "simulate": ["models", "t", "n"],
    "moments": ["models", "t", "k", "m", "eps"], "ldp-varsolve": ["model", "theta", "p"],
    "mgf": ["models", "theta", "p", "times", "n"],
}
PATH_KEYS = {"model", "models", "f", "h"}


# --- argument parsing -------------------------------------------------------------------------


def _globals(parser, suppress):
    d = argparse.SUPPRESS if suppress else None
    parser.add_argument("--seed", type=int, default=d, help="64-bit seed for stochastic commands")
    parser.add_argument("--threads", type=int, default=d, help="worker threads (env IML_THREADS)")
    parser.add_argument("--out", default=d, help="write the JSON artifact here instead of stdout")
    parser.add_argument("--quiet", action="store_true", default=d, help="suppress progress lines")


def build_parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(prog="iml", description="Finite-state intersection-measure toolkit.")
    top.add_argument("--version", action="version", version=f"iml {__version__}")
    _globals(top, False)
    common = argparse.ArgumentParser(add_help=False)
    _globals(common, True)
    sub = top.add_subparsers(dest="command", required=True)

    zoo = sub.add_parser("zoo", help="build and check example models").add_subparsers(dest="action", required=True)
    b = zoo.add_parser("build", parents=[common])
    b.add_argument("--family", required=True, choices=["gasket", "grid", "torus"])
    b.add_argument("--level", type=int, default=3)
    b.add_argument("--dims", default="17")
    b.add_argument("--boundary", default="reflecting", choices=["reflecting", "absorbing"])
    b.add_argument("--n", type=int, default=16)
    b.add_argument("--alpha", type=float, default=1.0)
    b.add_argument("--model-out", dest="model_out", help="model JSON path (defaults to --out)")
    b.set_defaults(kind="zoo-build")
    c = zoo.add_parser("check", parents=[common])
    c.add_argument("--model", required=True)
    c.add_argument("--p", type=float, default=2.0)
    c.add_argument("--t-window", dest="t_window", help="fit window t_min,t_max")
    c.add_argument("--report")
    c.set_defaults(kind="zoo-check")

    s = sub.add_parser("spectral", parents=[common], help="eigen-decomposition of a model")
    s.add_argument("--model", required=True)
    s.set_defaults(kind="spectral")

    cnt = sub.add_parser("counting", help="closed-form counting checks").add_subparsers(dest="action", required=True)
    fz = cnt.add_parser("fuzz", parents=[common])
    fz.add_argument("--pmax", type=int, default=3)
    fz.add_argument("--sstar-max", dest="sstar_max", type=int, default=4)
    fz.add_argument("--xmax", type=int, default=3)
    fz.add_argument("--extra-max", dest="extra_max", type=int, default=2)
    fz.add_argument("--trials", type=int, default=1000)
    fz.set_defaults(kind="counting-fuzz")

    sim = sub.add_parser("simulate", parents=[common], help="jointly surviving path tuples")
    sim.add_argument("--models", required=True)
    sim.add_argument("--x0")
    sim.add_argument("--t", type=float, required=True)
    sim.add_argument("--n", type=int, required=True)
    sim.add_argument("--dump", help="binary path dump")
    sim.set_defaults(kind="simulate")

    mo = sub.add_parser("moments", parents=[common], help="exact mixed moment vs Monte Carlo")
    mo.add_argument("--models", required=True)
    mo.add_argument("--x0")
    mo.add_argument("--f")
    mo.add_argument("--t", type=float, required=True)
    mo.add_argument("--k", type=int, required=True)
    mo.add_argument("--m", type=int, required=True, help="number of unsmoothed factors")
    mo.add_argument("--eps", type=float, required=True)
    mo.add_argument("--n", type=int, default=10**5, help="Monte Carlo tuples (0 to skip)")
    mo.set_defaults(kind="moments")

    ld = sub.add_parser("ldp", help="variational values and MGF slopes").add_subparsers(dest="action", required=True)
    vs = ld.add_parser("varsolve", parents=[common])
    vs.add_argument("--model", required=True)
    vs.add_argument("--theta", type=float, required=True)
    vs.add_argument("--eps", type=float, default=0.0)
    vs.add_argument("--h")
    vs.add_argument("--p", type=int, required=True)
    vs.add_argument("--certify", action="store_true")
    vs.set_defaults(kind="ldp-varsolve")
    mg = ld.add_parser("mgf", parents=[common])
    mg.add_argument("--models", required=True)
    mg.add_argument("--theta", type=float, required=True)
    mg.add_argument("--h")
    mg.add_argument("--p", type=int, required=True)
    mg.add_argument("--eps", type=float, default=0.0)
    mg.add_argument("--times", required=True)
    mg.add_argument("--n", type=int, required=True)
    mg.add_argument("--csv", help="CSV table t,estimate,SE,rhs,gap (defaults to --out when it ends in .csv)")
    mg.set_defaults(kind="mgf")

    acc = sub.add_parser("acceptance", parents=[common], help="run the acceptance battery")
    acc.add_argument("--only", help="comma-separated criterion numbers or names")
    acc.set_defaults(kind="acceptance")

    run = sub.add_parser("run", parents=[common], help="run an experiment manifest (JSON or TOML)")
    run.add_argument("manifest")
    run.set_defaults(kind="run")
    return top


# --- manifests -------------------------------------------------------------------------------


def read_manifest(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"manifest {path} not found")
    raw = path.read_bytes()
    try:
        if path.suffix.lower() == ".toml":
            try:
                import tomllib
            except ModuleNotFoundError:
                import tomli as tomllib
            data = tomllib.loads(raw.decode())
        else:
            data = json.loads(raw)
    except Exception as exc:
        raise SchemaError(f"cannot parse manifest: {exc}") from exc
    return validate_manifest(data, path.parent)


def validate_manifest(data, base=Path(".")) -> dict:
    if not isinstance(data, dict):
        raise SchemaError("manifest must be a table/object")
    unknown = set(data) - {"kind", "params", "seed", "output"}
    if unknown:
        raise SchemaError(f"unknown manifest keys {sorted(unknown)}")
    kind = data.get("kind")
    if kind not in MANIFEST_PARAMS:
        raise SchemaError(f"kind must be one of {sorted(MANIFEST_PARAMS)}")
    params = dict(data.get("params", {}))
    allowed = MANIFEST_PARAMS[kind]
    for key, val in params.items():
        if key not in allowed:
            raise SchemaError(f"unknown parameter {key!r} for kind {kind}")
        types = allowed[key] if isinstance(allowed[key], tuple) else (allowed[key],)
        if isinstance(val, bool) and bool not in types:
            raise SchemaError(f"parameter {key!r} has the wrong type")
        if not isinstance(val, types):
            raise SchemaError(f"parameter {key!r} has the wrong type")
    for key in REQUIRED.get(kind, []):
        if key not in params:
            raise SchemaError(f"missing parameter {key!r}")
    seed = data.get("seed")
    if kind in STOCHASTIC and kind != "moments" or (kind == "moments" and params.get("n", 10**5) > 0):
        if not isinstance(seed, int) or isinstance(seed, bool):
            raise SchemaError(f"kind {kind} needs an integer seed")
    if seed is not None and not 0 <= seed < 2**64:
        raise SchemaError("seed must be a 64-bit unsigned integer")
    for key in PATH_KEYS & set(params):
        val = params[key]
        if key in ("model", "models"):
            items = _list(val, str)
        elif isinstance(val, str) and not _is_number(val):
            items = [val]
        else:
            continue
        resolved = [str((base / v)) if not os.path.isabs(v) else v for v in items]
        for r in resolved:
            if not os.path.exists(r):
                raise SchemaError(f"referenced file {r} does not exist")
        params[key] = resolved if key == "models" else resolved[0]
    return {"kind": kind, "params": params, "seed": seed, "output": data.get("output")}


def _is_number(s):
    try:
        float(s)
        return True
    except ValueError:
        return False


def _namespace_for(kind, params, seed, quiet):
    parser = build_parser()
    proto = {
        "zoo-build": ["zoo", "build", "--family", "gasket"], "zoo-check": ["zoo", "check", "--model", "x"],
        "spectral": ["spectral", "--model", "x"], "counting-fuzz": ["counting", "fuzz"],
        "simulate": ["simulate", "--models", "x", "--t", "1", "--n", "1"],
        "moments": ["moments", "--models", "x", "--t", "1", "--k", "1", "--m", "0", "--eps", "1"],
        "ldp-varsolve": ["ldp", "varsolve", "--model", "x", "--theta", "0", "--p", "1"],
        "mgf": ["ldp", "mgf", "--models", "x", "--theta", "0", "--p", "1", "--times", "1", "--n", "1"],
        "acceptance": ["acceptance"],
    }[kind]
    ns = parser.parse_args(proto)
    for k, v in params.items():
        setattr(ns, k, v)
    ns.seed, ns.quiet = seed, quiet
    return ns


# --- driver ------------------------------------------------------------------------------------


def _threads(a):
    if getattr(a, "threads", None) is not None:
        return int(a.threads)
    env = os.environ.get("IML_THREADS")
    if env:
        try:
            return int(env)
        except ValueError:
            raise SchemaError(f"IML_THREADS={env!r} is not an integer") from None
    return 1


def execute(kind, a) -> dict:
    t0 = time.perf_counter()
    params, metrics, verdicts = COMMANDS[kind](a)
    return {
        "tool": "iml",
        "version": __version__,
        "kind": kind,
        "params": params,
        "seed": getattr(a, "seed", None),
        "threads": _threads(a),
        "metrics": metrics,
        "verdicts": verdicts,
        "passed": all(bool(v) for v in verdicts.values()),
        "wall_time": time.perf_counter() - t0,
    }


def main(argv=None) -> int:
    parser = build_parser()
    try:
        a = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_SCHEMA if exc.code not in (0, None) else EXIT_OK
    for name in ("seed", "threads", "out"):
        if not hasattr(a, name):
            setattr(a, name, None)
    a.quiet = bool(getattr(a, "quiet", False))
    try:
        kind = a.kind
        out = a.out
        if kind == "run":
            man = read_manifest(a.manifest)
            kind = man["kind"]
            ns = _namespace_for(kind, man["params"], man["seed"] if man["seed"] is not None else a.seed, a.quiet)
            ns.threads = a.threads
            out = out or man["output"]
            a = ns
        if kind == "zoo-build" and not a.model_out:
            a.model_out, out = out, None
        if kind == "mgf" and not a.csv and out and str(out).endswith(".csv"):
            a.csv, out = out, None
        _threads(a)
        artifact = execute(kind, a)
    except SchemaError as exc:
        print(f"iml: input error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except ContractFailure as exc:
        print(f"iml: contract failure: {exc}", file=sys.stderr)
        return EXIT_CONTRACT
    except (IMLError, ValueError, ArithmeticError, OSError) as exc:
        print(f"iml: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    text = dumps(artifact)
    if out:
        atomic_write(out, text)
    else:
        sys.stdout.write(text)
    if not artifact["passed"]:
        return EXIT_CONTRACT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
