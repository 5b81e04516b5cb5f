"""The acceptance battery: eleven numbered checks with fixed seeds and
tolerances, each reporting metrics and a verdict.

``run_suite()`` prints one line per criterion; ``iml acceptance`` wraps it.
"""
from __future__ import annotations

import json
import math
import time
import warnings
from dataclasses import asdict, dataclass, field
from itertools import permutations, product

import numpy as np
from scipy import integrate
from scipy.linalg import expm

from . import combinatorics, ldp, model_zoo, moments, pathlab, tensor_ops
from .errors import HeavyTailWarning, SchemaError
from .space import heat_kernel, heat_trace, spectral_decompose, survival_probability

SEED = 20240521


@dataclass
class CriterionResult:
    number: int
    name: str
    status: str  # pass | warn | fail
    metrics: dict
    detail: str = ""
    seconds: float = 0.0
    stochastic: bool = False

    @property
    def passed(self) -> bool:
        return self.status != "fail"

    def line(self) -> str:
        return f"[{self.status.upper():4}] {self.number:2d} {self.name}: {self.detail} ({self.seconds:.1f} s)"


def metric_bytes(metrics: dict) -> bytes:
    return json.dumps(metrics, sort_keys=True).encode()


# --- independent oracles -------------------------------------------------------------------


def _density(model, s):
    return expm(s * model.L) / model.m[None, :]


def _survive(model, s, x):
    return float(expm(s * model.L)[x].sum())


def h_t_quadrature(model, x0: int, t: float, k: int) -> np.ndarray:
    """Ordered-visit tensor by nested adaptive quadrature with ``expm`` kernels (k <= 2)."""
    N = model.n
    H = np.zeros((N,) * k)
    opts = dict(epsabs=1e-13, epsrel=1e-12)
    if k == 1:
        for x in range(N):
            H[x] = integrate.quad(lambda r: _density(model, r)[x0, x] * _survive(model, t - r, x), 0, t, **opts)[0]
    elif k == 2:
        for x1, x2 in product(range(N), repeat=2):
            g = lambda r2, r1: (_density(model, r1)[x0, x1] * _density(model, r2 - r1)[x1, x2]
                                * _survive(model, t - r2, x2))
            H[x1, x2] = integrate.dblquad(g, 0, t, lambda r1: r1, lambda r1: t, **opts)[0]
    else:
        raise ValueError("k <= 2")
    return H


def moment_from_visit_tensors(Hs, m, f, k, n_exact, smoother) -> float:
    """Mixed moment by explicit sums over visit points.

    With ``g_j = delta_y/m(y)`` (exact) or ``p_eps(., y)`` (smoothed),
    ``E[prod_j int g_j dl]`` equals ``sum_x prod_j g_j(x_j) m(x_j) sum_pi H(x_pi)``.
    """
    N = len(m)
    pts = list(product(range(N), repeat=k))
    perms = list(permutations(range(k)))
    total = 0.0
    for y in pts:
        w = math.prod(f[yj] * m[yj] for yj in y)
        per_process = 1.0
        for H in Hs:
            acc = 0.0
            for x in pts:
                g = 1.0
                for j in range(k):
                    if j < n_exact:
                        g *= (1.0 / m[y[j]] if x[j] == y[j] else 0.0) * m[x[j]]
                    else:
                        g *= smoother[x[j], y[j]] * m[x[j]]
                if g:
                    acc += g * sum(H[tuple(x[i] for i in pi)] for pi in perms)
            per_process *= acc
        total += w * per_process
    return total


# --- criteria ---------------------------------------------------------------------------


def crit_counting(seed=SEED):
    rep = combinatorics.fuzz(trials=1000, seed=seed, p_max=3, s_max=4, x_max=3, extra_max=2)
    metrics = {k: rep[k] for k in ("trials", "nonempty", "mismatches", "tilde_nonempty", "tilde_mismatches")}
    ok = rep["mismatches"] == 0 and rep["tilde_mismatches"] == 0 and rep["nonempty"] > 0 and rep["tilde_nonempty"] > 0
    detail = (f"{rep['nonempty']} nonempty plain, {rep['mismatches']} mismatches; "
              f"{rep['tilde_nonempty']} nonempty extended, {rep['tilde_mismatches']} mismatches")
    return ok, metrics, detail


MOMENT_MODELS = ("two-state-killed", "birth-death-killed", "gasket-1")


def crit_moments(seed=SEED, n=10**5):
    zoo = model_zoo.example_models()
    t, eps = 1.0, 0.25
    rows, worst_z, worst_q = [], 0.0, 0.0
    idx = 0
    for name in MOMENT_MODELS:
        mod = zoo[name]
        spec = spectral_decompose(mod)
        f = 1.0 + np.arange(mod.n) / mod.n
        P = heat_kernel(spec, eps).values
        for p in (1, 2):
            models, specs, x0s = [mod] * p, [spec] * p, [0] * p
            for k in (1, 2):
                Hq = h_t_quadrature(mod, 0, t, k) if mod.n == 2 else None
                for n_exact in range(k + 1):
                    formula = moments.mixed_moment_formula(specs, x0s, f, t, k, n_exact, eps)
                    mc, se = pathlab.mc_moment(models, x0s, f, t, k, n_exact, eps, n,
                                               pathlab.stream_seed(seed, idx), specs)
                    idx += 1
                    z = (mc - formula) / se
                    row = {"model": name, "p": p, "k": k, "n_exact": n_exact, "formula": formula,
                           "mc": mc, "se": se, "z": z}
                    worst_z = max(worst_z, abs(z))
                    if Hq is not None:
                        q = moment_from_visit_tensors([Hq] * p, spec.m, f, k, n_exact, P)
                        row["quadrature"] = q
                        worst_q = max(worst_q, abs(q - formula))
                    rows.append(row)
    ok = worst_z <= 3.0 and worst_q <= 1e-6
    return ok, {"rows": rows, "max_abs_z": worst_z, "max_quadrature_gap": worst_q}, \
        f"{len(rows)} cases, max |z| = {worst_z:.2f}, max quadrature gap = {worst_q:.1e}"


def crit_survival():
    rows, worst = [], 0.0
    for name, mod in model_zoo.killed_models().items():
        spec = spectral_decompose(mod)
        for x in range(mod.n):
            v = math.log(survival_probability(spec, x, 50.0)) / 50.0 + spec.lambda1
            rows.append({"model": name, "x0": x, "deviation": v})
            worst = max(worst, abs(v))
    return worst <= 0.05, {"rows": rows, "max_deviation": worst}, f"{len(rows)} starts, max deviation {worst:.2e}"


def crit_varadhan(seed=SEED):
    rng = np.random.default_rng(seed)
    worst, rows = 0.0, []
    for i in range(20):
        mod = model_zoo.random_model(rng, int(rng.integers(2, 6)))
        spec = spectral_decompose(mod)
        f = rng.uniform(0, 2, mod.n)
        theta = float(rng.uniform(0, 2))
        eps = float(rng.choice([0.0, 0.05, 0.25, 1.0]))
        c = ldp.occupation_varadhan_check(spec, f, theta, eps, seed=i)
        worst = max(worst, c.gap)
        rows.append({"n": mod.n, "theta": theta, "eps": eps, "lhs": c.lhs, "rhs": c.rhs, "gap": c.gap})
    return worst <= 1e-7, {"rows": rows, "max_gap": worst}, f"20 cases, max gap {worst:.1e}"


def crit_variational():
    zoo = {k: v for k, v in model_zoo.example_models().items() if v.n <= 3}
    worst_cert, zero_ok, convex_ok, rows = 0.0, True, True, []
    thetas = np.linspace(0, 2, 11)
    for name, mod in zoo.items():
        spec = spectral_decompose(mod)
        for h in (np.ones(mod.n), 1.0 + np.arange(mod.n)):
            for th in (0.5, 1.0, 2.0):
                r = ldp.variational_N(spec, th, 0.0, h, 2, certify=True)
                worst_cert = max(worst_cert, abs(r.certificate))
                rows.append({"model": name, "h": h.tolist(), "theta": th, "value": r.value,
                             "certificate": r.certificate})
            z = ldp.variational_N(spec, 0.0, 0.0, h, 2)
            zero_ok &= z.value == 0.0
            vals = np.array([ldp.variational_N(spec, th, 0.0, h, 2).value for th in thetas])
            second = vals[2:] - 2 * vals[1:-1] + vals[:-2]
            convex_ok &= bool(second.min() >= -1e-9) and bool(np.all(np.diff(vals) >= -1e-12))
    ok = worst_cert <= 1e-6 and zero_ok and convex_ok
    return ok, {"rows": rows, "max_certificate": worst_cert, "zero_exact": zero_ok, "convex": convex_ok}, \
        f"{len(rows)} solves, max grid gap {worst_cert:.1e}, N(0)=0: {zero_ok}, convex: {convex_ok}"


EPS_GRID_6 = tuple(2.0**-j for j in range(2, 11))


def crit_eps_convergence(seed=SEED):
    mod = model_zoo.two_state_killed()
    spec = spectral_decompose(mod)
    rows, summary = pathlab.epsilon_convergence_diagnostic(
        [mod, mod], [0, 0], np.ones(2), 1.0, 2, EPS_GRID_6, 10**4, seed, [spec, spec])
    final = rows[-1].estimate
    ok = summary["strictly_decreasing"] and final <= 1e-3
    metrics = {"rows": [asdict(r) for r in rows], **summary}
    return ok, metrics, f"decreasing: {summary['strictly_decreasing']}, final {final:.2e} at eps=2^-10"


def crit_exp_approx(seed=SEED):
    mod = model_zoo.birth_death_killed()
    spec = spectral_decompose(mod)
    eps_grid = (0.25, 2.0**-10)
    C = pathlab.exp_approx_constant_estimate([mod, mod], [0, 0], np.ones(3), (1.0, 2.0), (1, 2), eps_grid,
                                             10**4, seed, [spec, spec])
    ratios = {f"t={t},k={k}": C[(t, k, eps_grid[0])] / C[(t, k, eps_grid[1])] for t in (1.0, 2.0) for k in (1, 2)}
    worst = min(ratios.values())
    metrics = {"C_hat": {f"t={t},k={k},eps={e}": v for (t, k, e), v in C.items()}, "ratios": ratios,
               "min_ratio": worst}
    return worst >= 10.0, metrics, f"min decrease factor {worst:.1f}"


def crit_spectral_dimension():
    rows, worst = [], 0.0
    cases = [
        ("gasket-4", model_zoo.build_gasket_graph(4), model_zoo.GASKET_DS, 2.0**-4, model_zoo.GASKET_DW),
        ("grid-17", model_zoo.build_grid((17,)), 1.0, 1 / 16, 2.0),
        ("grid-17x17", model_zoo.build_grid((17, 17)), 2.0, 1 / 16, 2.0),
    ]
    for name, mod, target, mesh, dw in cases:
        window = (model_zoo.lattice_cutoff(mesh, dw), 0.01)
        fit = model_zoo.fit_trace_exponent(spectral_decompose(mod), window)
        rel = abs(fit.exponent - target) / target
        worst = max(worst, rel)
        rows.append({"model": name, "fitted": fit.exponent, "target": target, "relative_error": rel,
                     "window": list(window)})
    return worst <= 0.15, {"rows": rows, "max_relative_error": worst}, \
        ", ".join(f"{r['model']} {r['fitted']:.3f}/{r['target']:.3f}" for r in rows)


def crit_mgf(seed=SEED, n=2 * 10**5):
    mod = model_zoo.three_state_conservative()
    spec = spectral_decompose(mod)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", HeavyTailWarning)
        r = ldp.mc_log_mgf_slope([mod, mod], 0.5, np.ones(3), 2, 0.0, (10.0, 20.0, 40.0), n, seed, [spec, spec])
    heavy = r.heavy_tail or any(issubclass(w.category, HeavyTailWarning) for w in caught)
    rel = abs(r.slope - r.rhs) / abs(r.rhs)
    metrics = {"slope": r.slope, "slope_se": r.slope_se, "values": r.values, "ses": r.ses, "rhs": r.rhs,
               "relative_gap": rel, "heavy_tail": heavy}
    if heavy or rel > 0.25:
        status = "fail"
    else:
        status = "pass" if rel <= 0.15 else "warn"
    return status, metrics, f"slope {r.slope:.4f} vs rhs {r.rhs:.4f} ({100 * rel:.2f}%), heavy tail: {heavy}"


def crit_operators(seed=SEED, cases=500):
    rng = np.random.default_rng(seed)
    viol = {"interpolation": 0, "contraction": 0, "permuted_kernel": 0, "chapman_kolmogorov": 0, "trace": 0}
    for _ in range(cases):
        mod = model_zoo.random_model(rng, int(rng.integers(2, 6)))
        spec = spectral_decompose(mod)
        N, m = mod.n, spec.m
        s, t = rng.uniform(0.01, 2, 2)
        P = spec.semigroup(t)
        # interpolation on the positive operator P_t
        p = float(rng.uniform(1.1, 4))
        f, g = rng.random(N), rng.random(N)
        if not tensor_ops.markov_interpolation_check(np.clip(P, 0, None), f, g, p):
            viol["interpolation"] += 1
        q = float(rng.choice([1.0, 1.5, 2.0, 3.0, 8.0]))
        h = rng.standard_normal(N)
        if tensor_ops.lp_norm(P @ h, m, q) > tensor_ops.lp_norm(h, m, q) * (1 + 1e-12):
            viol["contraction"] += 1
        # permuted product on a rank-one tensor
        k = int(rng.integers(1, 4))
        sigma = tuple(int(i) for i in rng.permutation(k))
        ks = [heat_kernel(spec, float(rng.uniform(0.05, 1))).values for _ in range(k)]
        gs = [rng.standard_normal(N) for _ in range(k)]
        F = gs[0]
        for gi in gs[1:]:
            F = np.multiply.outer(F, gi)
        out = tensor_ops.permuted_tensor_apply(ks, sigma, F, m)
        expect = (ks[0] * m) @ gs[sigma[0]]
        for i in range(1, k):
            expect = np.multiply.outer(expect, (ks[i] * m) @ gs[sigma[i]])
        if np.abs(out - expect).max() > 1e-10 * (1 + np.abs(expect).max()):
            viol["permuted_kernel"] += 1
        if np.abs(spec.semigroup(s + t) - spec.semigroup(s) @ P).max() > 1e-10:
            viol["chapman_kolmogorov"] += 1
        kern = heat_kernel(spec, float(t)).values
        if abs((np.diag(kern) * m).sum() - float(heat_trace(spec, t))) > 1e-10 * N:
            viol["trace"] += 1
    total = sum(viol.values())
    return total == 0, {"cases": cases, "violations": viol}, \
        f"{cases} cases x 5 properties, violations {total}"


@dataclass
class Criterion:
    number: int
    name: str
    run: object
    stochastic: bool = False


CRITERIA = [
    Criterion(1, "counting", crit_counting),
    Criterion(2, "moments", crit_moments, True),
    Criterion(3, "survival", crit_survival),
    Criterion(4, "varadhan", crit_varadhan),
    Criterion(5, "variational", crit_variational),
    Criterion(6, "eps-convergence", crit_eps_convergence, True),
    Criterion(7, "exp-approximation", crit_exp_approx, True),
    Criterion(8, "spectral-dimension", crit_spectral_dimension),
    Criterion(9, "mgf", crit_mgf, True),
    Criterion(10, "operators", crit_operators),
]


def _evaluate(c: Criterion) -> CriterionResult:
    t0 = time.perf_counter()
    out = c.run()
    status, metrics, detail = out
    if not isinstance(status, str):
        status = "pass" if bool(status) else "fail"
    return CriterionResult(c.number, c.name, status, metrics, detail, time.perf_counter() - t0, c.stochastic)


def determinism(previous: dict) -> CriterionResult:
    """Re-run every stochastic criterion and compare metric bytes."""
    t0 = time.perf_counter()
    same = {}
    for c in CRITERIA:
        if not c.stochastic:
            continue
        first = previous.get(c.number) or _evaluate(c)
        again = _evaluate(c)
        same[c.name] = metric_bytes(first.metrics) == metric_bytes(again.metrics)
    ok = all(same.values())
    return CriterionResult(11, "determinism", "pass" if ok else "fail", {"identical": same},
                           f"byte-identical replays: {sum(same.values())}/{len(same)}", time.perf_counter() - t0)


def select(only=None) -> list:
    """Criterion numbers for ``only`` (names or numbers, comma separated)."""
    if not only:
        return list(range(1, 12))
    names = {c.name: c.number for c in CRITERIA} | {"determinism": 11}
    picked = []
    for tok in (only.split(",") if isinstance(only, str) else only):
        tok = str(tok).strip()
        if tok.isdigit() and 1 <= int(tok) <= 11:
            picked.append(int(tok))
        elif tok in names:
            picked.append(names[tok])
        else:
            raise SchemaError(f"unknown criterion {tok!r}")
    return sorted(set(picked))


def run_suite(only=None, echo=print) -> list:
    wanted = select(only)
    results = {}
    for c in CRITERIA:
        if c.number in wanted:
            results[c.number] = _evaluate(c)
            if echo:
                echo(results[c.number].line())
    if 11 in wanted:
        results[11] = determinism(results)
        if echo:
            echo(results[11].line())
    return [results[k] for k in sorted(results)]


def summary(results) -> dict:
    return {
        "passed": all(r.passed for r in results),
        "criteria": [{"number": r.number, "name": r.name, "status": r.status, "detail": r.detail,
                      "seconds": r.seconds, "metrics": r.metrics} for r in results],
    }
