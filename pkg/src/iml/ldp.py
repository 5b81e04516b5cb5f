"""Rate functions, variational values and principal-eigenvalue identities.

The variational problems are posed over ``psi`` with ``||psi||_{L^2(m)} = 1``;
internally we work with ``u = sqrt(m) psi`` on the Euclidean unit sphere.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import EigensolveFailure, HeavyTailWarning, NonConvergence, NotProbability, SingularSmoother
from .pathlab import exact_pairings, sample_surviving_occupations, smoothed_pairings, stream_seed
from .space import SpectralDecomposition, dirichlet_energy, heat_kernel, spectral_decompose

PROB_TOL = 1e-10
GRAD_TOL = 1e-9
N_STARTS = 8


def _check_probability(model, mu):
    mu = np.asarray(mu, dtype=float)
    if mu.shape != (model.n,) or np.any(mu < -PROB_TOL) or abs(mu.sum() - 1) > PROB_TOL:
        raise NotProbability("mu must be a probability vector on the states")
    return np.clip(mu, 0.0, None)


def rate_I(model, mu) -> float:
    """Dirichlet energy of sqrt(d mu / d m)."""
    mu = _check_probability(model, mu)
    return dirichlet_energy(model, np.sqrt(mu / model.m))


def rate_J(spec: SpectralDecomposition, mu) -> float:
    return max(rate_I(spec.model, mu) - spec.lambda1, 0.0)


def rate_bold_J(specs, mu, mus, tol: float = 1e-9) -> float:
    """Sum of the J's when prod_i d mu_i/dm = d mu/dm (per state within ``tol``), else inf."""
    m = specs[0].m
    dens = np.ones_like(m)
    for mi in mus:
        dens = dens * np.asarray(mi, dtype=float) / m
    if np.abs(dens - np.asarray(mu, dtype=float) / m).max() > tol:
        return math.inf
    return float(sum(rate_J(s, mi) for s, mi in zip(specs, mus)))


def rate_J_eps(spec: SpectralDecomposition, nu, eps: float, tol: float = 1e-9) -> float:
    """J of the probability measure whose eps-smoothing is nu; inf if none exists."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    nu = np.asarray(nu, dtype=float)
    P = heat_kernel(spec, eps).matrix
    if np.linalg.cond(P) > 1e14:
        raise SingularSmoother(f"T_eps ill-conditioned at eps={eps}")
    # T_eps is self-adjoint in L^2(m); solve for the density of the preimage
    phi = np.linalg.solve(P, nu / spec.m)
    if phi.min() < -tol:
        return math.inf
    phi = np.clip(phi, 0.0, None)
    if abs((phi * spec.m).sum() - 1.0) > tol * 10:
        return math.inf
    psi = np.sqrt(phi)
    return max(dirichlet_energy(spec.model, psi) - spec.lambda1, 0.0)


def tilted_principal_eigenvalue(model, V) -> float:
    """Largest eigenvalue of ``L + diag(V)`` (self-adjoint in L^2(m))."""
    V = np.asarray(V, dtype=float)
    if not np.all(np.isfinite(V)):
        raise ValueError("V must be finite")
    r = np.sqrt(model.m)
    A = (r[:, None] * (model.L + np.diag(V))) / r[None, :]
    try:
        return float(np.linalg.eigvalsh(0.5 * (A + A.T))[-1])
    except np.linalg.LinAlgError as exc:
        raise EigensolveFailure(str(exc)) from exc


# --- variational solver ------------------------------------------------------------------


@dataclass
class VariationalResult:
    value: float
    argmax_psi: np.ndarray
    solver_trace: list = field(default_factory=list)
    certificate: float | None = None


class _Objective:
    """theta * (sum_x g(x)^p h(x) m(x))^(1/p) - p u^T K u + p lambda_1,
    g = W u^2, with W = p_eps kernel (or diag(1/m) when eps = 0)."""

    def __init__(self, spec, theta, eps, h, p, linear=None):
        m = spec.m
        r = np.sqrt(m)
        self.K = -(r[:, None] * spec.model.L) / r[None, :]
        self.K = 0.5 * (self.K + self.K.T)
        self.W = heat_kernel(spec, eps).values if eps > 0 else np.diag(1.0 / m)
        self.hm = np.asarray(h, dtype=float) * m
        self.theta, self.p, self.lam1 = float(theta), float(p), spec.lambda1
        self.r = r
        self.linear = linear

    def value_grad(self, u):
        g = self.W @ (u * u)
        p = self.p
        if self.linear is not None:
            phi = float(self.hm @ g)
            term = self.theta * phi
            dphi = self.theta * 2 * u * (self.W.T @ self.hm)
        else:
            phi = float(self.hm @ g**p)
            term = self.theta * phi ** (1 / p) if phi > 0 else 0.0
            if phi > 1e-300:
                dphi = self.theta * phi ** (1 / p - 1) * 2 * u * (self.W.T @ (g ** (p - 1) * self.hm))
            else:
                dphi = np.zeros_like(u)
        Ku = self.K @ u
        mult = 1.0 if self.linear is not None else p
        val = term - mult * float(u @ Ku) + mult * self.lam1
        grad = dphi - 2 * mult * Ku
        return val, grad

    def values(self, U):
        """Objective on the rows of U (vectorized, for grid search)."""
        G = (U * U) @ self.W.T
        if self.linear is not None:
            term = self.theta * (G @ self.hm)
            mult = 1.0
        else:
            term = self.theta * np.maximum(G**self.p @ self.hm, 0.0) ** (1 / self.p)
            mult = self.p
        quad = np.einsum("ij,jk,ik->i", U, self.K, U)
        return term - mult * quad + mult * self.lam1


def _scale(obj):
    return 1.0 + obj.p * np.abs(obj.K).max() + obj.theta


def _ascend(obj, u, max_iter=5000):
    """Projected gradient ascent with Barzilai-Borwein trial steps and an
    Armijo backtrack; the abs projection keeps u in the positive orthant."""
    u = np.abs(u) / np.linalg.norm(u)
    val, grad = obj.value_grad(u)
    rg = grad - (u @ grad) * u
    step = 1.0 / (1.0 + 2 * obj.p * np.abs(obj.K).sum(axis=1).max() + obj.theta)
    tol = GRAD_TOL * _scale(obj)
    gnorm = float(np.linalg.norm(rg))
    for it in range(max_iter):
        if gnorm <= tol:
            return u, val, it, gnorm
        s = step
        while True:
            cand = np.abs(u + s * rg)
            cand /= np.linalg.norm(cand)
            cval, cgrad = obj.value_grad(cand)
            if cval >= val + 1e-4 * s * gnorm**2 or s < 1e-16:
                break
            s *= 0.5
        if s < 1e-16:
            return u, val, it, gnorm
        crg = cgrad - (cand @ cgrad) * cand
        du, dg = cand - u, crg - rg
        curv = -float(du @ dg)
        step = float(du @ du) / curv if curv > 0 else 2 * s
        step = min(max(step, 1e-10), 1e6)
        u, val, grad, rg = cand, cval, cgrad, crg
        gnorm = float(np.linalg.norm(rg))
    return u, val, max_iter, gnorm


def _starts(spec, h, seed, n_starts=N_STARTS):
    r = np.sqrt(spec.m)
    N = spec.model.n
    h = np.asarray(h, dtype=float)
    starts = [spec.ground_state * r, r.copy()]
    if np.any(h > 0):
        starts.append(np.sqrt(h) * r)
        bump = 0.1 * r.copy()
        bump[int(np.argmax(h))] += 1.0
        starts.append(bump)
    rng = np.random.default_rng(seed)
    while len(starts) < n_starts:
        starts.append(np.abs(rng.standard_normal(N)) + 1e-3)
    return [s / np.linalg.norm(s) for s in starts[:n_starts]]


def _solve(obj, spec, h, seed):
    """Best of the starts by (value, -start index); a start that stalled
    before the gradient tolerance only wins if no converged start comes
    within 1e-9 of it."""
    runs, trace = [], []
    for i, u0 in enumerate(_starts(spec, h, seed)):
        u, val, iters, gnorm = _ascend(obj, u0)
        trace.append({"start": i, "value": val, "iterations": iters, "grad_norm": gnorm})
        runs.append((u, val, gnorm, i))
    best = max(runs, key=lambda r: (r[1], -r[3]))
    tol = GRAD_TOL * _scale(obj)
    if best[2] > tol:
        ok = [r for r in runs if r[2] <= tol and r[1] >= best[1] - 1e-9 * _scale(obj)]
        if ok:
            best = max(ok, key=lambda r: (r[1], -r[3]))
    return best, trace


def grid_search(obj, n: int, resolution: int = 400, refinements: int = 6) -> float:
    """Maximize over the nonnegative orthant of the unit sphere (n <= 3) on
    nested angular grids, each zoomed around the previous best point."""
    if n == 1:
        return float(obj.values(np.ones((1, 1)))[0])
    if n > 3:
        raise ValueError("grid search only for n <= 3")
    lo = np.zeros(n - 1)
    hi = np.full(n - 1, math.pi / 2)
    best_val, best_ang = -math.inf, None
    for _ in range(refinements + 1):
        axes = [np.linspace(a, b, resolution + 1) for a, b in zip(lo, hi)]
        ang = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, n - 1)
        U = _angles_to_sphere(ang)
        vals = obj.values(U)
        j = int(np.argmax(vals))
        if vals[j] > best_val:
            best_val, best_ang = float(vals[j]), ang[j]
        width = (hi - lo) / resolution * 4
        lo = np.clip(best_ang - width, 0, math.pi / 2)
        hi = np.clip(best_ang + width, 0, math.pi / 2)
    return best_val


def _angles_to_sphere(ang):
    if ang.shape[1] == 1:
        a = ang[:, 0]
        return np.column_stack([np.cos(a), np.sin(a)])
    a, b = ang[:, 0], ang[:, 1]
    return np.column_stack([np.cos(a), np.sin(a) * np.cos(b), np.sin(a) * np.sin(b)])


def variational_N(spec: SpectralDecomposition, theta: float, eps: float, h, p: int, seed: int = 0,
                  certify: bool | None = None) -> VariationalResult:
    """``sup_{||psi||=1} theta (int p_eps[psi^2]^p dm_h)^(1/p) - p E(psi,psi) + p lambda_1``.

    ``eps = 0`` uses ``psi^2`` directly.  Multi-start projected gradient
    ascent; for at most 3 states a grid certificate is attached.
    """
    if theta < 0 or eps < 0 or p < 1:
        raise ValueError("need theta >= 0, eps >= 0, p >= 1")
    h = np.asarray(h, dtype=float)
    if np.any(h < 0):
        raise ValueError("h must be nonnegative")
    if theta == 0:
        return VariationalResult(0.0, spec.ground_state.copy(), [{"start": 0, "value": 0.0, "iterations": 0}], 0.0)
    obj = _Objective(spec, theta, eps, h, p)
    return _finish(obj, spec, h, seed, certify)


def _finish(obj, spec, h, seed, certify):
    (u, val, gnorm, _), trace = _solve(obj, spec, h, seed)
    if gnorm > GRAD_TOL * _scale(obj):
        raise NonConvergence(f"best start stopped at gradient norm {gnorm:.3e}")
    cert = None
    if certify or (certify is None and spec.model.n <= 3):
        cert = val - grid_search(obj, spec.model.n)
    return VariationalResult(float(val), u / obj.r, trace, cert)


def linear_variational_sup(spec: SpectralDecomposition, V, seed: int = 0, certify=None) -> VariationalResult:
    """``sup_{||psi||=1} <V psi, psi>_m - E(psi, psi) + lambda_1`` by the same ascent."""
    V = np.asarray(V, dtype=float)
    obj = _Objective(spec, 1.0, 0.0, V, 1, linear=True)
    shift = min(0.0, float(V.min()))
    if shift < 0:
        # keep the weights nonnegative: <V psi, psi> = <(V - c) psi, psi> + c on the sphere
        obj.hm = (V - shift) * spec.m
    res = _finish(obj, spec, np.abs(V), seed, certify)
    res.value += shift
    return res


def mgf_rhs(specs, theta: float, h, p: int, seed: int = 0) -> float:
    """(1/p) sum_i N_i(theta, 0, h)."""
    return float(sum(variational_N(s, theta, 0.0, h, p, seed, certify=False).value for s in specs) / len(specs))


def mgf_rhs_eps(specs, theta: float, eps: float, h, p: int, seed: int = 0) -> float:
    return float(sum(variational_N(s, theta, eps, h, p, seed, certify=False).value for s in specs) / len(specs))


@dataclass
class VaradhanCheck:
    lhs: float
    rhs: float
    gap: float


def occupation_varadhan_check(spec: SpectralDecomposition, f, theta: float, eps: float, seed: int = 0) -> VaradhanCheck:
    """Principal eigenvalue of ``L + theta T_eps f`` plus lambda_1 against the
    variational supremum over psi."""
    f = np.asarray(f, dtype=float)
    V = theta * (heat_kernel(spec, eps).apply(f) if eps > 0 else f)
    lhs = tilted_principal_eigenvalue(spec.model, V) + spec.lambda1
    if theta == 0:
        return VaradhanCheck(lhs, 0.0, abs(lhs))
    rhs = linear_variational_sup(spec, V, seed, certify=False).value
    return VaradhanCheck(lhs, rhs, abs(lhs - rhs))


# --- Monte Carlo cumulant --------------------------------------------------------------


@dataclass
class MgfSlope:
    slope: float
    slope_se: float
    times: list
    values: list
    ses: list
    rhs: float
    rhs_eps: float | None
    heavy_tail: bool


def log_mean_exp(x):
    x = np.asarray(x, dtype=float)
    mx = x.max()
    w = np.exp(x - mx)
    mean = w.mean()
    return float(mx + math.log(mean)), w


def heavy_tail(weights) -> bool:
    """Top 1% of the weights carrying more than half of the total."""
    w = np.sort(np.asarray(weights))[::-1]
    top = max(1, int(math.ceil(0.01 * w.size)))
    return bool(w[:top].sum() > 0.5 * w.sum())


def mc_log_mgf_slope(models, theta, h, p, eps, t_grid, n, seed, specs=None, solver_seed: int = 0) -> MgfSlope:
    """Per-t estimates of ``(1/t) log E~ exp(theta <l^IS, h>^(1/p))`` and their
    extrapolation to ``1/t -> 0`` by weighted least squares in ``1/t``.

    ``eps = 0`` uses the exact intersection measure, otherwise the smoothed one.
    """
    if len(t_grid) < 3 or list(t_grid) != sorted(t_grid):
        raise ValueError("t_grid must be ascending with at least 3 points")
    specs = specs or [spectral_decompose(m) for m in models]
    h = np.asarray(h, dtype=float)
    x0s = [int(np.argmax(s.ground_state)) for s in specs]
    vals, ses, flagged = [], [], False
    for ti, t in enumerate(t_grid):
        ens = sample_surviving_occupations(models, x0s, t, n, stream_seed(seed, ti), specs)
        if eps > 0:
            pair = smoothed_pairings(ens.occupations, specs, eps, h)
        else:
            pair = exact_pairings(ens.occupations, specs[0].m, h)
        expo = theta * np.maximum(pair, 0.0) ** (1.0 / p)
        lme, w = log_mean_exp(expo)
        if theta > 0 and heavy_tail(w):
            flagged = True
            warnings.warn(f"heavy-tailed exponential weights at t={t}", HeavyTailWarning)
        se = float(w.std(ddof=1) / math.sqrt(w.size) / w.mean()) if theta > 0 else 0.0
        vals.append(lme / t)
        ses.append(se / t)
    x = 1.0 / np.asarray(t_grid, dtype=float)
    y = np.asarray(vals)
    s = np.asarray(ses)
    if theta == 0:
        slope, slope_se = 0.0, 0.0
    else:
        wts = 1.0 / np.maximum(s, 1e-300) ** 2
        X = np.column_stack([np.ones_like(x), x])
        cov = np.linalg.inv(X.T @ (X * wts[:, None]))
        beta = cov @ (X.T @ (wts * y))
        slope, slope_se = float(beta[0]), float(math.sqrt(cov[0, 0]))
    rhs = mgf_rhs(specs, theta, h, p, solver_seed)
    rhs_eps = mgf_rhs_eps(specs, theta, eps, h, p, solver_seed) if eps > 0 else None
    return MgfSlope(slope, slope_se, list(t_grid), vals, ses, rhs, rhs_eps, flagged)
