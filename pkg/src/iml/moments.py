"""Exact moments of intersection-measure pairings by spectral summation.

For one process started at ``x0`` the ordered-visit tensor is

    H_t(x_1..x_k) = int_{r_1+..+r_k <= t} p_{r_1}(x0,x_1) ... p_{r_k}(x_{k-1},x_k)
                    * P_{x_k}(t - sum r < zeta) dr,

and moments of ``<f, l^IS>`` and ``<f, l^IS_eps>`` are sums over orderings
of smoothed copies of ``H_t`` (see :func:`mixed_moment_formula`).
"""
from __future__ import annotations

import math
import string
from itertools import permutations

import numpy as np

from .errors import TooLarge
from .space import SpectralDecomposition, heat_kernel
from .tensor_ops import mixed_permuted_apply

# clusters with (max - min) * t below TAYLOR_SPAN use the series; the plain
# recursion loses ~eps / (gap t)^d there
TAYLOR_SPAN = 1.0
TAYLOR_TERMS = 20
MAX_TENSOR = 10**7


def _complete_homogeneous(z, degree):
    """h_0..h_degree of the rows of ``z`` (shape (M, r)); returns (M, degree+1)."""
    M, r = z.shape
    h = np.zeros((M, degree + 1))
    h[:, 0] = 1.0
    # h_n(z_1..z_j) = h_n(z_1..z_{j-1}) + z_j h_{n-1}(z_1..z_j)
    for j in range(r):
        for n in range(1, degree + 1):
            h[:, n] = h[:, n] + z[:, j] * h[:, n - 1]
    return h


def _divided_differences(x, t):
    """Top divided difference of ``g(x) = exp(-x t)`` over each row of x (sorted)."""
    M, r = x.shape
    table = [np.exp(-x[:, i] * t) for i in range(r)]  # table[i] = g[x_i .. x_{i+d}]
    for d in range(1, r):
        new = []
        for i in range(r - d):
            lo, hi = x[:, i], x[:, i + d]
            gap = hi - lo
            close = gap * t < TAYLOR_SPAN
            with np.errstate(divide="ignore", invalid="ignore"):
                val = (table[i + 1] - table[i]) / gap
            if close.any():
                val = np.where(close, _taylor_dd(x[:, i : i + d + 1], t), val)
            new.append(val)
        table = new
    return table[0]


def _taylor_dd(pts, t):
    """Divided difference of exp(-x t) on a tight cluster by expansion at its mean."""
    d = pts.shape[1] - 1
    c = pts.mean(axis=1)
    h = _complete_homogeneous(pts - c[:, None], TAYLOR_TERMS - 1)
    out = np.zeros(pts.shape[0])
    for n in range(TAYLOR_TERMS):
        order = d + n
        out += (-t) ** order / math.factorial(order) * h[:, n]
    return out * np.exp(-c * t)


def simplex_exp_integrals(lambdas, t: float) -> np.ndarray:
    """Row-wise version of :func:`simplex_exp_integral` for an (M, k+1) array."""
    lam = np.sort(np.atleast_2d(np.asarray(lambdas, dtype=float)), axis=1)
    k = lam.shape[1] - 1
    shift = lam[:, 0]
    dd = _divided_differences(lam - shift[:, None], t)
    return (-1) ** k * dd * np.exp(-shift * t)


def simplex_exp_integral(lambdas, t: float) -> float:
    """``int_{r >= 0, r_1+..+r_k <= t} prod_j e^{-lambda_j r_j} e^{-lambda_{k+1}(t - sum r)} dr``.

    Equal to ``(-1)^k`` times the divided difference of ``x -> e^{-x t}`` at
    the given points; clusters with spread below ``TAYLOR_SPAN / t`` switch
    to a 20-term expansion about their mean.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    return float(simplex_exp_integrals(np.asarray(lambdas, dtype=float)[None, :], t)[0])


def h_t_tensor(spec: SpectralDecomposition, x0, t: float, k: int) -> np.ndarray:
    """Ordered-visit density tensor of order k (see module docstring)."""
    if k < 1:
        raise ValueError("k >= 1")
    N = spec.model.n
    if N ** (k + 1) > MAX_TENSOR:
        raise TooLarge(f"N^(k+1) = {N ** (k + 1)}")
    lam = spec.eigenvalues
    psi = spec.eigenfunctions
    grid = np.stack(np.meshgrid(*([lam] * (k + 1)), indexing="ij"), axis=-1).reshape(-1, k + 1)
    S = simplex_exp_integrals(grid, t).reshape((N,) * (k + 1))
    a = psi[spec.model.index(x0)]
    b = spec.coefficients(np.ones(N))
    # contraction a_{n1} [psi(x1,n1) psi(x1,n2)] ... [psi(xk,nk) psi(xk,n_{k+1})] b_{n_{k+1}} S[n]
    letters = string.ascii_letters
    ns = letters[: k + 1]
    xs = letters[k + 1 : 2 * k + 1]
    terms = [ns[0]]
    ops = [a]
    for j in range(k):
        terms += [xs[j] + ns[j], xs[j] + ns[j + 1]]
        ops += [psi, psi]
    terms += [ns[k], ns]
    ops += [b, S]
    H = np.einsum(",".join(terms) + "->" + xs, *ops, optimize=True)
    return np.where((H < 0) & (H > -1e-12), 0.0, H)


def _check_sizes(N, k):
    if N**k * math.factorial(k) > MAX_TENSOR:
        raise TooLarge(f"N^k k! = {N**k * math.factorial(k)}")


def symmetrized_visits(spec, x0, t, k, n_exact, eps, H=None) -> np.ndarray:
    """``sum_sigma [id^(n_exact) (x)_sigma T_eps^(k - n_exact)] H_t`` for one process."""
    N = spec.model.n
    _check_sizes(N, k)
    if H is None:
        H = h_t_tensor(spec, x0, t, k)
    smoother = heat_kernel(spec, eps).values if n_exact < k else None
    G = np.zeros_like(H)
    for sigma in permutations(range(k)):
        G += mixed_permuted_apply(n_exact, smoother, sigma, H, spec.m)
    return G


def _pair_with_f(Gs, f, m, k):
    w = np.asarray(f, dtype=float) * m
    prod = np.ones_like(Gs[0])
    for G in Gs:
        prod = prod * G
    for _ in range(k):
        prod = prod @ w
    return float(prod)


def mixed_moment_formula(specs, x0s, f, t, k, n_exact, eps) -> float:
    """``E[<f, l^IS>^n_exact <f, l^IS_eps>^(k - n_exact); t < all lifetimes]``."""
    if not 0 <= n_exact <= k:
        raise ValueError("need 0 <= n_exact <= k")
    Gs = [symmetrized_visits(s, x, t, k, n_exact, eps) for s, x in zip(specs, x0s)]
    return _pair_with_f(Gs, f, specs[0].m, k)


def mixed_moments(specs, x0s, f, t, k, eps) -> list:
    """All ``mixed_moment_formula`` values for n_exact = 0..k, sharing H_t."""
    Hs = [h_t_tensor(s, x, t, k) for s, x in zip(specs, x0s)]
    out = []
    for n_exact in range(k + 1):
        Gs = [symmetrized_visits(s, x, t, k, n_exact, eps, H) for s, x, H in zip(specs, x0s, Hs)]
        out.append(_pair_with_f(Gs, f, specs[0].m, k))
    return out


def alternating_moment_formula(specs, x0s, f, t, k, eps) -> float:
    """``E[(<f, l^IS> - <f, l^IS_eps>)^k; t < all lifetimes]``
    as ``sum_j (-1)^(k-j) C(k, j) mixed(j)``."""
    mixed = mixed_moments(specs, x0s, f, t, k, eps)
    return float(sum((-1) ** (k - j) * math.comb(k, j) * v for j, v in enumerate(mixed)))


def h_t_lp_norm(spec, x0, t, k, p) -> float:
    H = h_t_tensor(spec, x0, t, k)
    w = spec.m
    vals = np.abs(H) ** p
    for _ in range(k):
        vals = vals @ w
    return float(vals ** (1.0 / p))


def h_t_lp_bound(spec, t, k, p) -> float:
    """``e^t [sup_y sum_x R_1(x, y)^p m(x)]^(k/p)``."""
    from .space import resolvent_kernel

    R = resolvent_kernel(spec)
    col = ((R.values**p) * spec.m[:, None]).sum(axis=0).max()
    return float(math.exp(t) * col ** (k / p))
