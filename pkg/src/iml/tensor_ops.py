"""Dense k-tensors over a finite state space and (permutated) tensor
products of kernel operators.

Operators are given by their kernels against ``m`` (``N x N`` arrays or
:class:`~iml.space.KernelMatrix`), so contraction along an axis is
``sum_y k(x, y) F(..., y, ...) m(y)``.  Permutations are 0-based image
arrays: ``sigma[i]`` is the image of ``i``.
"""
from __future__ import annotations

import struct

import numpy as np

from .errors import BadPermutation, NegativeInput, ShapeMismatch, TooLarge
from .space import KernelMatrix

MAX_ENTRIES = 10**7


def check_tensor(F, n=None) -> np.ndarray:
    F = np.asarray(F, dtype=float)
    if F.ndim < 1:
        raise ShapeMismatch("tensor order must be >= 1")
    if len(set(F.shape)) != 1:
        raise ShapeMismatch(f"all extents must agree, got {F.shape}")
    if n is not None and F.shape[0] != n:
        raise ShapeMismatch(f"extent {F.shape[0]} != {n}")
    if F.size > MAX_ENTRIES:
        raise TooLarge(f"{F.size} entries > {MAX_ENTRIES}")
    if not np.all(np.isfinite(F)):
        raise ValueError("tensor has non-finite values")
    return F


def check_permutation(sigma, k=None) -> tuple:
    sigma = tuple(int(s) for s in sigma)
    if sorted(sigma) != list(range(len(sigma))):
        raise BadPermutation(f"{sigma} is not a permutation of 0..{len(sigma) - 1}")
    if k is not None and len(sigma) != k:
        raise BadPermutation(f"permutation of length {len(sigma)} for order {k}")
    return sigma


def inverse_permutation(sigma) -> tuple:
    inv = [0] * len(sigma)
    for i, s in enumerate(sigma):
        inv[s] = i
    return tuple(inv)


def compose(sigma, tau) -> tuple:
    """``(sigma o tau)(i) = sigma[tau[i]]``."""
    return tuple(sigma[t] for t in tau)


def identity_kernel(m) -> np.ndarray:
    return np.diag(1.0 / np.asarray(m, dtype=float))


def _kernel_values(op):
    return op.values if isinstance(op, KernelMatrix) else np.asarray(op, dtype=float)


def _contract_axis(F, kernel, m, axis):
    M = kernel * m[None, :]
    out = np.tensordot(M, F, axes=([1], [axis]))
    return np.moveaxis(out, 0, axis)


def tensor_product_apply(ops, F, m) -> np.ndarray:
    """``[T_1 x ... x T_k] F``: contract axis i with ``ops[i]``.

    ``None`` entries are treated as the identity and skipped.
    """
    m = np.asarray(m, dtype=float)
    F = check_tensor(F, len(m))
    if len(ops) != F.ndim:
        raise ShapeMismatch(f"{len(ops)} operators for a tensor of order {F.ndim}")
    out = F
    for axis, op in enumerate(ops):
        if op is None:
            continue
        k = _kernel_values(op)
        if k.shape != (len(m), len(m)):
            raise ShapeMismatch(f"operator {axis} has shape {k.shape}")
        out = _contract_axis(out, k, m, axis)
    return out


def permuted_tensor_apply(ops, sigma, F, m) -> np.ndarray:
    """Permutated tensor product applied to F.

    On rank-one input ``g_1 x ... x g_k`` the result is
    ``T_1 g_sigma(1) x ... x T_k g_sigma(k)``; in kernel form
    ``out(x) = int prod_i t_i(x_i, y_sigma(i)) F(y) m(dy)``.
    """
    F = check_tensor(F, len(m))
    sigma = check_permutation(sigma, F.ndim)
    return tensor_product_apply(ops, np.transpose(F, sigma), m)


def mixed_permuted_apply(n_identity: int, smoother, sigma, F, m) -> np.ndarray:
    """``[id^(x n_identity) (x)_sigma S^(x (k - n_identity))] F``.

    Evaluated through the axis assignment ``U_j = id`` when
    ``sigma^-1(j) < n_identity`` and ``U_j = S`` otherwise, followed by the
    coordinate permutation.
    """
    F = check_tensor(F, len(m))
    k = F.ndim
    if not 0 <= n_identity <= k:
        raise ValueError("n_identity must lie in [0, k]")
    sigma = check_permutation(sigma, k)
    inv = inverse_permutation(sigma)
    ops = [None if inv[j] < n_identity else smoother for j in range(k)]
    return np.transpose(tensor_product_apply(ops, F, m), sigma)


def markov_interpolation_check(T, f, g, p: float, slack: float = 1e-10) -> bool:
    """Pointwise ``T[fg] <= T[f^p]^(1/p) T[g^q]^(1/q)`` for a positive operator
    given as a matrix acting by ``T @ f``."""
    T = np.asarray(T, dtype=float)
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    if np.any(f < 0) or np.any(g < 0):
        raise NegativeInput("f and g must be nonnegative")
    if np.any(T < 0):
        raise NegativeInput("T must be positivity preserving")
    if p <= 1:
        raise ValueError("p must exceed 1")
    q = p / (p - 1)
    lhs = T @ (f * g)
    rhs = (T @ f**p) ** (1 / p) * (T @ g**q) ** (1 / q)
    return bool(np.all(lhs <= rhs + slack * (1 + np.abs(rhs))))


def lp_norm(f, m, p: float) -> float:
    return float((np.abs(f) ** p * m).sum() ** (1.0 / p))


def lp_contraction_check(spec, t: float, p: float, trials: int = 200, seed: int = 0) -> float:
    """Largest observed ``||T_t f||_p / ||f||_p`` over random f (m-weighted norms)."""
    if p < 1:
        raise ValueError("p must be >= 1")
    rng = np.random.default_rng(seed)
    P = spec.semigroup(t)
    m = spec.m
    worst = 0.0
    for i in range(trials):
        f = rng.standard_normal(len(m))
        if i % 3 == 1:
            f = (rng.random(len(m)) < 0.3).astype(float)
        elif i % 3 == 2:
            f = np.abs(f) ** 3
        nf = lp_norm(f, m, p)
        if nf == 0:
            continue
        worst = max(worst, lp_norm(P @ f, m, p) / nf)
    return worst


def strong_continuity_profile(spec, f, p: float, j_max: int = 20) -> np.ndarray:
    """``||T_t f - f||_p`` along ``t = 2^-j``, j = 0..j_max."""
    f = np.asarray(f, dtype=float)
    return np.array([lp_norm(spec.semigroup(2.0**-j) @ f - f, spec.m, p) for j in range(j_max + 1)])


# flat binary layout: uint32 order, uint64 extent per axis, float64 row-major, little endian


def tensor_to_bytes(F) -> bytes:
    F = check_tensor(F)
    head = struct.pack("<I", F.ndim) + struct.pack(f"<{F.ndim}Q", *F.shape)
    return head + np.ascontiguousarray(F, dtype="<f8").tobytes()


def tensor_from_bytes(buf: bytes) -> np.ndarray:
    (k,) = struct.unpack_from("<I", buf, 0)
    shape = struct.unpack_from(f"<{k}Q", buf, 4)
    off = 4 + 8 * k
    return np.frombuffer(buf, dtype="<f8", offset=off).reshape(shape).copy()


def write_tensor(path, F) -> None:
    with open(path, "wb") as fh:
        fh.write(tensor_to_bytes(F))


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return tensor_from_bytes(fh.read())
