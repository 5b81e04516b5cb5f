"""Finite symmetric Markov chains: construction, spectra, heat kernels.

A model is a finite state space with a reference measure ``m`` and an
``m``-symmetric substochastic generator ``L``.  Kernels are densities with
respect to ``m``, so the operator attached to a kernel ``k`` acts as
``(K f)(x) = sum_y k(x, y) f(y) m(y)``.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.csgraph import connected_components

from .errors import (
    Disconnected,
    EigensolveFailure,
    KernelFloorWarning,
    ModelError,
    NegativeRate,
    SymmetryViolation,
)

SYMMETRY_TOL = 1e-9
ZERO_FLOOR = 1e-12
CLUSTER_GAP = 1e-9


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SymmetricMarkovModel:
    states: tuple
    m: np.ndarray
    L: np.ndarray
    metric: np.ndarray | None = None
    label: str = ""

    @property
    def n(self) -> int:
        return len(self.states)

    @property
    def killing(self) -> np.ndarray:
        k = -self.L.sum(axis=1)
        return np.where(np.abs(k) < 1e-13 * (1 + np.abs(np.diag(self.L))), 0.0, k)

    @property
    def conductances(self) -> np.ndarray:
        """Symmetric edge weights ``c(x, y) = m(x) L[x, y]`` (zero diagonal)."""
        c = self.m[:, None] * self.L
        np.fill_diagonal(c, 0.0)
        return 0.5 * (c + c.T)

    @property
    def total_mass(self) -> float:
        return float(self.m.sum())

    @property
    def is_conservative(self) -> bool:
        return bool(np.all(self.killing == 0.0))

    def index(self, state) -> int:
        """Position of ``state``; integers are accepted as positions directly."""
        if isinstance(state, (int, np.integer)) and state not in self.states:
            if not 0 <= state < self.n:
                raise IndexError(state)
            return int(state)
        return self.states.index(state)

    def to_dict(self) -> dict:
        d = {
            "states": list(self.states),
            "m": self.m.tolist(),
            "L": self.L.tolist(),
            "label": self.label,
        }
        if self.metric is not None:
            d["metric"] = self.metric.tolist()
        return d


def build_model(states, m, L, metric=None, label="") -> SymmetricMarkovModel:
    """Validate inputs and return an immutable model.

    Raises SymmetryViolation, NegativeRate or Disconnected when the
    corresponding invariant fails.
    """
    m = np.asarray(m, dtype=float)
    L = np.asarray(L, dtype=float)
    states = tuple(states)
    n = len(states)
    if m.shape != (n,) or L.shape != (n, n):
        raise ModelError(f"shape mismatch: {n} states, m{m.shape}, L{L.shape}")
    if len(set(states)) != n:
        raise ModelError("duplicate state labels")
    if not np.all(np.isfinite(m)) or not np.all(np.isfinite(L)):
        raise ModelError("non-finite input")
    if np.any(m <= 0):
        raise ModelError("reference measure must be positive")

    off = L - np.diag(np.diag(L))
    if np.any(off < 0):
        raise NegativeRate("negative off-diagonal rate")
    scale = max(1.0, float(np.abs(L).max()) * float(m.max()))
    flux = m[:, None] * off
    if np.abs(flux - flux.T).max() > SYMMETRY_TOL * scale:
        raise SymmetryViolation("detailed balance m(x)L[x,y] = m(y)L[y,x] fails")
    rowsum = L.sum(axis=1)
    if np.any(rowsum > SYMMETRY_TOL * max(1.0, float(np.abs(L).max()))):
        raise NegativeRate("row sum > 0 (negative killing rate)")

    if n > 1:
        ncomp, _ = connected_components(off > 0, directed=False)
        if ncomp != 1:
            raise Disconnected(f"{ncomp} communicating classes")

    if metric is not None:
        metric = np.asarray(metric, dtype=float)
        _check_metric(metric, n)
        metric = _frozen(metric)
    return SymmetricMarkovModel(states, _frozen(m), _frozen(L), metric, str(label))


def _check_metric(d, n):
    if d.shape != (n, n):
        raise ModelError("metric shape mismatch")
    if np.any(d < 0) or np.any(np.diag(d) != 0):
        raise ModelError("metric must be nonnegative with zero diagonal")
    if np.abs(d - d.T).max() > 1e-12:
        raise ModelError("metric not symmetric")
    tol = 1e-12 * max(1.0, float(d.max()))
    for z in range(n):
        if np.any(d > d[:, z : z + 1] + d[z : z + 1, :] + tol):
            raise ModelError("metric violates the triangle inequality")


def _label(s):
    # JSON turns tuple labels into lists; restore them so labels stay hashable
    return tuple(_label(v) for v in s) if isinstance(s, list) else s


def model_from_dict(d: dict) -> SymmetricMarkovModel:
    return build_model([_label(s) for s in d["states"]], d["m"], d["L"], d.get("metric"), d.get("label", ""))


def save_model(model: SymmetricMarkovModel, path) -> None:
    # json writes floats with repr(), which round-trips exactly
    with open(path, "w") as fh:
        json.dump(model.to_dict(), fh)


def load_model(path) -> SymmetricMarkovModel:
    with open(path) as fh:
        return model_from_dict(json.load(fh))


@dataclass(frozen=True, eq=False)
class SpectralDecomposition:
    """m-orthonormal eigenpairs of ``-L``; ``eigenfunctions[:, n]`` is psi_n."""

    eigenvalues: np.ndarray
    eigenfunctions: np.ndarray
    model: SymmetricMarkovModel = field(repr=False)

    @property
    def m(self) -> np.ndarray:
        return self.model.m

    @property
    def lambda1(self) -> float:
        return float(self.eigenvalues[0])

    @property
    def ground_state(self) -> np.ndarray:
        return self.eigenfunctions[:, 0]

    def coefficients(self, f) -> np.ndarray:
        """Inner products <f, psi_n>_m."""
        return self.eigenfunctions.T @ (np.asarray(f, dtype=float) * self.m)

    def semigroup(self, t: float) -> np.ndarray:
        """Transition matrix of T_t, i.e. p_t(x, y) m(y)."""
        return heat_kernel(self, t).matrix


def spectral_decompose(model: SymmetricMarkovModel) -> SpectralDecomposition:
    m = model.m
    r = np.sqrt(m)
    sym = -(r[:, None] * model.L) / r[None, :]
    sym = 0.5 * (sym + sym.T)
    try:
        lam, vec = np.linalg.eigh(sym)
    except np.linalg.LinAlgError as exc:
        raise EigensolveFailure(str(exc)) from exc
    if not np.all(np.isfinite(lam)):
        raise EigensolveFailure("non-finite eigenvalues")

    vec = _reorthonormalize_clusters(lam, vec)
    if model.is_conservative:
        lam[0] = 0.0
        vec[:, 0] = r / np.sqrt(m.sum())
    lam = np.maximum(lam, 0.0)
    psi = vec / r[:, None]
    # deterministic sign: positive m-weighted sum, else positive first nonzero entry
    for j in range(psi.shape[1]):
        s = float(psi[:, j] @ m)
        if abs(s) < 1e-10:
            nz = np.flatnonzero(np.abs(psi[:, j]) > 1e-10)
            s = psi[nz[0], j] if nz.size else 1.0
        if s < 0:
            psi[:, j] = -psi[:, j]
    return SpectralDecomposition(_frozen(lam), _frozen(psi), model)


def _reorthonormalize_clusters(lam, vec):
    vec = vec.copy()
    start = 0
    n = len(lam)
    while start < n:
        stop = start + 1
        while stop < n and lam[stop] - lam[stop - 1] < CLUSTER_GAP:
            stop += 1
        if stop - start > 1:
            q, _ = np.linalg.qr(vec[:, start:stop])
            vec[:, start:stop] = q
        start = stop
    return vec


@dataclass(frozen=True, eq=False)
class KernelMatrix:
    values: np.ndarray
    parameter: float
    kind: str
    m: np.ndarray = field(repr=False)

    @property
    def matrix(self) -> np.ndarray:
        """Operator matrix: ``(K f) = matrix @ f``."""
        return self.values * self.m[None, :]

    def apply(self, f) -> np.ndarray:
        return self.matrix @ np.asarray(f, dtype=float)


def _kernel(spec, weights, parameter, kind) -> KernelMatrix:
    psi = spec.eigenfunctions
    k = (psi * weights[None, :]) @ psi.T
    k = 0.5 * (k + k.T)
    low = k.min()
    if low < -ZERO_FLOOR * max(1.0, float(np.abs(k).max())):
        warnings.warn(f"{kind} kernel entry {low:.3e} below zero floor", KernelFloorWarning)
    k = np.where((k < 0) & (k > -ZERO_FLOOR), 0.0, k)
    return KernelMatrix(_frozen(k), float(parameter), kind, spec.m)


def heat_kernel(spec: SpectralDecomposition, t: float) -> KernelMatrix:
    if t < 0:
        raise ValueError("t must be nonnegative")
    return _kernel(spec, np.exp(-spec.eigenvalues * t), t, "heat")


def resolvent_kernel(spec: SpectralDecomposition) -> KernelMatrix:
    return _kernel(spec, 1.0 / (1.0 + spec.eigenvalues), np.inf, "resolvent")


def truncated_resolvent_kernel(spec: SpectralDecomposition, delta: float) -> KernelMatrix:
    """Kernel of int_0^delta e^{-t} T_t dt."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    a = 1.0 + spec.eigenvalues
    return _kernel(spec, -np.expm1(-delta * a) / a, delta, "truncated_resolvent")


def dirichlet_energy(model: SymmetricMarkovModel, f) -> float:
    f = np.asarray(f, dtype=float)
    if f.shape != (model.n,):
        raise ValueError("f has wrong length")
    return float(max(-(f * model.m) @ (model.L @ f), 0.0))


def survival_probability(spec: SpectralDecomposition, x0, t: float) -> float:
    """P_{x0}(t < zeta) = sum_y p_t(x0, y) m(y)."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    i = spec.model.index(x0)
    c = spec.coefficients(np.ones(spec.model.n))
    val = float(np.sum(np.exp(-spec.eigenvalues * t) * spec.eigenfunctions[i] * c))
    return min(max(val, 0.0), 1.0)


def survival_vector(spec: SpectralDecomposition, t: float) -> np.ndarray:
    c = spec.coefficients(np.ones(spec.model.n))
    return np.clip(spec.eigenfunctions @ (np.exp(-spec.eigenvalues * t) * c), 0.0, 1.0)


def heat_trace(spec: SpectralDecomposition, t) -> np.ndarray:
    """sum_x p_t(x, x) m(x) = sum_n exp(-lambda_n t), vectorized over t."""
    t = np.asarray(t, dtype=float)
    return np.exp(-np.multiply.outer(t, spec.eigenvalues)).sum(axis=-1)
