"""Continuous-time path simulation, occupation and intersection measures.

Paths are piecewise constant, so every time integral below is an exact
finite sum over sojourns.  Randomness comes from Philox streams keyed by
``(seed, *keys)``; identical seeds and parameters give identical output.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import AcceptanceTooLow, PathKilled
from .space import SpectralDecomposition, heat_kernel, spectral_decompose, survival_probability

MIN_ACCEPTANCE = 1e-6


def stream_rng(seed: int, *keys: int) -> np.random.Generator:
    """Independent counter-based stream for ``(seed, *keys)``."""
    ss = np.random.SeedSequence([int(seed) & (2**64 - 1), *map(int, keys)])
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class PathSample:
    states: tuple
    sojourns: tuple
    horizon: float
    survived: bool
    rng_stream_id: int = 0


@dataclass(frozen=True)
class DiscreteMeasure:
    masses: np.ndarray
    kind: str = "generic"

    @property
    def total(self) -> float:
        return float(self.masses.sum())

    def pair(self, f) -> float:
        return float(np.dot(np.asarray(f, dtype=float), self.masses))


def _jump_table(model):
    q = -np.diag(model.L).copy()
    rates = np.array(model.L, dtype=float)
    np.fill_diagonal(rates, 0.0)
    rates = np.column_stack([rates, model.killing])
    with np.errstate(invalid="ignore", divide="ignore"):
        cum = np.cumsum(rates, axis=1) / q[:, None]
    cum[q == 0] = 1.0
    cum[:, -1] = 1.0
    return q, cum


def sample_path(model, x0, t: float, rng: np.random.Generator, stream_id: int = 0) -> PathSample:
    """Gillespie simulation up to ``t``; killing ends the path early."""
    if t <= 0:
        raise ValueError("t must be positive")
    q, cum = _jump_table(model)
    n = model.n
    x = model.index(x0)
    now = 0.0
    states, sojourns = [], []
    while True:
        hold = rng.exponential(1.0 / q[x]) if q[x] > 0 else math.inf
        if now + hold >= t:
            states.append(x)
            sojourns.append(t - now)
            return PathSample(tuple(states), tuple(sojourns), t, True, stream_id)
        states.append(x)
        sojourns.append(hold)
        now += hold
        nxt = int(np.searchsorted(cum[x], rng.random(), side="right"))
        if nxt >= n:
            return PathSample(tuple(states), tuple(sojourns), t, False, stream_id)
        x = nxt


def simulate_occupations(model, x0, t: float, n_paths: int, rng: np.random.Generator):
    """Vectorized Gillespie for ``n_paths`` independent paths.

    Returns ``(occupation, survived)``: per-path time spent in each state
    (up to ``t`` or death) and the survival flags.
    """
    q, cum = _jump_table(model)
    N = model.n
    state = np.full(n_paths, model.index(x0), dtype=np.int64)
    now = np.zeros(n_paths)
    occ = np.zeros((n_paths, N))
    alive = np.ones(n_paths, dtype=bool)
    active = np.arange(n_paths)
    while active.size:
        s = state[active]
        rate = q[s]
        with np.errstate(divide="ignore"):
            hold = rng.exponential(1.0, size=active.size) / rate
        remaining = t - now[active]
        done = hold >= remaining
        occ[active, s] += np.where(done, remaining, hold)
        now[active] += hold
        moving = active[~done]
        u = rng.random(moving.size)
        nxt = (u[:, None] >= cum[state[moving]]).sum(axis=1)
        killed = nxt >= N
        alive[moving[killed]] = False
        state[moving[~killed]] = nxt[~killed]
        active = moving[~killed]
    return occ, alive


@dataclass
class OccupationEnsemble:
    """Occupation vectors of jointly surviving tuples.

    ``occupations[i]`` has shape ``(n, N_i)``; ``attempts`` counts tuples
    drawn before the n-th acceptance.
    """

    occupations: list
    attempts: int
    t: float

    @property
    def n(self) -> int:
        return self.occupations[0].shape[0]

    @property
    def acceptance(self) -> float:
        return self.n / self.attempts


def _projected_acceptance(models, x0s, t, specs=None):
    specs = specs or [spectral_decompose(m) for m in models]
    return math.prod(survival_probability(s, x, t) for s, x in zip(specs, x0s))


def sample_surviving_occupations(models, x0s, t, n, seed, specs=None, batch=None) -> OccupationEnsemble:
    """Rejection sampling of ``n`` jointly surviving tuples (vectorized)."""
    acc = _projected_acceptance(models, x0s, t, specs)
    if acc < MIN_ACCEPTANCE:
        raise AcceptanceTooLow(f"projected acceptance {acc:.3e} < {MIN_ACCEPTANCE}")
    if batch is None:
        batch = int(min(max(1000, math.ceil(1.1 * n / acc)), 2 * 10**5))
    kept = [[] for _ in models]
    got = 0
    attempts = 0
    b = 0
    while got < n:
        occs, alive = [], np.ones(batch, dtype=bool)
        for i, (mod, x0) in enumerate(zip(models, x0s)):
            o, a = simulate_occupations(mod, x0, t, batch, stream_rng(seed, b, i))
            occs.append(o)
            alive &= a
        idx = np.flatnonzero(alive)
        need = n - got
        if idx.size >= need:
            attempts += int(idx[need - 1]) + 1
            idx = idx[:need]
        else:
            attempts += batch
        for i in range(len(models)):
            kept[i].append(occs[i][idx])
        got += idx.size
        b += 1
    return OccupationEnsemble([np.concatenate(k) for k in kept], attempts, t)


@dataclass
class SurvivingTuples:
    tuples: list
    attempts: int

    @property
    def acceptance(self) -> float:
        return len(self.tuples) / self.attempts


def sample_surviving_tuple(models, x0s, t, n_tuples, seed, specs=None) -> SurvivingTuples:
    """Rejection sampling of jointly surviving path tuples; attempt ``a``
    draws all p paths from stream ``(seed, a)``."""
    acc = _projected_acceptance(models, x0s, t, specs)
    if acc < MIN_ACCEPTANCE:
        raise AcceptanceTooLow(f"projected acceptance {acc:.3e} < {MIN_ACCEPTANCE}")
    out = []
    a = 0
    while len(out) < n_tuples:
        rng = stream_rng(seed, a)
        tup = tuple(sample_path(m, x, t, rng, a) for m, x in zip(models, x0s))
        if all(p.survived for p in tup):
            out.append(tup)
        a += 1
    return SurvivingTuples(out, a)


# --- measures from paths ------------------------------------------------------


def _require_survived(paths):
    for p in paths:
        if not p.survived:
            raise PathKilled("path was killed before the horizon")


def occupation_measure(path: PathSample, n_states: int) -> DiscreteMeasure:
    """Time spent in each state (sojourn sum)."""
    _require_survived([path])
    masses = np.zeros(n_states)
    np.add.at(masses, np.asarray(path.states, dtype=int), np.asarray(path.sojourns))
    return DiscreteMeasure(masses, "occupation")


def occupation_measure_sweep(path: PathSample, n_states: int) -> DiscreteMeasure:
    """Same measure via a sweep over sorted jump epochs."""
    _require_survived([path])
    epochs = np.concatenate([[0.0], np.cumsum(path.sojourns)])
    epochs[-1] = path.horizon
    masses = np.zeros(n_states)
    for j, x in enumerate(path.states):
        masses[x] += epochs[j + 1] - epochs[j]
    return DiscreteMeasure(masses, "occupation")


def smoothed_density_from_occupation(occ, kernel_values) -> np.ndarray:
    """``x -> sum_z occ(z) p_eps(z, x)``; works row-wise on 2-d input."""
    return np.asarray(occ) @ kernel_values


def smoothed_occupation_density(path: PathSample, spec: SpectralDecomposition, eps: float) -> np.ndarray:
    """Density of the eps-smoothed occupation measure w.r.t. m."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    occ = occupation_measure(path, spec.model.n).masses
    return smoothed_density_from_occupation(occ, heat_kernel(spec, eps).values)


def intersection_measure_smoothed(paths, specs, eps: float) -> DiscreteMeasure:
    """mass(x) = m(x) prod_i density_i(x)."""
    _require_survived(paths)
    m = specs[0].m
    dens = np.ones_like(m)
    for path, spec in zip(paths, specs):
        dens = dens * smoothed_occupation_density(path, spec, eps)
    return DiscreteMeasure(m * dens, "intersection")


def intersection_measure_exact(paths, m) -> DiscreteMeasure:
    """mass(x) = m(x)^(1-p) prod_i occupation_i({x})."""
    _require_survived(paths)
    m = np.asarray(m, dtype=float)
    prod = np.ones_like(m)
    for path in paths:
        prod = prod * occupation_measure(path, len(m)).masses
    return DiscreteMeasure(prod * m ** (1 - len(paths)), "intersection")


def exact_pairings(occs, m, f) -> np.ndarray:
    """<f, exact intersection measure> for every tuple in an ensemble."""
    m = np.asarray(m, dtype=float)
    prod = np.ones((occs[0].shape[0], len(m)))
    for o in occs:
        prod *= o / m
    return prod @ (np.asarray(f, dtype=float) * m)


def smoothed_pairings(occs, specs, eps, f) -> np.ndarray:
    """<f, eps-smoothed intersection measure> for every tuple in an ensemble."""
    m = specs[0].m
    prod = np.ones((occs[0].shape[0], len(m)))
    for o, s in zip(occs, specs):
        prod *= smoothed_density_from_occupation(o, heat_kernel(s, eps).values)
    return prod @ (np.asarray(f, dtype=float) * m)


def _mean_se(x):
    x = np.asarray(x, dtype=float)
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else 0.0


def joint_mean_se(values, attempts: int):
    """Mean and SE of ``X 1_{survival}`` when ``values`` holds X on the
    surviving tuples out of ``attempts`` draws (zeros elsewhere)."""
    v = np.asarray(values, dtype=float)
    mean = v.sum() / attempts
    second = (v**2).sum() / attempts
    var = max(second - mean**2, 0.0) * attempts / max(attempts - 1, 1)
    return float(mean), float(math.sqrt(var / attempts))


DEFAULT_EPS_GRID = tuple(2.0**-j for j in range(2, 13))


def mc_moment(models, x0s, f, t, k, n_exact, eps, n, seed, specs=None):
    """MC estimate of ``E[<f, l^IS>^n_exact <f, l^IS_eps>^(k-n_exact); survival]``."""
    specs = specs or [spectral_decompose(m) for m in models]
    ens = sample_surviving_occupations(models, x0s, t, n, seed, specs)
    m = specs[0].m
    a = exact_pairings(ens.occupations, m, f)
    b = smoothed_pairings(ens.occupations, specs, eps, f) if n_exact < k else 1.0
    return joint_mean_se(a**n_exact * b ** (k - n_exact), ens.attempts)


@dataclass
class DiagnosticRow:
    eps: float
    estimate: float
    se: float


def epsilon_convergence_diagnostic(models, x0s, f, t, k, eps_grid=DEFAULT_EPS_GRID, n=10**4, seed=0, specs=None):
    """Conditional moments ``E~|<f, l^IS_eps> - <f, l^IS>|^k`` along the grid.

    The same surviving tuples are reused for every eps.  Returns the rows
    and a summary with the monotonicity flag and the final-point test
    ``estimate <= 3 SE``.
    """
    if k > 4:
        raise ValueError("k <= 4")
    specs = specs or [spectral_decompose(m) for m in models]
    ens = sample_surviving_occupations(models, x0s, t, n, seed, specs)
    exact = exact_pairings(ens.occupations, specs[0].m, f)
    rows = []
    for eps in sorted(eps_grid, reverse=True):
        diff = np.abs(smoothed_pairings(ens.occupations, specs, eps, f) - exact) ** k
        rows.append(DiagnosticRow(eps, *_mean_se(diff)))
    est = [r.estimate for r in rows]
    summary = {
        "strictly_decreasing": bool(all(b < a for a, b in zip(est, est[1:]))),
        "final_estimate": est[-1],
        "final_within_3se_of_zero": bool(est[-1] <= 3 * rows[-1].se),
        "acceptance": ens.acceptance,
    }
    return rows, summary


def exp_approx_constant_estimate(models, x0s, f, t_grid, k_grid, eps_grid, n, seed, specs=None) -> dict:
    """``C_hat[(t, k, eps)] = (E[|<l^IS - l^IS_eps, f>|^k; survival] e^(-pt) (k!)^(-p))^(1/k)``."""
    if max(k_grid) > 3:
        raise ValueError("k <= 3")
    specs = specs or [spectral_decompose(m) for m in models]
    p = len(models)
    out = {}
    for ti, t in enumerate(t_grid):
        ens = sample_surviving_occupations(models, x0s, t, n, stream_seed(seed, ti), specs)
        exact = exact_pairings(ens.occupations, specs[0].m, f)
        for eps in eps_grid:
            diff = np.abs(exact - smoothed_pairings(ens.occupations, specs, eps, f))
            for k in k_grid:
                mom, _ = joint_mean_se(diff**k, ens.attempts)
                out[(t, k, eps)] = (mom * math.exp(-p * t) / math.factorial(k) ** p) ** (1.0 / k)
    return out


def stream_seed(seed: int, *keys: int) -> int:
    """Derive a 63-bit child seed from ``(seed, *keys)``."""
    return int(np.random.SeedSequence([int(seed), *keys]).generate_state(1, np.uint64)[0] >> 1)


# --- path dumps ---------------------------------------------------------------


def _varint(n: int) -> bytes:
    out = bytearray()
    while True:
        b = n & 0x7F
        n >>= 7
        if n:
            out.append(b | 0x80)
        else:
            out.append(b)
            return bytes(out)


def _read_varint(buf, pos):
    n = shift = 0
    while True:
        b = buf[pos]
        pos += 1
        n |= (b & 0x7F) << shift
        if not b & 0x80:
            return n, pos
        shift += 7


def dump_paths(paths, path) -> None:
    """Per path: varint count, varint survived flag, varint state ids, f64 sojourns,
    f64 horizon (little endian)."""
    with open(path, "wb") as fh:
        fh.write(_varint(len(paths)))
        for p in paths:
            fh.write(_varint(len(p.states)) + _varint(int(p.survived)))
            fh.write(b"".join(_varint(s) for s in p.states))
            fh.write(struct.pack(f"<{len(p.sojourns)}d", *p.sojourns))
            fh.write(struct.pack("<d", p.horizon))


def load_paths(path) -> list:
    with open(path, "rb") as fh:
        buf = fh.read()
    count, pos = _read_varint(buf, 0)
    out = []
    for _ in range(count):
        n, pos = _read_varint(buf, pos)
        surv, pos = _read_varint(buf, pos)
        states = []
        for _ in range(n):
            s, pos = _read_varint(buf, pos)
            states.append(s)
        soj = struct.unpack_from(f"<{n}d", buf, pos)
        pos += 8 * n
        (hor,) = struct.unpack_from("<d", buf, pos)
        pos += 8
        out.append(PathSample(tuple(states), tuple(soj), hor, bool(surv)))
    return out
