"""Example families as finite graphs, plus numerical checks of the standing
heat-kernel and resolvent assumptions.

Normalization used for refinement sequences: total mass ``m(E) = 1``
spread uniformly, graph diameter 1 in the attached metric, and rates scaled
so that one unit of time means the same thing at every level (``1/h**2`` on
lattices with mesh ``h``, ``RATE_SCALE * 5**level`` on the gasket).
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .errors import BadAlpha, BadDims, FlatWindowWarning, LevelTooLarge
from .space import (
    SpectralDecomposition,
    build_model,
    dirichlet_energy,
    heat_kernel,
    heat_trace,
    resolvent_kernel,
    spectral_decompose,
    truncated_resolvent_kernel,
)

GASKET_DF = math.log(3) / math.log(2)
GASKET_DW = math.log(5) / math.log(2)
GASKET_DS = 2 * GASKET_DF / GASKET_DW
# Conductance (5/3)^level per edge with vertex mass ~ (2/3) 3^-level gives
# rates ~ 1.5 * 5^level; the 1.5 is absorbed here.
RATE_SCALE = 1.5
MAX_GASKET_LEVEL = 8


def build_gasket_graph(level: int, rate_scale: float = RATE_SCALE):
    """Level-``level`` Sierpinski gasket graph.

    Vertices live on the triangular lattice of side ``2**-level``; every
    edge of a smallest triangle is an edge of the graph.
    """
    if level < 0:
        raise ValueError("level must be >= 0")
    if level > MAX_GASKET_LEVEL:
        raise LevelTooLarge(f"level {level} > {MAX_GASKET_LEVEL}")
    size = 2**level
    edges = set()

    def rec(a, b, s):
        if s == 1:
            tri = [(a, b), (a + 1, b), (a, b + 1)]
            for i in range(3):
                for j in range(i + 1, 3):
                    edges.add(tuple(sorted((tri[i], tri[j]))))
            return
        h = s // 2
        rec(a, b, h)
        rec(a + h, b, h)
        rec(a, b + h, h)

    rec(0, 0, size)
    verts = sorted({v for e in edges for v in e})
    idx = {v: i for i, v in enumerate(verts)}
    n = len(verts)
    rate = rate_scale * 5.0**level
    L = np.zeros((n, n))
    for u, v in edges:
        L[idx[u], idx[v]] = L[idx[v], idx[u]] = rate
    L -= np.diag(L.sum(axis=1))
    xy = np.array([(a + 0.5 * b, b * math.sqrt(3) / 2) for a, b in verts]) / size
    d = np.sqrt(((xy[:, None, :] - xy[None, :, :]) ** 2).sum(-1))
    d = 0.5 * (d + d.T)
    np.fill_diagonal(d, 0.0)
    return build_model(verts, np.full(n, 1.0 / n), L, d, f"gasket-{level}")


def build_grid(dims, boundary: str = "reflecting", normalize: bool = True):
    """Nearest-neighbour lattice on ``prod(dims)`` sites.

    With ``normalize`` the lattice sits in the unit cube (mesh ``h`` set by
    the longest side), rates are ``1/h**2`` and ``m`` is uniform with total
    mass 1.  Without it, rates and masses are all 1.  An absorbing boundary
    kills at rate ``rate`` per missing neighbour.
    """
    dims = tuple(int(d) for d in dims)
    if not 1 <= len(dims) <= 3 or any(d < 2 for d in dims):
        raise BadDims(f"bad dims {dims}")
    if boundary not in ("reflecting", "absorbing"):
        raise ValueError("boundary must be 'reflecting' or 'absorbing'")
    h = 1.0 / (max(dims) - 1)
    rate = 1.0 / h**2 if normalize else 1.0
    sites = list(product(*(range(d) for d in dims)))
    idx = {s: i for i, s in enumerate(sites)}
    n = len(sites)
    L = np.zeros((n, n))
    kill = np.zeros(n)
    for s in sites:
        i = idx[s]
        for ax in range(len(dims)):
            for step in (-1, 1):
                nb = list(s)
                nb[ax] += step
                nb = tuple(nb)
                if nb in idx:
                    L[i, idx[nb]] = rate
                elif boundary == "absorbing":
                    kill[i] += rate
    L -= np.diag(L.sum(axis=1) + kill)
    pos = np.array(sites, dtype=float) * (h if normalize else 1.0)
    d = np.sqrt(((pos[:, None, :] - pos[None, :, :]) ** 2).sum(-1))
    m = np.full(n, 1.0 / n) if normalize else np.ones(n)
    return build_model(sites, m, L, d, f"grid-{'x'.join(map(str, dims))}-{boundary}")


def build_long_range_torus(n: int, alpha: float, scale: float = 1.0):
    """Cycle of ``n`` sites with jump rates ``scale * m(y) / d(x, y)**(1 + alpha)``.

    ``d`` is arc length on a circle of circumference 1 and ``m = 1/n``.
    """
    if n < 4:
        raise ValueError("n must be >= 4")
    if not 0 < alpha < 2:
        raise BadAlpha(f"alpha={alpha} outside (0, 2)")
    k = np.arange(n)
    gap = np.abs(k[:, None] - k[None, :])
    d = np.minimum(gap, n - gap) / n
    with np.errstate(divide="ignore"):
        L = np.where(gap > 0, scale / n / d ** (1 + alpha), 0.0)
    L -= np.diag(L.sum(axis=1))
    return build_model(list(range(n)), np.full(n, 1.0 / n), L, d, f"torus-{n}-a{alpha:g}")


# --- fits ------------------------------------------------------------------


@dataclass
class PowerFit:
    exponent: float
    prefactor: float
    residual: float
    window: tuple
    flat: bool = False


def _loglog_fit(t, y, window, n_samples):
    lt, ly = np.log(t), np.log(y)
    slope, icpt = np.polyfit(lt, ly, 1)
    resid = float(np.abs(ly - (slope * lt + icpt)).max())
    return slope, icpt, resid


def _window_times(window, n_samples):
    lo, hi = window
    if not 0 < lo < hi:
        raise ValueError("window must satisfy 0 < t_min < t_max")
    if n_samples < 8:
        raise ValueError("need at least 8 sample points")
    return np.geomspace(lo, hi, n_samples)


def lattice_cutoff(mesh: float, d_w: float) -> float:
    """Smallest time where continuum scaling is expected: ``mesh**d_w``."""
    return mesh**d_w


def fit_trace_exponent(spec: SpectralDecomposition, t_window, n_samples: int = 16) -> PowerFit:
    """Fit ``sum_x p_t(x,x) m(x) ~ C t^(-rho/2)``; ``exponent`` is rho."""
    t = _window_times(t_window, n_samples)
    slope, icpt, resid = _loglog_fit(t, heat_trace(spec, t), t_window, n_samples)
    return _finish(-2 * slope, icpt, resid, t_window)


def fit_ultracontractivity(spec: SpectralDecomposition, t_window, n_samples: int = 16) -> PowerFit:
    """Fit ``max_{x,y} p_t(x,y) ~ C t^(-mu/2)``; ``exponent`` is mu."""
    t = _window_times(t_window, n_samples)
    y = np.array([heat_kernel(spec, s).values.max() for s in t])
    slope, icpt, resid = _loglog_fit(t, y, t_window, n_samples)
    return _finish(-2 * slope, icpt, resid, t_window)


def _finish(exponent, icpt, resid, window):
    flat = abs(exponent) < 0.05
    if flat:
        warnings.warn(f"flat log-log slope on window {window}", FlatWindowWarning)
    return PowerFit(float(exponent), float(math.exp(icpt)), resid, tuple(window), flat)


@dataclass
class ExponentFit:
    d_f_hat: float
    d_w_hat: float
    d_s_hat: float
    constants: dict
    window: dict
    residual: float


def fit_volume_exponent(model, r_window, n_samples: int = 12) -> PowerFit:
    """Fit ``m(B(x, r)) ~ c r^d_f`` using the mean over centres."""
    r = _window_times(r_window, n_samples)
    d = model.metric
    vol = np.array([(model.m[None, :] * (d <= s)).sum(axis=1).mean() for s in r])
    slope, icpt, resid = _loglog_fit(r, vol, r_window, n_samples)
    return PowerFit(float(slope), float(math.exp(icpt)), resid, tuple(r_window))


def fit_exponents(spec: SpectralDecomposition, r_window, t_window) -> ExponentFit:
    """Volume-growth and trace fits combined through ``d_s = 2 d_f / d_w``."""
    vol = fit_volume_exponent(spec.model, r_window)
    tr = fit_trace_exponent(spec, t_window)
    d_s = tr.exponent
    d_w = 2 * vol.exponent / d_s
    return ExponentFit(
        d_f_hat=vol.exponent,
        d_w_hat=d_w,
        d_s_hat=2 * vol.exponent / d_w,
        constants={"volume": vol.prefactor, "trace": tr.prefactor},
        window={"r": tuple(r_window), "t": tuple(t_window)},
        residual=max(vol.residual, tr.residual),
    )


# --- assumption checks -------------------------------------------------------


@dataclass
class AssumptionReport:
    p_exponent: float
    green_sup: float | None = None
    green_delta_curve: list = field(default_factory=list)
    trace_fit: PowerFit | None = None
    ultracontractivity_fit: PowerFit | None = None
    tightness_profile: list = field(default_factory=list)

    def to_dict(self) -> dict:
        def fit(f):
            return None if f is None else {
                "exponent": f.exponent, "prefactor": f.prefactor,
                "residual": f.residual, "window": list(f.window), "flat": f.flat,
            }
        return {
            "p_exponent": self.p_exponent,
            "green_sup": self.green_sup,
            "green_delta_curve": [list(x) for x in self.green_delta_curve],
            "trace_fit": fit(self.trace_fit),
            "ultracontractivity_fit": fit(self.ultracontractivity_fit),
            "tightness_profile": [list(x) for x in self.tightness_profile],
        }


DEFAULT_DELTAS = tuple(2.0**-j for j in range(0, 21, 2))


def green_sup(kernel, p) -> float:
    """sup_x sum_y k(x, y)^p m(y)."""
    return float(((kernel.values**p) * kernel.m[None, :]).sum(axis=1).max())


def check_green_conditions(spec: SpectralDecomposition, p: float, deltas=DEFAULT_DELTAS) -> AssumptionReport:
    deltas = sorted(deltas, reverse=True)
    curve = [(d, green_sup(truncated_resolvent_kernel(spec, d), p)) for d in deltas]
    return AssumptionReport(p, green_sup(resolvent_kernel(spec), p), curve)


def check_tightness(spec: SpectralDecomposition, exhaustion) -> list:
    """For each nested K: (kept-mass fraction, sup_x R_1 1_{K^c}(x))."""
    R = resolvent_kernel(spec)
    m = spec.m
    prev = set()
    out = []
    for K in exhaustion:
        K = {spec.model.index(s) for s in K}
        if not prev <= K:
            raise ValueError("exhaustion must be nested")
        prev = K
        outside = np.ones(len(m))
        outside[list(K)] = 0.0
        out.append((float(m[list(K)].sum() / m.sum()) if K else 0.0, float(R.apply(outside).max())))
    return out


def default_window(spec: SpectralDecomposition):
    """``(1/lambda_max, 0.1/gap)``: above the lattice scale, below the global
    relaxation time.  None when that range is empty (tiny models)."""
    lam = spec.eigenvalues
    if len(lam) < 2:
        return None
    lo, hi = 1.0 / lam[-1], 0.1 / (lam[1] - lam[0])
    return (lo, hi) if hi > 2 * lo else None


def assumption_report(spec: SpectralDecomposition, p: float, t_window=None, exhaustion=None) -> AssumptionReport:
    """Green-function sups, power-law fits on ``t_window`` (see
    :func:`default_window`) and a tightness profile."""
    rep = check_green_conditions(spec, p)
    t_window = t_window or default_window(spec)
    if t_window is not None:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", FlatWindowWarning)
            rep.trace_fit = fit_trace_exponent(spec, t_window)
            rep.ultracontractivity_fit = fit_ultracontractivity(spec, t_window)
    if exhaustion is None:
        order = np.argsort(-spec.ground_state)
        exhaustion = [order[: j].tolist() for j in range(0, spec.model.n + 1, max(1, spec.model.n // 4))]
        if len(exhaustion[-1]) != spec.model.n:
            exhaustion.append(order.tolist())
    rep.tightness_profile = check_tightness(spec, exhaustion)
    return rep


def admissible_p(d_f: float, d_w: float) -> float:
    """Supremum of p with ``d_f - p (d_f - d_w) > 0``; ``inf`` if unbounded."""
    if d_f < 1 or d_w < 2:
        raise ValueError("need d_f >= 1 and d_w >= 2")
    if d_f > d_w:
        return d_f / (d_f - d_w)
    return math.inf


# --- functional inequalities ------------------------------------------------


def _lp_norm(f, m, p):
    return float((np.abs(f) ** p * m).sum() ** (1.0 / p))


def sobolev_constant(spec: SpectralDecomposition, p: float, delta: float, n_trials: int = 200, seed: int = 0) -> float:
    """Smallest C with ``||f||_{2p}^2 <= C ||f||_2^2 + delta E(f, f)`` on random f."""
    rng = np.random.default_rng(seed)
    model = spec.model
    best = 0.0
    for _ in range(n_trials):
        f = rng.standard_normal(model.n)
        if rng.random() < 0.5:
            f = f * (rng.random(model.n) < 0.3)
        n2 = _lp_norm(f, model.m, 2) ** 2
        if n2 == 0:
            continue
        c = (_lp_norm(f, model.m, 2 * p) ** 2 - delta * dirichlet_energy(model, f)) / n2
        best = max(best, c)
    return best


def eigenfunction_growth_constant(spec: SpectralDecomposition, rho: float, n_start: int = 2, weyl_power=None) -> float:
    """Smallest C with ``||psi_n||_inf <= C lambda_n^(rho/2)`` and
    ``C^-1 n^a <= lambda_n <= C n^a`` for all n >= n_start.

    ``a`` defaults to ``2/rho`` (Weyl scaling for trace ~ t^(-rho/2)).
    """
    a = 2.0 / rho if weyl_power is None else weyl_power
    lam = spec.eigenvalues
    n = np.arange(1, len(lam) + 1)
    sel = n >= n_start
    lam, n = lam[sel], n[sel]
    sup = np.abs(spec.eigenfunctions[:, sel]).max(axis=0)
    c1 = (sup / lam ** (rho / 2)).max()
    ratio = lam / n**a
    return float(max(c1, ratio.max(), (1 / ratio).max()))


def gaussian_bound_constant(spec: SpectralDecomposition, d_f, d_w, times, decay: float) -> float:
    """Smallest c with p_t(x,y) <= c t^(-d_f/d_w) exp(-decay (d^d_w / t)^(1/(d_w-1)))."""
    d = spec.model.metric
    best = 0.0
    for t in times:
        env = t ** (-d_f / d_w) * np.exp(-decay * (d**d_w / t) ** (1 / (d_w - 1)))
        best = max(best, float((heat_kernel(spec, t).values / env).max()))
    return best


def jump_bound_constant(spec: SpectralDecomposition, d_f, d_w, times) -> float:
    """Smallest c with p_t(x,y) <= c min(t^(-d_f/d_w), t / d^(d_f+d_w))."""
    d = spec.model.metric
    best = 0.0
    for t in times:
        with np.errstate(divide="ignore"):
            far = np.where(d > 0, t / d ** (d_f + d_w), np.inf)
        env = np.minimum(t ** (-d_f / d_w), far)
        best = max(best, float((heat_kernel(spec, t).values / env).max()))
    return best


# --- named example models --------------------------------------------------


def two_state_killed(kappa: float = 0.5):
    """Unit-rate 2-state chain, m = (1, 1), killing ``kappa`` at state 1."""
    return build_model([0, 1], [1.0, 1.0], [[-1.0, 1.0], [1.0, -1.0 - kappa]], label="two-state-killed")


def birth_death_killed(kappa: float = 0.5):
    """3-state path with unit rates, m = (1, 1, 1), killing ``kappa`` at the last state."""
    L = [[-1.0, 1.0, 0.0], [1.0, -2.0, 1.0], [0.0, 1.0, -1.0 - kappa]]
    return build_model([0, 1, 2], [1.0, 1.0, 1.0], L, label="birth-death-killed")


def three_state_conservative():
    """3-state path, uniform mass 1/3, symmetric unit rates."""
    L = [[-1.0, 1.0, 0.0], [1.0, -2.0, 1.0], [0.0, 1.0, -1.0]]
    return build_model([0, 1, 2], [1 / 3] * 3, L, label="three-state-conservative")


def random_model(rng, n: int, kill_prob: float = 0.5):
    """Random connected m-symmetric chain: a spanning path plus random extra
    edges, conductances and masses in [0.5, 2], optional killing."""
    m = rng.uniform(0.5, 2.0, n)
    C = np.zeros((n, n))
    for x in range(n - 1):
        C[x, x + 1] = rng.uniform(0.5, 2.0)
    extra = np.triu(rng.random((n, n)) < 0.4, 2)
    C[extra] = rng.uniform(0.5, 2.0, extra.sum())
    C = C + C.T
    L = C / m[:, None]
    kill = np.where(rng.random(n) < kill_prob, rng.uniform(0.1, 1.0, n), 0.0)
    L -= np.diag(L.sum(axis=1) + kill)
    return build_model(list(range(n)), m, L, label=f"random-{n}")


def example_models() -> dict:
    """Small catalogue used by the checks and demos."""
    return {
        "two-state": build_model([0, 1], [1.0, 1.0], [[-1.0, 1.0], [1.0, -1.0]], label="two-state"),
        "two-state-killed": two_state_killed(),
        "birth-death-killed": birth_death_killed(),
        "three-state-conservative": three_state_conservative(),
        "absorbing-3": build_grid((3,), "absorbing", normalize=False),
        "gasket-0": build_gasket_graph(0),
        "gasket-1": build_gasket_graph(1),
        "grid-1d": build_grid((8,)),
        "torus-8": build_long_range_torus(8, 1.0),
    }


def killed_models() -> dict:
    return {k: v for k, v in example_models().items() if not v.is_conservative}


def spectra(models: dict) -> dict:
    return {k: spectral_decompose(v) for k, v in models.items()}
