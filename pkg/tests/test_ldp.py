import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iml import ldp
from iml import model_zoo as z
from iml.errors import HeavyTailWarning, NonConvergence, NotProbability, SingularSmoother
from iml.space import dirichlet_energy, heat_kernel, spectral_decompose, survival_probability

from conftest import random_models


def ground_measure(spec):
    return spec.ground_state**2 * spec.m


def direct_objective(spec, psi, theta, h, p):
    """theta (sum psi^2p h m)^(1/p) - p E(psi, psi) + p lambda_1, straight from the definition."""
    return theta * float(np.sum(psi ** (2 * p) * h * spec.m)) ** (1 / p) - p * dirichlet_energy(spec.model, psi) + p * spec.lambda1


# --- rate functions -------------------------------------------------------------------


def test_J_vanishes_at_ground_measure(specs):
    for spec in specs.values():
        assert ldp.rate_J(spec, ground_measure(spec)) <= 1e-10


def test_conservative_uniform_measure(specs):
    for name in ["two-state", "three-state-conservative", "gasket-1", "torus-8"]:
        spec = specs[name]
        mu = spec.m / spec.m.sum()
        assert abs(ldp.rate_I(spec.model, mu)) <= 1e-12 and ldp.rate_J(spec, mu) <= 1e-12


@given(random_models(4, 4), st.integers(0, 2**32 - 1))
def test_rate_against_quadratic_form(mod, seed):
    spec = spectral_decompose(mod)
    mu = np.random.default_rng(seed).dirichlet(np.ones(4))
    psi = np.sqrt(mu / mod.m)
    form = -float(psi @ (mod.m[:, None] * mod.L) @ psi)
    assert math.isclose(ldp.rate_I(mod, mu), form, rel_tol=1e-10, abs_tol=1e-12)
    assert ldp.rate_J(spec, mu) >= 0
    assert math.isclose(ldp.rate_J(spec, mu), max(form - spec.lambda1, 0), rel_tol=1e-9, abs_tol=1e-10)


def test_not_probability(specs):
    spec = specs["birth-death-killed"]
    with pytest.raises(NotProbability):
        ldp.rate_I(spec.model, [0.5, 0.5, 0.1])
    with pytest.raises(NotProbability):
        ldp.rate_J(spec, [1.2, -0.2, 0.0])
    with pytest.raises(NotProbability):
        ldp.rate_I(spec.model, [0.5, 0.5])


def test_bold_J(specs):
    s = [specs["birth-death-killed"], specs["absorbing-3"]]
    rng = np.random.default_rng(1)
    mus = [rng.dirichlet(np.ones(3)) for _ in s]
    m = s[0].m
    mu = (mus[0] / m) * (mus[1] / m) * m
    val = ldp.rate_bold_J(s, mu, mus)
    assert math.isclose(val, ldp.rate_J(s[0], mus[0]) + ldp.rate_J(s[1], mus[1]), rel_tol=1e-14)
    bumped = mu.copy()
    bumped[1] += 1e-3
    assert ldp.rate_bold_J(s, bumped, mus) == math.inf
    g = specs["gasket-1"]
    gm = ground_measure(g)
    prod = (gm / g.m) ** 3 * g.m
    assert ldp.rate_bold_J([g] * 3, prod, [gm] * 3) <= 1e-9


def test_J_eps_examples(specs):
    spec = specs["birth-death-killed"]
    nu = heat_kernel(spec, 0.3).apply(ground_measure(spec) / spec.m) * spec.m
    assert ldp.rate_J_eps(spec, nu, 0.3) <= 1e-9
    # a point mass is not the smoothing of any measure
    assert ldp.rate_J_eps(spec, np.array([0.0, 0.0, 0.5]), 0.3) == math.inf
    with pytest.raises(ValueError):
        ldp.rate_J_eps(spec, nu, 0.0)
    with pytest.raises(SingularSmoother):
        ldp.rate_J_eps(specs["grid-1d"], np.full(8, 1.0), 5.0)


def test_J_eps_limit(specs):
    rng = np.random.default_rng(2)
    for name in ["two-state-killed", "birth-death-killed", "gasket-1"]:
        spec = specs[name]
        for _ in range(5):
            mu = rng.dirichlet(np.ones(spec.model.n))
            J = ldp.rate_J(spec, mu)
            gaps = []
            for j in range(2, 12):
                eps = 2.0**-j
                nu = heat_kernel(spec, eps).apply(mu / spec.m) * spec.m
                gaps.append(abs(ldp.rate_J_eps(spec, nu, eps) - J))
            assert max(gaps) <= 1e-6 * max(1, J)


# --- tilted eigenvalue ----------------------------------------------------------------------


def test_tilted_eigenvalue_shift(specs):
    for spec in specs.values():
        n = spec.model.n
        assert math.isclose(ldp.tilted_principal_eigenvalue(spec.model, np.zeros(n)), -spec.lambda1, abs_tol=1e-10)
        assert math.isclose(ldp.tilted_principal_eigenvalue(spec.model, np.full(n, 2.5)), 2.5 - spec.lambda1, abs_tol=1e-10)
    with pytest.raises(ValueError):
        ldp.tilted_principal_eigenvalue(specs["two-state"].model, [np.inf, 0])


@settings(max_examples=30)
@given(random_models(4, 4), st.integers(0, 2**32 - 1))
def test_tilted_eigenvalue_is_rayleigh_sup(mod, seed):
    spec = spectral_decompose(mod)
    V = np.random.default_rng(seed).uniform(-2, 2, 4)
    sup = ldp.linear_variational_sup(spec, V).value - spec.lambda1
    assert abs(ldp.tilted_principal_eigenvalue(mod, V) - sup) <= 1e-8


# --- variational N --------------------------------------------------------------------------


def test_theta_zero(specs):
    for spec in specs.values():
        res = ldp.variational_N(spec, 0.0, 0.0, np.ones(spec.model.n), 2)
        assert res.value == 0.0
        assert abs(float(np.sum(res.argmax_psi * spec.ground_state * spec.m))) >= 1 - 1e-8


def test_two_state_grid(specs):
    spec = specs["two-state-killed"]
    res = ldp.variational_N(spec, 1.0, 0.0, np.ones(2), 2)
    a = np.linspace(0, math.pi / 2, 10**4 + 1)
    grid = max(direct_objective(spec, np.array([math.cos(x), math.sin(x)]) / np.sqrt(spec.m), 1.0, np.ones(2), 2) for x in a)
    assert abs(res.value - grid) <= 1e-6 and res.value >= grid - 1e-12
    assert res.certificate is not None and abs(res.certificate) <= 1e-8


def test_result_invariants(specs):
    for name in ["two-state-killed", "birth-death-killed", "gasket-1", "torus-8", "absorbing-3"]:
        spec = specs[name]
        h = 1 + np.arange(spec.model.n)
        for p in (1, 2, 3):
            for eps in (0.0, 0.1):
                res = ldp.variational_N(spec, 1.3, eps, h, p)
                assert abs(float(np.sum(res.argmax_psi**2 * spec.m)) - 1) <= 1e-10
                if eps == 0:
                    assert math.isclose(direct_objective(spec, res.argmax_psi, 1.3, h, p), res.value, rel_tol=1e-9)
                ground = ldp._Objective(spec, 1.3, eps, h, p).value_grad(spec.ground_state * np.sqrt(spec.m))[0]
                assert res.value >= ground - 1e-12
                assert len(res.solver_trace) == 8


def test_certificates_small_models(specs):
    for name in ["two-state", "two-state-killed", "birth-death-killed", "absorbing-3", "gasket-0"]:
        spec = specs[name]
        for h in (np.ones(spec.model.n), 1 + np.arange(spec.model.n)):
            for p in (1, 2, 3):
                res = ldp.variational_N(spec, 2.0, 0.0, h, p, certify=True)
                assert abs(res.certificate) <= 1e-7, (name, p)


def test_monotone_convex_in_theta(specs):
    for name in ["birth-death-killed", "gasket-1"]:
        spec = specs[name]
        h = np.ones(spec.model.n)
        th = np.linspace(0, 2, 11)
        vals = np.array([ldp.variational_N(spec, t, 0.0, h, 2).value for t in th])
        assert np.all(np.diff(vals) >= -1e-10)
        assert np.all(vals[:-2] - 2 * vals[1:-1] + vals[2:] >= -1e-8)


@pytest.mark.parametrize("p", [1, 2, 3])
def test_h_scaling(specs, p):
    spec = specs["birth-death-killed"]
    h = np.array([0.5, 1.0, 2.0])
    for c in (0.25, 3.0):
        a = ldp.variational_N(spec, 1.0, 0.0, c * h, p).value
        b = ldp.variational_N(spec, c ** (1 / p), 0.0, h, p).value
        assert abs(a - b) <= 1e-10 * max(1, abs(a))


def test_eps_to_zero_limsup(specs):
    spec = specs["birth-death-killed"]
    h = np.ones(3)
    N0 = ldp.variational_N(spec, 1.0, 0.0, h, 2).value
    vals = [ldp.variational_N(spec, 1.0, 2.0**-j, h, 2).value for j in range(1, 13)]
    assert np.all(np.diff(vals) >= -1e-10)
    assert max(vals) <= N0 + 1e-9 and N0 - vals[-1] <= 1e-3


def test_continuity_in_theta(specs):
    # N is convex with slope at most ||h||^(1/p) (1/min m)^((p-1)/p), so the gap shrinks linearly
    for name in ["two-state-killed", "birth-death-killed", "gasket-1"]:
        spec = specs[name]
        h = np.ones(spec.model.n)
        p = 2
        lip = h.max() ** (1 / p) * (1 / spec.m.min()) ** ((p - 1) / p)
        base = ldp.variational_N(spec, 1.0, 0.0, h, p).value
        for d in (1e-4, 1e-6):
            gap = ldp.variational_N(spec, 1.0 + d, 0.0, h, p).value - base
            assert -1e-12 <= gap <= lip * d + 1e-12
        assert ldp.variational_N(spec, 1.0 + 1e-6, 0.0, h, p).value - base <= 1e-6


def test_errors(specs, monkeypatch):
    spec = specs["birth-death-killed"]
    with pytest.raises(ValueError):
        ldp.variational_N(spec, -1.0, 0.0, np.ones(3), 2)
    with pytest.raises(ValueError):
        ldp.variational_N(spec, 1.0, 0.0, -np.ones(3), 2)
    monkeypatch.setattr(ldp, "GRAD_TOL", 1e-40)
    with pytest.raises(NonConvergence):
        ldp.variational_N(spec, 1.0, 0.0, np.ones(3), 2)


def test_grid_search_bounds():
    spec = spectral_decompose(z.example_models()["gasket-1"])
    obj = ldp._Objective(spec, 1.0, 0.0, np.ones(6), 2)
    with pytest.raises(ValueError):
        ldp.grid_search(obj, 6)


# --- mgf right-hand side ----------------------------------------------------------------------


def test_mgf_rhs(specs):
    a, b = specs["birth-death-killed"], specs["absorbing-3"]
    h = np.array([1.0, 2.0, 1.0])
    assert ldp.mgf_rhs([a, b], 0.0, h, 2) == 0.0
    single = ldp.variational_N(a, 0.7, 0.0, h, 2).value
    assert math.isclose(ldp.mgf_rhs([a, a], 0.7, h, 2), single, rel_tol=1e-14)
    ra, rb = (ldp.variational_N(s, 0.7, 0.0, h, 2, certify=True) for s in (a, b))
    assert abs(ra.certificate) <= 1e-7 and abs(rb.certificate) <= 1e-7
    assert math.isclose(ldp.mgf_rhs([a, b], 0.7, h, 2), (ra.value + rb.value) / 2, rel_tol=1e-12)


# --- Varadhan -----------------------------------------------------------------------------------


def test_varadhan_examples(specs):
    spec = specs["birth-death-killed"]
    zero = ldp.occupation_varadhan_check(spec, np.ones(3), 0.0, 0.1)
    assert abs(zero.lhs) <= 1e-12 and zero.rhs == 0.0
    chk = ldp.occupation_varadhan_check(spec, np.array([1.0, 0.0, 0.0]), 0.5, 0.1)
    assert chk.gap <= 1e-7
    f = np.array([0.2, 1.0, -0.4])
    a = ldp.occupation_varadhan_check(spec, f, 0.8, 0.0).lhs
    b = ldp.occupation_varadhan_check(spec, f, 0.8, 1e-6).lhs
    assert abs(a - b) <= 1e-5


@settings(max_examples=25)
@given(random_models(2, 5), st.integers(0, 2**32 - 1), st.sampled_from([0.0, 0.05, 0.25, 1.0]))
def test_varadhan_random(mod, seed, eps):
    rng = np.random.default_rng(seed)
    spec = spectral_decompose(mod)
    chk = ldp.occupation_varadhan_check(spec, rng.uniform(-1, 1, mod.n), float(rng.uniform(0.1, 2)), eps)
    assert chk.gap <= 1e-7


def test_survival_rate_identity(specs):
    for name in ["two-state-killed", "birth-death-killed", "absorbing-3"]:
        spec = specs[name]
        for x in range(spec.model.n):
            assert abs(math.log(survival_probability(spec, x, 50.0)) / 50 + spec.lambda1) <= 0.05


# --- Monte Carlo slope --------------------------------------------------------------------------


def test_log_mean_exp_and_heavy_tail():
    x = np.array([1000.0, 1000.0, 999.0])
    val, w = ldp.log_mean_exp(x)
    assert math.isclose(val, 1000 + math.log((2 + math.exp(-1)) / 3), rel_tol=1e-15)
    assert ldp.heavy_tail(np.r_[np.ones(99), 1000.0])
    assert not ldp.heavy_tail(np.ones(100))


def test_mc_slope_theta_zero(zoo):
    mods = [zoo["birth-death-killed"]] * 2
    res = ldp.mc_log_mgf_slope(mods, 0.0, np.ones(3), 2, 0.0, (1.0, 2.0, 4.0), 500, seed=3)
    assert res.slope == 0.0 and res.rhs == 0.0 and not res.heavy_tail
    with pytest.raises(ValueError):
        ldp.mc_log_mgf_slope(mods, 0.5, np.ones(3), 2, 0.0, (2.0, 1.0, 4.0), 10, seed=3)


def test_mc_slope_single_process_matches_feynman_kac(zoo, specs):
    spec = specs["two-state-killed"]
    h = np.array([1.0, 0.0])
    theta, eps = 0.5, 0.1
    with warnings.catch_warnings():
        warnings.simplefilter("error", HeavyTailWarning)
        res = ldp.mc_log_mgf_slope([zoo["two-state-killed"]], theta, h, 1, eps, (4.0, 8.0, 16.0), 20000, seed=4, specs=[spec])
    lhs = ldp.occupation_varadhan_check(spec, h, theta, eps).lhs
    assert abs(res.slope - lhs) <= 3 * res.slope_se
    assert res.rhs_eps is not None and abs(res.rhs_eps - lhs) <= 1e-7


def test_mc_slope_deterministic(zoo):
    args = ([zoo["two-state"]] * 2, 0.5, np.ones(2), 2, 0.0, (1.0, 2.0, 3.0), 2000)
    a = ldp.mc_log_mgf_slope(*args, seed=5)
    b = ldp.mc_log_mgf_slope(*args, seed=5)
    assert a.values == b.values and a.slope == b.slope
