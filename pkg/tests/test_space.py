import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate
from scipy.linalg import expm

from iml.errors import Disconnected, NegativeRate, SymmetryViolation
from iml.space import (build_model, dirichlet_energy, heat_kernel, heat_trace, load_model, model_from_dict,
                       resolvent_kernel, save_model, spectral_decompose, survival_probability,
                       truncated_resolvent_kernel)

from conftest import random_models

TWO = dict(states=[0, 1], m=[1.0, 1.0], L=[[-1.0, 1.0], [1.0, -1.0]])


def test_two_state_conservative_model():
    mod = build_model(**TWO)
    assert mod.is_conservative
    assert mod.n == 2


def test_weighted_two_state_is_symmetric():
    mod = build_model([0, 1], [1.0, 2.0], [[-2.0, 2.0], [1.0, -1.0]])
    assert np.allclose(mod.conductances, mod.conductances.T)


def test_detailed_balance_violation():
    with pytest.raises(SymmetryViolation):
        build_model([0, 1], [1.0, 1.0], [[-1.0, 2.0], [1.0, -1.0]])


def test_negative_rate_and_positive_row_sum():
    with pytest.raises(NegativeRate):
        build_model([0, 1], [1.0, 1.0], [[1.0, -1.0], [-1.0, 1.0]])
    with pytest.raises(NegativeRate):
        build_model([0, 1], [1.0, 1.0], [[-1.0, 1.0], [1.0, -0.5]])


def test_disconnected():
    L = np.zeros((3, 3))
    L[0, 1] = L[1, 0] = 1.0
    L -= np.diag(L.sum(1))
    with pytest.raises(Disconnected):
        build_model([0, 1, 2], [1.0] * 3, L)


def test_bad_metric_rejected():
    with pytest.raises(ValueError):
        build_model(**TWO, metric=[[0.0, 1.0], [2.0, 0.0]])


def test_nonpositive_mass_rejected():
    with pytest.raises(ValueError):
        build_model([0, 1], [1.0, 0.0], TWO["L"])


def test_two_state_spectrum():
    spec = spectral_decompose(build_model(**TWO))
    assert np.allclose(spec.eigenvalues, [0.0, 2.0], atol=1e-12)
    assert np.allclose(spec.ground_state, [1 / math.sqrt(2)] * 2)


@given(random_models(kill_prob=0.0))
def test_conservative_ground_state_is_constant(mod):
    spec = spectral_decompose(mod)
    assert spec.lambda1 == 0.0
    assert np.allclose(spec.ground_state, 1 / math.sqrt(mod.m.sum()), atol=1e-10)


@given(random_models())
def test_spectral_invariants(mod):
    spec = spectral_decompose(mod)
    psi, m = spec.eigenfunctions, spec.m
    assert np.allclose(psi.T @ (psi * m[:, None]), np.eye(mod.n), atol=1e-10)
    resid = -mod.L @ psi - psi * spec.eigenvalues[None, :]
    assert np.abs(resid).max() <= 1e-9 * max(1.0, spec.eigenvalues.max())
    assert np.all(np.diff(spec.eigenvalues) >= 0)
    assert spec.lambda1 >= 0
    assert (spec.lambda1 == 0) == mod.is_conservative


def test_uniform_killing_shifts_spectrum():
    L = np.array([[-1.0, 1.0, 0.0], [1.0, -2.0, 1.0], [0.0, 1.0, -1.0]])
    kappa = 0.7
    a = spectral_decompose(build_model([0, 1, 2], [1.0] * 3, L))
    b = spectral_decompose(build_model([0, 1, 2], [1.0] * 3, L - kappa * np.eye(3)))
    assert np.allclose(b.eigenvalues, a.eigenvalues + kappa, atol=1e-12)
    t = 0.9
    assert np.allclose(heat_kernel(b, t).values, math.exp(-kappa * t) * heat_kernel(a, t).values, atol=1e-12)


def test_heat_kernel_at_zero_and_infinity(specs):
    spec = specs["three-state-conservative"]
    assert np.allclose(heat_kernel(spec, 0.0).values, np.diag(1 / spec.m), atol=1e-12)
    assert np.allclose(heat_kernel(spec, 200.0).values, 1 / spec.m.sum(), atol=1e-12)


@pytest.mark.parametrize("name", ["two-state", "two-state-killed", "birth-death-killed", "gasket-1"])
def test_heat_kernel_matches_expm(specs, name):
    spec = specs[name]
    assert np.allclose(heat_kernel(spec, 1.0).matrix, expm(spec.model.L), atol=1e-12)


def test_negative_time_rejected(specs):
    with pytest.raises(ValueError):
        heat_kernel(specs["two-state"], -1.0)


def test_resolvent_limits(specs):
    spec = specs["birth-death-killed"]
    R = resolvent_kernel(spec).values
    assert np.allclose(truncated_resolvent_kernel(spec, 60.0).values, R, atol=1e-14)
    assert np.abs(truncated_resolvent_kernel(spec, 1e-9).values).max() < 1e-8
    with pytest.raises(ValueError):
        truncated_resolvent_kernel(spec, 0.0)


def test_resolvent_quadrature(specs):
    spec = specs["two-state"]
    R = resolvent_kernel(spec).values
    for x in range(2):
        for y in range(2):
            q = integrate.quad(lambda t: math.exp(-t) * expm(t * spec.model.L)[x, y] / spec.m[y], 0, np.inf,
                               epsabs=1e-13, epsrel=1e-12)[0]
            assert abs(q - R[x, y]) <= 1e-8


def test_dirichlet_energy_examples(specs):
    spec = specs["three-state-conservative"]
    assert dirichlet_energy(spec.model, np.ones(3)) == 0.0
    for n in range(3):
        assert math.isclose(dirichlet_energy(spec.model, spec.eigenfunctions[:, n]), spec.eigenvalues[n],
                            abs_tol=1e-12)


@given(random_models(4, 4), st.integers(0, 2**31))
def test_dirichlet_energy_quadratic_form(mod, seed):
    f = np.random.default_rng(seed).standard_normal(4)
    c = mod.conductances
    direct = 0.5 * (c * (f[:, None] - f[None, :]) ** 2).sum() + (mod.killing * f**2 * mod.m).sum()
    assert math.isclose(dirichlet_energy(mod, f), direct, rel_tol=1e-10, abs_tol=1e-12)
    spec = spectral_decompose(mod)
    assert math.isclose(dirichlet_energy(mod, f), float((spec.eigenvalues * spec.coefficients(f) ** 2).sum()),
                        rel_tol=1e-9, abs_tol=1e-12)


def test_survival(specs):
    assert survival_probability(specs["two-state"], 0, 5.0) == pytest.approx(1.0, abs=1e-14)
    spec = specs["birth-death-killed"]
    for t in (0.5, 2.0, 7.0):
        direct = expm(t * spec.model.L) @ np.ones(3)
        for x in range(3):
            assert survival_probability(spec, x, t) == pytest.approx(direct[x], abs=1e-12)
    rates = [-math.log(survival_probability(spec, 0, t)) / t for t in (10, 50, 200)]
    assert abs(rates[-1] - spec.lambda1) < abs(rates[0] - spec.lambda1)


@given(random_models(), st.floats(0.01, 2), st.floats(0.01, 2))
def test_semigroup_property(mod, s, t):
    spec = spectral_decompose(mod)
    assert np.abs(spec.semigroup(s + t) - spec.semigroup(s) @ spec.semigroup(t)).max() <= 1e-8


@given(random_models(), st.floats(0.0, 3), st.integers(0, 2**31))
def test_markov_property_and_symmetry(mod, t, seed):
    spec = spectral_decompose(mod)
    f = np.random.default_rng(seed).random(mod.n)
    Tf = spec.semigroup(t) @ f
    assert np.all(Tf >= -1e-12) and np.all(Tf <= 1 + 1e-12)
    p = heat_kernel(spec, t).values
    R = resolvent_kernel(spec).values
    assert np.abs(p - p.T).max() <= 1e-12 and np.abs(R - R.T).max() <= 1e-12


@given(random_models(), st.floats(0.0, 5))
def test_trace_identity(mod, t):
    spec = spectral_decompose(mod)
    p = heat_kernel(spec, t).values
    assert abs((np.diag(p) * spec.m).sum() - float(heat_trace(spec, t))) <= 1e-10 * mod.n


@given(random_models())
def test_model_json_round_trip(tmp_path_factory, mod):
    path = tmp_path_factory.mktemp("m") / "model.json"
    save_model(mod, path)
    back = load_model(path)
    assert back.states == mod.states and back.label == mod.label
    assert np.array_equal(back.m, mod.m) and np.array_equal(back.L, mod.L)
    assert json.dumps(back.to_dict()) == json.dumps(mod.to_dict())


def test_tuple_labels_round_trip(zoo):
    mod = zoo["gasket-1"]
    back = model_from_dict(json.loads(json.dumps(mod.to_dict())))
    assert back.states == mod.states
    assert np.array_equal(back.metric, mod.metric)
