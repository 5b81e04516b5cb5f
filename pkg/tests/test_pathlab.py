import math

import numpy as np
import pytest
from scipy.linalg import expm

from iml import moments as mo
from iml import pathlab as pl
from iml.errors import AcceptanceTooLow, PathKilled
from iml.space import build_model, spectral_decompose, survival_probability


def path(states, sojourns, survived=True):
    return pl.PathSample(tuple(states), tuple(sojourns), float(sum(sojourns)), survived)


def test_conservative_paths_always_survive(zoo):
    rng = pl.stream_rng(1)
    for name in ["two-state", "gasket-1", "torus-8"]:
        for _ in range(200):
            p = pl.sample_path(zoo[name], 0, 3.0, rng)
            assert p.survived and math.isclose(sum(p.sojourns), 3.0, rel_tol=1e-12)
            assert all(a != b for a, b in zip(p.states, p.states[1:]))


def test_pure_killing_survival():
    kappa, t, n = 0.7, 1.3, 10**5
    mod = build_model([0], [1.0], [[-kappa]])
    rng = pl.stream_rng(2)
    surv = np.array([pl.sample_path(mod, 0, t, rng).survived for _ in range(n)], dtype=float)
    exact = math.exp(-kappa * t)
    assert abs(surv.mean() - exact) <= 3 * math.sqrt(exact * (1 - exact) / n)


def test_killed_chain_survival_scalar_and_vectorized(zoo, specs):
    mod, t, n = zoo["birth-death-killed"], 2.0, 10**5
    exact = survival_probability(specs["birth-death-killed"], 0, t)
    assert math.isclose(exact, expm(mod.L * t).sum(axis=1)[0], rel_tol=1e-10)
    se = math.sqrt(exact * (1 - exact) / n)
    rng = pl.stream_rng(3)
    scalar = np.mean([pl.sample_path(mod, 0, t, rng).survived for _ in range(n)])
    assert abs(scalar - exact) <= 3 * se
    _, alive = pl.simulate_occupations(mod, 0, t, n, pl.stream_rng(4))
    assert abs(alive.mean() - exact) <= 3 * se


def test_surviving_tuple_acceptance(zoo, specs):
    names = ["two-state-killed", "birth-death-killed"]
    res = pl.sample_surviving_tuple([zoo[k] for k in names], [0, 1], 1.0, 4000, seed=5)
    exact = math.prod(survival_probability(specs[k], x, 1.0) for k, x in zip(names, [0, 1]))
    assert abs(res.acceptance - exact) <= 3 * math.sqrt(exact * (1 - exact) / res.attempts)
    assert all(p.survived for tup in res.tuples for p in tup)
    ens = pl.sample_surviving_occupations([zoo[k] for k in names], [0, 1], 1.0, 20000, seed=5)
    assert abs(ens.acceptance - exact) <= 3 * math.sqrt(exact * (1 - exact) / ens.attempts)


def test_conservative_acceptance_is_one(zoo):
    res = pl.sample_surviving_tuple([zoo["two-state"], zoo["gasket-0"]], [0, 0], 2.0, 50, seed=6)
    assert res.acceptance == 1.0
    assert pl.sample_surviving_occupations([zoo["two-state"]] * 2, [0, 0], 2.0, 500, seed=6).acceptance == 1.0


def test_acceptance_too_low(zoo):
    with pytest.raises(AcceptanceTooLow):
        pl.sample_surviving_tuple([zoo["absorbing-3"]] * 3, [0, 0, 0], 30.0, 10, seed=0)
    with pytest.raises(AcceptanceTooLow):
        pl.sample_surviving_occupations([zoo["absorbing-3"]] * 3, [0, 0, 0], 30.0, 10, seed=0)


def test_tuple_independence(zoo):
    ens = pl.sample_surviving_occupations([zoo["two-state-killed"], zoo["two-state-killed"]], [0, 0], 1.0, 20000, seed=7)
    a, b = ens.occupations[0][:, 0], ens.occupations[1][:, 0]
    r = np.corrcoef(a, b)[0, 1]
    assert abs(r) <= 3 / math.sqrt(ens.n)


def test_occupation_measure_examples():
    still = path([2], [1.5])
    assert np.array_equal(pl.occupation_measure(still, 3).masses, [0, 0, 1.5])
    eq = pl.occupation_measure(path([0, 1], [0.5, 0.5]), 2).masses
    assert eq[0] == eq[1] == 0.5
    with pytest.raises(PathKilled):
        pl.occupation_measure(path([0], [0.2], survived=False), 2)


def test_occupation_two_implementations(zoo):
    rng = pl.stream_rng(8)
    for name in ["gasket-1", "torus-8", "birth-death-killed"]:
        for _ in range(100):
            p = pl.sample_path(zoo[name], 0, 2.5, rng)
            if not p.survived:
                continue
            a = pl.occupation_measure(p, zoo[name].n).masses
            b = pl.occupation_measure_sweep(p, zoo[name].n).masses
            direct = np.zeros(zoo[name].n)
            for s, d in zip(p.states, p.sojourns):
                direct[s] += d
            assert np.abs(a - b).max() <= 1e-12 and np.abs(a - direct).max() <= 1e-15
            assert math.isclose(a.sum(), 2.5, rel_tol=1e-12)


def test_smoothed_density_limits(zoo, specs):
    spec = specs["gasket-1"]
    p = pl.sample_path(zoo["gasket-1"], 0, 2.0, pl.stream_rng(9))
    dens = pl.smoothed_occupation_density(p, spec, 200.0)
    assert np.allclose(dens, 2.0 / spec.m.sum(), rtol=1e-9)
    occ = pl.occupation_measure(p, 6).masses
    errs = [np.abs(pl.smoothed_occupation_density(p, spec, 2.0**-j) - occ / spec.m).max() for j in range(4, 16)]
    assert np.all(np.diff(errs) < 0) and errs[-1] < 1e-2
    with pytest.raises(ValueError):
        pl.smoothed_occupation_density(p, spec, 0.0)


def test_smoothed_mass_substochastic(zoo, specs):
    rng = pl.stream_rng(10)
    for name in ["two-state", "two-state-killed", "absorbing-3", "torus-8"]:
        spec = specs[name]
        for _ in range(20):
            p = pl.sample_path(zoo[name], 0, 1.0, rng)
            if not p.survived:
                continue
            tot = pl.smoothed_occupation_density(p, spec, 0.3) @ spec.m
            if zoo[name].killing.any():
                assert tot < 1.0
            else:
                assert math.isclose(tot, 1.0, rel_tol=1e-12)


def test_intersection_p1_and_nonnegative(zoo, specs):
    spec = specs["birth-death-killed"]
    rng = pl.stream_rng(11)
    p = pl.sample_path(zoo["two-state"], 0, 1.0, rng)
    s2 = specs["two-state"]
    assert np.allclose(pl.intersection_measure_smoothed([p], [s2], 0.2).masses,
                       s2.m * pl.smoothed_occupation_density(p, s2, 0.2))
    assert np.array_equal(pl.intersection_measure_exact([p], s2.m).masses, pl.occupation_measure(p, 2).masses)
    tup = pl.sample_surviving_tuple([zoo["birth-death-killed"]] * 3, [0, 1, 2], 1.0, 20, seed=12).tuples
    for paths in tup:
        assert pl.intersection_measure_smoothed(paths, [spec] * 3, 0.1).masses.min() >= 0


def test_intersection_hand_computed_two_state(specs):
    spec = specs["two-state"]
    a, b, t, eps = 0.3, 0.8, 1.0, 0.25
    p1, p2 = path([0, 1], [a, t - a]), path([1, 0], [b, t - b])
    same, diff = (1 + math.exp(-2 * eps)) / 2, (1 - math.exp(-2 * eps)) / 2
    d1 = np.array([a * same + (t - a) * diff, a * diff + (t - a) * same])
    d2 = np.array([b * diff + (t - b) * same, b * same + (t - b) * diff])
    got = pl.intersection_measure_smoothed([p1, p2], [spec, spec], eps).masses
    assert np.allclose(got, d1 * d2, atol=1e-14)


def test_intersection_disjoint_supports():
    m = np.ones(3)
    assert not pl.intersection_measure_exact([path([0], [1.0]), path([2], [1.0])], m).masses.any()


def test_exact_is_eps_limit(zoo, specs):
    names = ["birth-death-killed", "birth-death-killed"]
    tup = pl.sample_surviving_tuple([zoo[k] for k in names], [0, 2], 1.0, 10, seed=13).tuples
    spec = specs[names[0]]
    for paths in tup:
        vals = [pl.intersection_measure_smoothed(paths, [spec] * 2, 2.0**-j).masses for j in (10, 11, 12)]
        # Richardson on the last three grid points (error is a power series in eps)
        r1 = [2 * vals[i + 1] - vals[i] for i in range(2)]
        extrap = (4 * r1[1] - r1[0]) / 3
        assert np.abs(extrap - pl.intersection_measure_exact(paths, spec.m).masses).max() <= 1e-6


def test_pairing_helpers_match_measures(zoo, specs):
    spec = specs["birth-death-killed"]
    ens_paths = pl.sample_surviving_tuple([zoo["birth-death-killed"]] * 2, [0, 1], 1.0, 30, seed=14).tuples
    occs = [np.array([pl.occupation_measure(tp[i], 3).masses for tp in ens_paths]) for i in range(2)]
    f = np.array([1.0, -2.0, 0.5])
    ex = pl.exact_pairings(occs, spec.m, f)
    sm = pl.smoothed_pairings(occs, [spec] * 2, 0.3, f)
    for j, tp in enumerate(ens_paths):
        assert math.isclose(ex[j], pl.intersection_measure_exact(tp, spec.m).pair(f), rel_tol=1e-12, abs_tol=1e-14)
        assert math.isclose(sm[j], pl.intersection_measure_smoothed(tp, [spec] * 2, 0.3).pair(f), rel_tol=1e-12)


def test_unbiased_first_moment(zoo, specs):
    for name, mod in zoo.items():
        spec = specs[name]
        f = 1 + np.arange(mod.n) / mod.n
        mean, se = pl.mc_moment([mod], [0], f, 1.0, 1, 0, 0.2, 20000, seed=15, specs=[spec])
        exact = mo.mixed_moment_formula([spec], [0], f, 1.0, 1, 0, 0.2)
        assert abs(mean - exact) <= 3 * se + 1e-12, name


def test_seed_determinism(zoo):
    args = ([zoo["two-state-killed"], zoo["birth-death-killed"]], [0, 0], 1.0)
    a = pl.sample_surviving_occupations(*args, 3000, seed=16)
    b = pl.sample_surviving_occupations(*args, 3000, seed=16)
    c = pl.sample_surviving_occupations(*args, 3000, seed=17)
    assert all(np.array_equal(x, y) for x, y in zip(a.occupations, b.occupations)) and a.attempts == b.attempts
    assert not np.array_equal(a.occupations[0], c.occupations[0])
    t1 = pl.sample_surviving_tuple(*args, 50, seed=16).tuples
    assert t1 == pl.sample_surviving_tuple(*args, 50, seed=16).tuples


def test_eps_diagnostic_conservative_mass(zoo):
    rows, _ = pl.epsilon_convergence_diagnostic([zoo["two-state"]], [0], np.ones(2), 1.0, 2, n=500, seed=18)
    assert max(r.estimate for r in rows) <= 1e-24


def test_eps_diagnostic_two_state_pair(zoo):
    rows, summary = pl.epsilon_convergence_diagnostic([zoo["two-state"]] * 2, [0, 0], np.ones(2), 1.0, 2,
                                                      eps_grid=[2.0**-j for j in range(2, 11)], n=10**4, seed=19)
    assert summary["strictly_decreasing"]
    assert rows[-1].eps == 2.0**-10 and rows[-1].estimate <= 1e-3
    with pytest.raises(ValueError):
        pl.epsilon_convergence_diagnostic([zoo["two-state"]], [0], np.ones(2), 1.0, 5)


def test_exp_approx_constant(zoo):
    mods = [zoo["birth-death-killed"]] * 2
    grid = [2.0**-2, 2.0**-6, 2.0**-10]
    C = pl.exp_approx_constant_estimate(mods, [0, 0], np.ones(3), [1.0, 2.0], [1, 2], grid, 10**4, seed=20)
    for t in (1.0, 2.0):
        for k in (1, 2):
            vals = [C[(t, k, e)] for e in grid]
            assert vals[0] > vals[1] > vals[2] and vals[2] <= 0.1 * vals[0]
    top = max(C[(t, k, grid[0])] for t in (1.0, 2.0) for k in (1, 2))
    for e in grid:
        assert max(C[(t, k, e)] for t in (1.0, 2.0) for k in (1, 2)) <= top
    zero = pl.exp_approx_constant_estimate(mods, [0, 0], np.zeros(3), [1.0], [1, 2], grid, 500, seed=20)
    assert all(v == 0 for v in zero.values())
    with pytest.raises(ValueError):
        pl.exp_approx_constant_estimate(mods, [0, 0], np.ones(3), [1.0], [4], grid, 10, seed=0)


def test_path_dump_round_trip(zoo, tmp_path):
    rng = pl.stream_rng(21)
    paths = [pl.sample_path(zoo["absorbing-3"], 1, 2.0, rng, i) for i in range(50)]
    pl.dump_paths(paths, tmp_path / "p.bin")
    back = pl.load_paths(tmp_path / "p.bin")
    assert [(p.states, p.sojourns, p.survived, p.horizon) for p in back] == \
           [(p.states, p.sojourns, p.survived, p.horizon) for p in paths]
    assert any(not p.survived for p in back)


def test_stream_seed_distinct():
    seeds = {pl.stream_seed(1, k) for k in range(100)}
    assert len(seeds) == 100 and all(0 <= s < 2**63 for s in seeds)
