import math

import numpy as np
import pytest
from scipy.linalg import sqrtm
from scipy.stats import unitary_group

from dkq.automaton import GateParams, TrajectorySpec, run_ensemble
from dkq.exact import ProbVector, evolve, exact_reduced_state, local_state
from dkq.lattice import LatticeConfig
from dkq.observables import CorrelationRecord, Observables, finalize
from dkq import qcorr


def random_state(rng, dim=4):
    m = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    rho = m @ m.conj().T
    return rho / np.trace(rho).real


def reference_lqu(rho):
    """Independent route: scipy sqrtm and an explicit eigen solve of W."""
    root = sqrtm(rho)
    paulis = [np.array([[0, 1], [1, 0]]), np.array([[0, -1j], [1j, 0]]), np.diag([1, -1])]
    ops = [np.kron(s, np.eye(2)) for s in paulis]
    w = np.array([[np.trace(root @ a @ root @ b).real for b in ops] for a in ops])
    return 1 - np.linalg.eigvalsh(w).max()


def test_mixture_example():
    A, B, C = qcorr.mixture_weights(0.3, 0.12, 0.5)
    assert abs(A - 0.48) < 1e-15 and abs(B - 0.12) < 1e-15 and abs(C - 0.28) < 1e-15
    assert np.allclose(local_state(0.5), [[0.5, 0.5], [0.5, 0.5]])


def test_product_when_uncorrelated():
    n, x = 0.3, 0.6
    single = (n / x) * local_state(x) + (1 - n / x) * local_state(0.0)
    assert np.abs(qcorr.build_rho_pair(n, n * n, x) - np.kron(single, single)).max() < 1e-15


def test_moments_reproduced(rng):
    ni = np.kron(np.diag([1, 0]), np.eye(2))
    nj = np.kron(np.eye(2), np.diag([1, 0]))
    for _ in range(200):
        x = rng.uniform(0.05, 1)
        n = rng.uniform(0, x)
        pair = rng.uniform(max(0, 2 * n * x - x * x), n * x)
        rho = qcorr.build_rho_pair(n, pair, x)
        qcorr.check_density_matrix(rho, 1e-12)
        assert abs(np.trace(ni @ rho).real - n) < 1e-12
        assert abs(np.trace(nj @ rho).real - n) < 1e-12
        assert abs(np.trace(ni @ nj @ rho).real - pair) < 1e-12
        assert np.linalg.eigvalsh(rho).min() > -1e-12


def test_infeasible_moments():
    with pytest.raises(qcorr.MomentInfeasibleError) as info:
        qcorr.build_rho_pair(0.5, 0.3, 0.5)
    assert "x" in info.value.violation
    with pytest.raises(qcorr.MomentInfeasibleError):
        qcorr.build_rho_pair(0.1, 0.0, 0.1 - 1e-3)
    # a sub-tolerance violation is clamped
    rho = qcorr.build_rho_pair(0.25, -1e-12, 0.5)
    assert abs(np.trace(rho) - 1) < 1e-12


def test_sqrt_psd_examples(rng):
    assert np.allclose(qcorr.sqrt_psd(np.eye(4)), np.eye(4))
    assert np.allclose(qcorr.sqrt_psd(np.diag([4, 1, 0, 0])), np.diag([2, 1, 0, 0]))
    for _ in range(1000):
        r = rng.normal(size=(4, 4))
        m = r @ r.T
        s = qcorr.sqrt_psd(m)
        assert np.abs(s @ s - m).max() < 1e-8
    with pytest.raises(ValueError):
        qcorr.sqrt_psd(np.array([[1, 2], [0, 1]]))


def test_lqu_examples(rng):
    for _ in range(20):
        a, b = random_state(rng, 2), random_state(rng, 2)
        assert qcorr.lqu(np.kron(a, b)).lqu < 1e-10
    res = qcorr.lqu(np.diag([0.5, 0, 0, 0.5]))
    assert res.lqu < 1e-12 and abs(res.w_matrix[2, 2] - 1) < 1e-12
    bell = np.zeros(4)
    bell[[0, 3]] = 1 / math.sqrt(2)
    assert abs(qcorr.lqu(np.outer(bell, bell)).lqu - 1) < 1e-10


def test_lqu_matches_independent_route(rng):
    for _ in range(100):
        rho = random_state(rng)
        res = qcorr.lqu(rho)
        assert abs(res.lqu - reference_lqu(rho)) < 1e-8
        assert abs(res.lqu - (1 - res.lambda_max)) < 1e-15
        assert np.allclose(res.w_matrix, res.w_matrix.T)


def test_lqu_range(rng):
    for _ in range(1000):
        assert 0.0 <= qcorr.lqu(random_state(rng)).lqu <= 1.0


def test_local_unitary_invariance(rng):
    for _ in range(100):
        rho = random_state(rng)
        u = unitary_group.rvs(2, random_state=rng)
        v = unitary_group.rvs(2, random_state=rng)
        uv = np.kron(u, v)
        assert abs(qcorr.lqu(uv @ rho @ uv.conj().T).lqu - qcorr.lqu(rho).lqu) < 1e-8


def test_separable_yet_discordant():
    rho = qcorr.build_rho_pair(0.3, 0.05, 0.6)
    assert qcorr.lqu(rho).lqu > 1e-3


def test_printed_form_differs():
    # the printed closed form is kept for comparison only
    assert qcorr.printed_deviation(0.3, 0.12, 0.5) > 1e-3
    assert qcorr.rho_pair_printed(0.3, 0.12, 0.5).shape == (4, 4)


def test_pipeline_matches_exact_state():
    for x in (0.6, 0.8):
        hist = evolve(ProbVector.all_up(10), GateParams(x), 8)
        for d in (1, 2, 5):
            exact = exact_reduced_state(hist[-2], GateParams(x), [0, d])
            built = qcorr.build_rho_pair(hist[-1].density(), hist[-1].pair_correlation(d), x)
            assert abs(qcorr.lqu(exact).lqu - qcorr.lqu(built).lqu) < 1e-10
            # one-sided measure: symmetric states give the same value from either side
            assert abs(qcorr.lqu(built, site=0).lqu - qcorr.lqu(built, site=1).lqu) < 1e-10


def synthetic_obs(n_mean, pairs):
    corr = [CorrelationRecord(d, c, c - n_mean**2) for d, c in enumerate(pairs)]
    return Observables(len(pairs) * 2 - 2, 1, n_mean, 0.0, 0.0, corr, np.zeros(1), np.zeros(1), 0.0)


def test_uncorrelated_profile_is_zero():
    obs = synthetic_obs(0.3, [0.3] + [0.09] * 8)
    prof = qcorr.lqu_profile(obs, 0.6, estimator="direct")
    assert [p.d for p in prof] == list(range(1, 9))
    assert all(p.value < 1e-10 for p in prof)


def test_profile_reports_infeasible_distances():
    obs = synthetic_obs(0.3, [0.3, 0.2, 0.09])
    prof = qcorr.lqu_profile(obs, 0.5, estimator="direct")
    assert prof[0].value is None and prof[0].violation
    assert prof[1].value is not None and math.isnan(prof[0].log_value)


def test_fire_estimator_matches_direct_in_expectation():
    x = 0.75
    st = run_ensemble(TrajectorySpec(LatticeConfig(64), GateParams(x), 300, seed=3), 400)
    obs = finalize(st)
    n_fire, pairs_fire = qcorr.pipeline_moments(obs, x, "fire")
    n_dir, pairs_dir = qcorr.pipeline_moments(obs, x, "direct")
    assert abs(n_fire - n_dir) < 5 * obs.density_err
    for d in (1, 3, 10):
        assert abs(pairs_fire[d] - pairs_dir[d]) < 5 * obs.correlations[d].c2_err
    with pytest.raises(ValueError):
        qcorr.pipeline_moments(obs, x, "magic")
