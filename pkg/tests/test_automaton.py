import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dkq.automaton import (GateParams, GeneralGateParams, InitialCondition, Interrupted,
                           TrajectorySpec, dk_step, general_step, implied_uniforms, quantized,
                           run_ensemble, run_trajectory, step_with_uniforms)
from dkq.lattice import ConfigError, LatticeConfig, SpinRow, count_in_window
from dkq.observables import finalize
from dkq.rng import RngStream


def test_gate_params_angle():
    g = GateParams.from_alpha(math.pi / 2)
    assert abs(g.x - 0.5) < 1e-12
    assert abs(math.sin(GateParams(0.3).alpha / 2) ** 2 - 0.3) < 1e-12
    with pytest.raises(ConfigError):
        GateParams(1.2)
    with pytest.raises(ConfigError):
        GateParams(0.3, alpha=1.0)


def test_general_gate_flags():
    assert GeneralGateParams((0, 0.5, 1)).absorbing_down
    assert GeneralGateParams((0, 0.5, 1)).absorbing_up
    assert not GeneralGateParams((0.1, 0.5, 0.5)).absorbing_down
    g = GeneralGateParams.from_alphas([0, math.pi / 2, math.pi])
    assert np.allclose(g.xs, (0, 0.5, 1), atol=1e-12) and g.K == 2
    with pytest.raises(ConfigError):
        GeneralGateParams((0, 1.5))


# -- dk_step examples --

def test_all_down_stays_down():
    for x in (0.0, 0.3, 1.0):
        s = RngStream(0)
        assert dk_step(SpinRow.zeros(100), GateParams(x), s) == SpinRow.zeros(100)
        assert general_step(SpinRow.zeros(100), GeneralGateParams((0, x, x, 1)), s) == SpinRow.zeros(100)


def test_deterministic_limit():
    out = dk_step(SpinRow.from_string("00100"), GateParams(1.0), RngStream(0))
    assert str(out) == "01100"


def test_all_up_binomial_mean():
    s = RngStream(99)
    row = SpinRow.ones(256)
    pops = np.array([dk_step(row, GateParams(0.7), s).popcount() for _ in range(10_000)])
    sigma = math.sqrt(256 * 0.7 * 0.3 / 10_000)
    assert abs(pops.mean() - 0.7 * 256) < 3 * sigma
    # spread of a binomial(256, 0.7)
    assert abs(pops.var() / (256 * 0.21) - 1) < 0.05


def test_step_does_not_modify_input():
    row = SpinRow.from_string("0110100111")
    before = row.words.copy()
    dk_step(row, GateParams(0.5), RngStream(1))
    general_step(row, GeneralGateParams((0, 0.2, 0.5, 0.9)), RngStream(1))
    assert np.array_equal(before, row.words)


# -- general_step examples --

def test_compact_case_all_up_fixed():
    g = GeneralGateParams((0, 0.5, 1))
    s = RngStream(4)
    row = SpinRow.ones(77)
    for _ in range(20):
        row = general_step(row, g, s)
    assert row == SpinRow.ones(77)


def test_mcp_single_seed_windows():
    g = GeneralGateParams((0, 0.25, 0.5, 0.75, 0))
    n, seed_site = 16, 7
    row = SpinRow.from_bits(np.eye(n, dtype=np.uint8)[seed_site])
    windows = [(seed_site - j) % n for j in range(4)]
    counts = np.zeros(n)
    s = RngStream(8)
    reps = 20_000
    for _ in range(reps):
        counts += general_step(row, g, s).to_bits()
    freq = counts / reps
    sigma = math.sqrt(0.25 * 0.75 / reps)
    for m in range(n):
        expected = 0.25 if m in windows else 0.0
        assert abs(freq[m] - expected) < 4 * sigma + 1e-12


def test_k2_general_equals_dk_bitwise(rng):
    # both kernels consume the same implied uniforms
    for _ in range(200):
        n = int(rng.integers(2, 200))
        x = float(rng.random())
        row = SpinRow.from_bits(rng.integers(0, 2, n))
        s = RngStream(int(rng.integers(2**63)), int(rng.integers(1000)))
        t = int(rng.integers(1, 10_000))
        assert dk_step(row, GateParams(x), s, t) == general_step(row, GeneralGateParams((0, x, x)), s, t)


# -- packed kernels against the explicit-uniform reference --

@settings(max_examples=150, deadline=None)
@given(st.integers(2, 200), st.floats(0, 1), st.integers(0, 2**63), st.integers(1, 5000), st.data())
def test_dk_kernel_matches_reference(n, x, seed, t, data):
    bits = data.draw(st.lists(st.integers(0, 1), min_size=n, max_size=n))
    row = SpinRow.from_bits(bits)
    s = RngStream(seed, 1)
    u = implied_uniforms(s, t, n)
    assert dk_step(row, GateParams(x), s, t) == step_with_uniforms(row, GateParams(x), u)


@settings(max_examples=150, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**63), st.integers(1, 5000), st.data())
def test_general_kernel_matches_reference(K, seed, t, data):
    n = data.draw(st.integers(max(K, 2), 150))
    xs = data.draw(st.lists(st.sampled_from([0.0, 1.0, 0.5, 0.25, 0.9, 1e-9, 0.123456789]),
                            min_size=K + 1, max_size=K + 1))
    bits = data.draw(st.lists(st.integers(0, 1), min_size=n, max_size=n))
    row = SpinRow.from_bits(bits)
    gate = GeneralGateParams(tuple(xs))
    s = RngStream(seed, 2)
    u = implied_uniforms(s, t, n)
    assert general_step(row, gate, s, t) == step_with_uniforms(row, gate, u)


def test_implied_uniforms_are_uniform():
    u = np.concatenate([implied_uniforms(RngStream(5), t, 1000) for t in range(1, 101)])
    assert abs(u.mean() - 0.5) < 4 * math.sqrt(1 / 12 / u.size)
    assert 0 <= u.min() and u.max() < 1


def test_monotone_coupling(rng):
    for _ in range(1000):
        n = int(rng.integers(2, 100))
        row = SpinRow.from_bits(rng.integers(0, 2, n))
        a, b = sorted(rng.random(2))
        s = RngStream(int(rng.integers(2**63)))
        t = int(rng.integers(1, 100))
        lo = dk_step(row, GateParams(a), s, t).to_bits()
        hi = dk_step(row, GateParams(b), s, t).to_bits()
        assert np.all(lo <= hi)


def test_translation_covariance(rng):
    gate = GeneralGateParams((0, 0.3, 0.6, 0.8))
    for _ in range(200):
        n = int(rng.integers(3, 80))
        j = int(rng.integers(-n, n))
        row = SpinRow.from_bits(rng.integers(0, 2, n))
        u = rng.random(n)
        out = step_with_uniforms(row, gate, u)
        out_shifted = step_with_uniforms(row.shifted(j), gate, np.roll(u, -j))
        assert out_shifted == out.shifted(j)


def test_quantized_probabilities():
    q = quantized([0.0, 0.7, 1.0])
    assert q[0] == 0.0 and q[2] == 1.0
    assert abs(q[1] - 0.7) < 2.0**-52


# -- trajectories and ensembles --

def spec(n=64, x=0.7, steps=50, **kw):
    gate = GateParams(x) if not isinstance(x, tuple) else GeneralGateParams(x)
    return TrajectorySpec(LatticeConfig(n), gate, steps, **kw)


def test_x0_absorbs_at_step_one():
    for init in ("all-up", "seed:3", "random:0.5"):
        res = run_trajectory(spec(x=0.0, init=InitialCondition.parse(init)))
        assert res.absorbed_at == 1
        assert res.stats.pop_t[1:].sum() == 0


def test_x1_stays_full():
    res = run_trajectory(spec(x=1.0, steps=30))
    assert np.all(res.stats.pop_t == 64)
    assert res.absorbed_at == -1
    st = run_ensemble(spec(x=1.0, steps=30), 5)
    assert np.all(finalize(st).density_t == 1.0)


def test_inactive_phase_absorbs():
    st = run_ensemble(spec(n=256, x=0.5, steps=500), 1000)
    assert st.n_absorbed / st.n_traj > 0.99


def test_single_trajectory_equals_ensemble_of_one():
    for x in (0.65, 0.8, (0, 0.4, 0.9, 1.0), (0, 0.5, 1.0)):
        for init in ("all-up", "random:0.3", "seed:17"):
            sp = spec(n=70, x=x, steps=60, init=InitialCondition.parse(init), seed=5)
            assert run_ensemble(sp, 1) == run_trajectory(sp).stats
            # the packed runner against the row-by-row reference for several trajectories
            ref = sp.empty_stats()
            for i in range(4):
                ref = ref.merge(run_trajectory(sp, trajectory=i).stats)
            assert run_ensemble(sp, 4) == ref


def test_workers_do_not_change_results():
    sp = spec(n=130, x=0.72, steps=200, seed=2)
    one = run_ensemble(sp, 300, workers=1)
    assert run_ensemble(sp, 300, workers=8) == one
    assert run_ensemble(sp, 300, workers=3, chunk=7) == one


def test_interrupt_and_resume():
    sp = spec(n=64, x=0.7, steps=100, seed=9)
    full = run_ensemble(sp, 200)
    saved = []
    with pytest.raises(Interrupted) as info:
        run_ensemble(sp, 200, checkpoint_every=32, on_checkpoint=saved.append, stop_after=100)
    assert saved and saved[-1].n_traj % 32 == 0
    resumed = run_ensemble(sp, 200, start=saved[-1])
    assert resumed == full
    assert run_ensemble(sp, 200, start=info.value.stats) == full


def test_seed_stability_and_small_ring_band():
    densities = []
    for seed in (1, 2, 3):
        st = run_ensemble(spec(n=256, x=0.9, steps=2000, seed=seed), 500, workers=4)
        densities.append(finalize(st).density)
    assert max(densities) - min(densities) < 0.01
    from dkq.exact import ProbVector, evolve
    exact = evolve(ProbVector.all_up(10), GateParams(0.9), 200)[-1].density()
    # small ring sits close to the large-ring value deep in the active phase
    assert abs(np.mean(densities) - exact) < 0.02


def test_spec_validation():
    with pytest.raises(ConfigError):
        spec(steps=0)
    with pytest.raises(ConfigError):
        TrajectorySpec(LatticeConfig(3), GeneralGateParams((0, 0.1, 0.2, 0.3, 0.4)), 10)
    with pytest.raises(ConfigError):
        spec(steps=10, meas_window=11)
    with pytest.raises(ConfigError):
        run_ensemble(spec(init=InitialCondition("seed", site=64)), 1)
    assert spec(steps=2000).window == 400


def test_initial_conditions():
    ic = InitialCondition.parse("random:0.25")
    pops = [ic.row(1000, 3, t).popcount() for t in range(100)]
    assert abs(np.mean(pops) - 250) < 4 * math.sqrt(1000 * 0.25 * 0.75 / 100)
    assert ic.row(1000, 3, 5) == ic.row(1000, 3, 5)
    assert InitialCondition.parse("seed:4").row(10, 0, 0) == SpinRow.from_string("0000100000")
    assert InitialCondition.parse("all-down").row(10, 0, 0) == SpinRow.zeros(10)
    for text in ("all-up", "all-down", "seed:3", "random:0.5"):
        assert str(InitialCondition.parse(text)) == text
    with pytest.raises(ConfigError):
        InitialCondition.parse("sideways")
