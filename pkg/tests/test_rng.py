import numpy as np

from dkq.rng import RngStream


def test_replay_is_identical():
    a = RngStream(1, 0, "step").uniform(1000)
    b = RngStream(1, 0, "step").uniform(1000)
    assert np.array_equal(a, b)


def test_single_draws_match_block_draws():
    s = RngStream(7, 3)
    singles = [s.uniform01() for _ in range(50)]
    assert singles == RngStream(7, 3).uniform(50).tolist()


def test_distinct_streams_differ():
    base = RngStream(1, 0).uniform(64)
    for traj in range(1, 200):
        assert not np.array_equal(base, RngStream(1, traj).uniform(64))
    assert not np.array_equal(base, RngStream(1, 0, "init").uniform(64))
    assert not np.array_equal(base, RngStream(2, 0).uniform(64))


def test_distinct_streams_uncorrelated():
    a = RngStream(1, 0).uniform(10_000)
    b = RngStream(1, 1).uniform(10_000)
    r = np.corrcoef(a, b)[0, 1]
    # 4 sigma for the null of independence
    assert abs(r) < 4 / np.sqrt(10_000)


def test_mean_and_range():
    u = RngStream(12345, 0).uniform(1_000_000)
    assert 0.0 <= u.min() and u.max() < 1.0
    assert abs(u.mean() - 0.5) < 0.002
    hist, _ = np.histogram(u, bins=20, range=(0, 1))
    expected = len(u) / 20
    chi2 = ((hist - expected) ** 2 / expected).sum()
    assert chi2 < 45  # 19 dof, p ~ 1e-3


def test_word_does_not_advance():
    s = RngStream(3)
    w = s.word(10)
    assert s.counter == 0 and w == s.word(10)
    assert 0 <= w < 2**64


def test_large_seed_accepted():
    assert RngStream(2**64 - 1, 2**40).uniform(3).shape == (3,)
