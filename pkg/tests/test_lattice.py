import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dkq.lattice import ConfigError, LatticeConfig, SpinRow, count_in_window, neighbor_or


def naive_or(bits, m):
    n = len(bits)
    return int(bits[m] or bits[(m + 1) % n])


@pytest.mark.parametrize("row,m,expected", [
    ("00000", 2, 0),
    ("00100", 1, 1),
    ("00100", 2, 1),
    ("00100", 3, 0),
])
def test_neighbor_or_examples(row, m, expected):
    assert neighbor_or(SpinRow.from_string(row), m) == expected


@pytest.mark.parametrize("row,m,K,expected", [
    ("01100", 0, 2, 1),
    ("01100", 1, 2, 2),
    ("11111", 3, 4, 4),
])
def test_count_in_window_examples(row, m, K, expected):
    assert count_in_window(SpinRow.from_string(row), m, K) == expected


def test_count_in_window_rejects_large_k():
    with pytest.raises(ConfigError):
        count_in_window(SpinRow.zeros(5), 0, 6)


def test_lattice_needs_two_sites():
    with pytest.raises(ConfigError):
        LatticeConfig(1)
    assert LatticeConfig(65).n_words == 2


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 1), min_size=2, max_size=200), st.data())
def test_window_count_consistent_with_or(bits, data):
    row = SpinRow.from_bits(bits)
    m = data.draw(st.integers(0, len(bits) - 1))
    assert (count_in_window(row, m, 2) >= 1) == (neighbor_or(row, m) == 1)
    assert neighbor_or(row, m) == naive_or(bits, m)
    K = data.draw(st.integers(1, len(bits)))
    assert count_in_window(row, m, K) == sum(bits[(m + j) % len(bits)] for j in range(K))


def test_packed_popcount_matches_naive(rng):
    for _ in range(10_000):
        n = int(rng.integers(2, 300))
        bits = rng.integers(0, 2, n)
        row = SpinRow.from_bits(bits)
        assert row.popcount() == int(bits.sum())
        assert np.array_equal(row.to_bits(), bits)


@pytest.mark.parametrize("n", [5, 63, 64, 65, 128, 200])
def test_padding_bits_zero(n):
    row = SpinRow.ones(n)
    rem = n % 64
    if rem:
        assert int(row.words[-1]) == (1 << rem) - 1
        with pytest.raises(ValueError):
            SpinRow(n, np.full(row.words.shape, np.uint64(2**64 - 1)))
    else:
        assert all(int(w) == 2**64 - 1 for w in row.words)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 1), min_size=2, max_size=200), st.integers(-300, 300))
def test_shift_matches_roll(bits, j):
    row = SpinRow.from_bits(bits)
    assert np.array_equal(row.shifted(j).to_bits(), np.roll(np.array(bits), -j))


def test_string_and_int_round_trip():
    row = SpinRow.from_string("00100")
    assert row[2] == 1 and row.popcount() == 1
    assert row.to_int() == 4
    assert SpinRow.from_int(5, 4) == row
    assert str(row) == "00100"
