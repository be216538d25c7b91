"""Numba kernels on bit-packed rows.

A row of N sites lives in ``ceil(N/64)`` uint64 words, site ``m`` at bit
``m % 64`` of word ``m // 64``; padding bits are always zero.

Bernoulli draws are made word-parallel: a site with success probability
``x`` holds an implicit 53-bit uniform whose bits are spread over successive
random words (most significant first), and the comparison ``u < x`` is
resolved bit-serially for all 64 sites of a word at once.  Step ``t``, word
``w``, bit plane ``b`` use counter ``(t * W + w) * 53 + b``.
"""

import numpy as np
from numba import njit

from .rng import derive_key, random_word, STEP, INIT

PLANES = 53
ONE = np.uint64(1)
ZERO = np.uint64(0)
ALL = np.uint64(0xFFFFFFFFFFFFFFFF)

INIT_ALL_UP = 0
INIT_ALL_DOWN = 1
INIT_SEED = 2
INIT_RANDOM = 3


@njit(cache=True, inline="always")
def popcount64(v):
    v = v - ((v >> np.uint64(1)) & np.uint64(0x5555555555555555))
    v = (v & np.uint64(0x3333333333333333)) + ((v >> np.uint64(2)) & np.uint64(0x3333333333333333))
    v = (v + (v >> np.uint64(4))) & np.uint64(0x0F0F0F0F0F0F0F0F)
    return np.int64((v * np.uint64(0x0101010101010101)) >> np.uint64(56))


@njit(cache=True)
def row_popcount(row):
    s = 0
    for w in range(row.shape[0]):
        s += popcount64(row[w])
    return s


@njit(cache=True, inline="always")
def word_mask(n, w):
    rem = n - 64 * w
    if rem >= 64:
        return ALL
    return (ONE << np.uint64(rem)) - ONE


@njit(cache=True, inline="always")
def _extract_nowrap(row, pos, length):
    # bits pos .. pos+length-1, requires pos+length <= n and 1 <= length <= 64
    w = pos >> 6
    o = pos & 63
    v = row[w] >> np.uint64(o)
    if o != 0 and w + 1 < row.shape[0]:
        v |= row[w + 1] << np.uint64(64 - o)
    if length < 64:
        v &= (ONE << np.uint64(length)) - ONE
    return v


@njit(cache=True, inline="always")
def extract(row, n, pos, length):
    """``length`` bits starting at ring position ``pos`` (one wrap at most)."""
    head = n - pos
    if length <= head:
        return _extract_nowrap(row, pos, length)
    lo = _extract_nowrap(row, pos, head)
    return lo | (_extract_nowrap(row, 0, length - head) << np.uint64(head))


@njit(cache=True)
def ring_shift(row, n, j, out):
    """out bit m = row bit (m + j) mod n."""
    j = j % n
    nw = row.shape[0]
    for w in range(nw):
        length = min(64, n - 64 * w)
        out[w] = extract(row, n, (64 * w + j) % n, length)


@njit(cache=True)
def double_row(row, n, dbl):
    """dbl holds the bits of ``row`` at positions 0..n-1 and again at n..2n-1."""
    for i in range(dbl.shape[0]):
        dbl[i] = ZERO
    off = n & 63
    base = n >> 6
    for w in range(row.shape[0]):
        v = row[w]
        dbl[w] |= v
        dbl[base + w] |= v << np.uint64(off)
        if off != 0:
            dbl[base + w + 1] |= v >> np.uint64(64 - off)


@njit(cache=True)
def add_pair_counts(row, n, dbl, counts, extra):
    """counts[d] += sum_m b_m b_{m+d} for d = 0..n/2; the same sums go to ``extra``."""
    nw = row.shape[0]
    double_row(row, n, dbl)
    last = word_mask(n, nw - 1)
    for d in range(n // 2 + 1):
        o = d & 63
        wd = d >> 6
        c = 0
        for w in range(nw):
            v = dbl[w + wd] >> np.uint64(o)
            if o != 0:
                v |= dbl[w + wd + 1] << np.uint64(64 - o)
            if w == nw - 1:
                v &= last
            c += popcount64(row[w] & v)
        counts[d] += c
        extra[d] += c


@njit(cache=True, inline="always")
def _bernoulli_single(key, base, cand, thr):
    # sites in `cand` succeed with probability thr / 2**53
    lt = ZERO
    eq = cand
    for b in range(PLANES):
        if eq == ZERO:
            break
        r = random_word(key, base + b)
        if (thr >> np.uint64(PLANES - 1 - b)) & ONE:
            lt |= eq & ~r
            eq &= r
        else:
            eq &= ~r
    return lt


@njit(cache=True, inline="always")
def _bernoulli_classes(key, base, masks, thr, certain, ncls):
    res = ZERO
    eq = ZERO
    for c in range(ncls):
        if certain[c]:
            res |= masks[c]
        elif thr[c] != ZERO:
            eq |= masks[c]
    lt = ZERO
    for b in range(PLANES):
        if eq == ZERO:
            break
        r = random_word(key, base + b)
        shift = np.uint64(PLANES - 1 - b)
        tb = ZERO
        for c in range(ncls):
            if (thr[c] >> shift) & ONE:
                tb |= masks[c]
        lt |= eq & ~r & tb
        eq &= ~(r ^ tb)
    return res | lt


@njit(cache=True)
def fire_mask(row, n, out):
    """Bit m set iff site m or m+1 (mod n) is excited."""
    ring_shift(row, n, 1, out)
    for w in range(row.shape[0]):
        out[w] |= row[w]


@njit(cache=True)
def dk_step_words(row, n, thr, certain, key, t, out, fire):
    fire_mask(row, n, fire)
    nw = row.shape[0]
    for w in range(nw):
        f = fire[w]
        if f == ZERO:
            out[w] = ZERO
        elif certain:
            out[w] = f
        else:
            out[w] = _bernoulli_single(key, (t * nw + w) * PLANES, f, thr)


@njit(cache=True)
def class_masks(row, n, K, shifted, masks):
    """masks[w, k]: sites of word w with k excitations in window m..m+K-1."""
    nw = row.shape[0]
    for j in range(K):
        ring_shift(row, n, j, shifted[j])
    for w in range(nw):
        for k in range(K + 1):
            masks[w, k] = ZERO
        valid = word_mask(n, w)
        for bit in range(64):
            bb = np.uint64(bit)
            if not (valid >> bb) & ONE:
                break
            k = 0
            for j in range(K):
                k += (shifted[j, w] >> bb) & ONE
            masks[w, k] |= ONE << bb


@njit(cache=True)
def general_step_words(row, n, K, thr, certain, key, t, out, shifted, masks):
    class_masks(row, n, K, shifted, masks)
    nw = row.shape[0]
    for w in range(nw):
        out[w] = _bernoulli_classes(key, (t * nw + w) * PLANES, masks[w], thr, certain, K + 1)


@njit(cache=True)
def init_row(kind, n, site, thr, certain, key, out):
    nw = out.shape[0]
    for w in range(nw):
        out[w] = ZERO
    if kind == INIT_ALL_UP:
        for w in range(nw):
            out[w] = word_mask(n, w)
    elif kind == INIT_SEED:
        out[site >> 6] = ONE << np.uint64(site & 63)
    elif kind == INIT_RANDOM:
        for w in range(nw):
            valid = word_mask(n, w)
            if certain:
                out[w] = valid
            else:
                out[w] = _bernoulli_single(key, w * PLANES, valid, thr)


@njit(cache=True)
def implied_uniforms(key, t, n):
    """Per-site uniforms consumed by step ``t`` (all 53 planes, no early exit)."""
    nw = (n + 63) // 64
    u = np.zeros(n)
    for w in range(nw):
        base = (t * nw + w) * PLANES
        for b in range(PLANES):
            r = random_word(key, base + b)
            scale = 2.0 ** (-(b + 1))
            for bit in range(min(64, n - 64 * w)):
                if (r >> np.uint64(bit)) & ONE:
                    u[64 * w + bit] += scale
    return u


@njit(cache=True, nogil=True)
def run_chunk(first, last, seed, n, steps, K, dk_mode, thr, certain,
              init_kind, init_site, init_thr, init_certain, meas_start,
              pop_t, alive_t, pair, pair_traj_sq, fire_pair, scalars, absorbed_at):
    """Run trajectories ``first .. last-1`` and accumulate into the arrays.

    scalars: [sum_pop, sum_pop_sq, sum_pop_traj_sq]
    """
    nw = (n + 63) // 64
    n_d = n // 2 + 1
    a = np.zeros(nw, dtype=np.uint64)
    b = np.zeros(nw, dtype=np.uint64)
    fire = np.zeros(nw, dtype=np.uint64)
    dbl = np.zeros(2 * nw + 2, dtype=np.uint64)
    scratch = np.zeros(n_d, dtype=np.int64)
    shifted = np.zeros((K, nw), dtype=np.uint64)
    masks = np.zeros((nw, K + 1), dtype=np.uint64)
    traj_pair = np.zeros(n_d, dtype=np.int64)
    thr1 = thr[1] if dk_mode else ZERO
    cert1 = certain[1] if dk_mode else False
    absorbing_down = (not certain[0]) and thr[0] == ZERO
    absorbing_up = certain[K] if not dk_mode else cert1
    window = steps - meas_start + 1

    for traj in range(first, last):
        key_step = derive_key(seed, traj, STEP)
        key_init = derive_key(seed, traj, INIT)
        init_row(init_kind, n, init_site, init_thr, init_certain, key_init, a)
        absorbed_at[traj - first] = -1
        traj_pop = 0
        for d in range(n_d):
            traj_pair[d] = 0
        t = 0
        while True:
            pop = row_popcount(a)
            if pop == 0 and absorbing_down:
                absorbed_at[traj - first] = t
                break
            if pop == n and absorbing_up:
                # frozen all-up: add the remaining steps analytically
                rem = steps - t + 1
                for tt in range(t, steps + 1):
                    pop_t[tt] += n
                    alive_t[tt] += 1
                in_win = min(rem, steps - max(t, meas_start) + 1)
                if in_win > 0:
                    scalars[0] += in_win * n
                    scalars[1] += in_win * n * n
                    traj_pop += in_win * n
                    for d in range(n_d):
                        traj_pair[d] += in_win * n
                        pair[d] += in_win * n
                        if dk_mode:
                            fire_pair[d] += in_win * n
                break
            pop_t[t] += pop
            if pop > 0:
                alive_t[t] += 1
            if t >= meas_start:
                scalars[0] += pop
                scalars[1] += pop * pop
                traj_pop += pop
                add_pair_counts(a, n, dbl, pair, traj_pair)
                if dk_mode:
                    add_pair_counts(fire, n, dbl, fire_pair, scratch)
            if t == steps:
                break
            t += 1
            if dk_mode:
                dk_step_words(a, n, thr1, cert1, key_step, t, b, fire)
            else:
                general_step_words(a, n, K, thr, certain, key_step, t, b, shifted, masks)
            a, b = b, a
        scalars[2] += traj_pop * traj_pop
        for d in range(n_d):
            pair_traj_sq[d] += traj_pair[d] * traj_pair[d]
    return window
