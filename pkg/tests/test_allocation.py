import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from sklearn.base import clone

from mbmimo.allocation import (BlockWaterFilling, PowerScheme, UserCapability,
                               _effective_gains_direct, effective_gains, inner_optimize,
                               interference_matrix, select_windows, sum_rate, surrogate_rate,
                               update_precoders, water_fill, whitened_gain)
from mbmimo.channel import EquivalentChannelSet, build_grid
from mbmimo.numerics import NumericalDomainError


def random_channels(rng, S_L, S_H, K, N, sigma2=1.0):
    grid = build_grid(S_L, S_H)
    S = grid.size
    H = (rng.standard_normal((S, K, N)) + 1j * rng.standard_normal((S, K, N))) / math.sqrt(2)
    A = np.broadcast_to(np.eye(K, dtype=complex), (S, K, K)).copy()
    return EquivalentChannelSet(H, np.full(S, sigma2), A, grid)


def test_interference_matrix_cases(rng):
    H = rng.standard_normal((1, 3)) + 0j
    assert np.allclose(interference_matrix(0, 0, H, [2.0], 0.5), 0.5 * np.eye(3))
    h = np.array([[0.5 + 0.5j], [2.0 - 1j]])
    Z = interference_matrix(0, 0, h, [1.0, 3.0], 0.1)
    assert Z[0, 0] == pytest.approx(abs(h[1, 0]) ** 2 * 3.0 + 0.1)
    H = rng.standard_normal((3, 4)) + 1j * rng.standard_normal((3, 4))
    Z = interference_matrix(0, 1, H, rng.random(3), 0.7)
    assert np.linalg.eigvalsh(Z).min() >= 0.7 - 1e-12


def test_whitened_gain_paths(rng):
    h = rng.standard_normal((1, 4)) + 1j * rng.standard_normal((1, 4))
    assert whitened_gain(h, 0.5 * np.eye(4)) == pytest.approx(np.sum(np.abs(h) ** 2) / 0.5)
    assert whitened_gain(np.zeros((1, 4)), np.eye(4)) == 0.0
    H = rng.standard_normal((3, 4)) + 1j * rng.standard_normal((3, 4))
    Z = interference_matrix(0, 0, H, rng.random(3), 0.2)
    a = whitened_gain(H[0], Z, "direct")
    b = whitened_gain(H[0], Z, "eig")
    assert abs(a - b) <= 1e-10 * abs(a)
    with pytest.raises(NumericalDomainError):
        whitened_gain(H[0], -np.eye(4))


def test_effective_gains_woodbury_matches_direct(rng):
    ch = random_channels(rng, 2, 2, 3, 6, sigma2=0.3)
    P = rng.random((4, 3))
    assert np.allclose(effective_gains(ch, P), _effective_gains_direct(ch, P), rtol=1e-10)


def test_water_fill_simple_cases():
    grid = build_grid(2, 0)
    lam = np.array([[2.0], [0.0]])
    P = water_fill(lam, grid, PowerScheme(), None, 1.5)
    assert P[:, 0] == pytest.approx([1.5, 0.0])
    P = water_fill(np.array([[3.0], [3.0]]), grid, PowerScheme(), None, 2.0)
    assert P[:, 0] == pytest.approx([1.0, 1.0])
    assert np.all(water_fill(np.zeros((2, 1)), grid, PowerScheme(), None, 1.0) == 0)


@given(st.integers(0, 10_000), st.sampled_from(["jpa", "bwpa", "cwpa"]),
       st.floats(0.25, 4.0))
def test_water_fill_kkt(seed, kind, beta):
    rng = np.random.default_rng(seed)
    grid = build_grid(3, 2)
    lam = rng.exponential(1.0, (5, 3)) * (rng.random((5, 3)) > 0.3)
    windows = rng.random((5, 3)) > 0.2
    scheme = PowerScheme(kind, beta)
    P, kappa = water_fill(lam, grid, scheme, windows, 2.0, return_levels=True)
    assert np.all(P[~windows] == 0)
    for idx, budget in scheme.pools(grid, 2.0):
        usable = (lam[idx] * windows[idx]) > 0
        if usable.any():
            assert P[idx].sum() == pytest.approx(budget, rel=1e-8)
            inv = np.where(usable, 1 / np.where(usable, lam[idx], 1), np.inf)
            pos = P[idx] > 0
            k = np.broadcast_to(kappa[idx][:, None], pos.shape)
            assert np.allclose(P[idx][pos], (k - inv)[pos], atol=1e-9)
            assert np.all(k[usable & ~pos] <= inv[usable & ~pos] + 1e-9)
    if kind == "jpa" and kappa[0] > 0 and kappa[-1] > 0:
        assert kappa[-1] / kappa[0] == pytest.approx(4.0, rel=1e-14)


def test_select_windows_examples():
    grid = build_grid(4, 4)
    lam = np.zeros((8, 1))
    cap = [UserCapability(1, 10, ("L",))]
    assert select_windows(lam + 1, cap, grid)[:, 0].tolist() == [True] * 4 + [False] * 4
    lam[[2, 3], 0] = 1.0  # low-band indices 2 and 3 (zero-based)
    m = select_windows(lam, [UserCapability(1, 2)], grid)
    assert np.flatnonzero(m[:, 0]).tolist() == [2, 3]
    m = select_windows(np.ones((8, 1)), [UserCapability(1, 2)], grid)
    assert np.flatnonzero(m[:, 0]).tolist() == [4, 5]  # high band, lowest start
    m = select_windows(np.ones((8, 1)), [UserCapability(2, 3)], grid)
    assert np.flatnonzero(m[:, 0]).tolist() == [0, 1, 2, 4, 5, 6]


def test_precoders_and_rates(rng):
    ch = random_channels(rng, 1, 1, 2, 2, sigma2=0.5)
    P = np.array([[0.4, 0.0], [0.3, 0.2]])
    phase = update_precoders(ch, P)
    assert phase[0, 1] == 1
    assert np.allclose(np.abs(phase), 1)
    w = np.sqrt(P) * phase
    assert np.allclose(np.abs(w) ** 2, P)
    assert sum_rate(ch, np.zeros((2, 2))) == 0.0
    # chain rule: decoding users in order, each sees only later users
    chain = 0.0
    for i in range(2):
        H = ch.H_tilde[i]
        for k in range(2):
            later = np.arange(2) > k
            Z = ch.sigma2[i] * np.eye(2) + (H[later].conj().T * P[i, later]) @ H[later]
            chain += ch.grid.bandwidths[i] * math.log2(1 + whitened_gain(H[k], Z) * P[i, k])
    assert sum_rate(ch, P) == pytest.approx(chain, rel=1e-9)
    # single user per subcarrier: the surrogate is exact
    P1 = np.array([[0.4, 0.0], [0.0, 0.2]])
    assert sum_rate(ch, P1) == pytest.approx(
        surrogate_rate(ch, effective_gains(ch, P1), P1), rel=1e-12)


def test_sum_rate_single_link():
    grid = build_grid(1, 0)
    h = np.array([[[0.6 - 0.3j]]])
    ch = EquivalentChannelSet(h, np.array([0.2]), np.ones((1, 1, 1), complex), grid)
    assert sum_rate(ch, np.array([[2.0]])) == pytest.approx(
        120e3 * math.log2(1 + abs(h[0, 0, 0]) ** 2 * 2 / 0.2), rel=1e-12)
    st_ = inner_optimize(ch, P_T=2.0)
    assert st_.iterations == 1 and st_.converged
    assert st_.sum_rate == pytest.approx(sum_rate(ch, np.array([[2.0]])), rel=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_inner_optimize_monotone_and_feasible(seed):
    rng = np.random.default_rng(seed)
    ch = random_channels(rng, 3, 3, 3, 5, sigma2=0.2)
    caps = [UserCapability(1, 2), UserCapability(2, 1), UserCapability(1, None, ("H",))]
    st_ = inner_optimize(ch, PowerScheme("jpa"), caps, P_T=2.0)
    assert np.all(np.diff(st_.history) >= -1e-9)
    assert st_.P.sum() == pytest.approx(2.0, rel=1e-8)
    assert np.all(st_.P[~st_.windows] == 0)
    assert st_.sum_rate == pytest.approx(sum_rate(ch, st_.P), rel=1e-12)


def test_max_iter_flags_non_converged(rng):
    ch = random_channels(rng, 3, 3, 4, 4, sigma2=0.05)
    st_ = inner_optimize(ch, P_T=2.0, tol=1e-15, max_iter=1)
    assert st_.iterations == 1 and not st_.converged


def test_block_water_filling_estimator(rng):
    ch = random_channels(rng, 2, 2, 2, 3, sigma2=0.3)
    est = BlockWaterFilling(scheme="bwpa", beta=2.0)
    assert est.get_params()["beta"] == 2.0
    assert clone(est).get_params() == est.get_params()
    est.fit(ch)
    assert est.power_[:2].sum() == pytest.approx(2 / 3, rel=1e-8)
    assert est.score(ch) == pytest.approx(est.sum_rate_, rel=1e-12)
    with pytest.raises(AttributeError):
        BlockWaterFilling().score(ch)
    with pytest.raises(ValueError):
        BlockWaterFilling(P_T=-1).fit(ch)
