import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mbmimo.numerics import (NumericalDomainError, generalized_eig_max, hermitian_eig,
                             psd_sqrt, rng_stream, solve, water_level)

from conftest import random_hermitian


def test_hermitian_eig_identity_and_diag():
    assert np.allclose(hermitian_eig(np.eye(3)).values, 1.0)
    e = hermitian_eig(np.diag([1.0, 3.0]))
    assert np.allclose(e.values, [3, 1])
    assert np.allclose(np.abs(e.vectors), [[0, 1], [1, 0]])


def test_hermitian_eig_reconstruction(rng):
    A = random_hermitian(rng, 6)
    e = hermitian_eig(A)
    rec = (e.vectors * e.values) @ e.vectors.conj().T
    assert np.linalg.norm(rec - A) <= 1e-10 * np.linalg.norm(A)
    assert np.all(np.diff(e.values) <= 0)


def test_hermitian_eig_rejects_non_hermitian():
    with pytest.raises(NumericalDomainError):
        hermitian_eig(np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_generalized_eig_simple_pairs(rng):
    B = np.real(random_hermitian(rng, 4, pd=True))
    assert generalized_eig_max(B, B) == pytest.approx(1.0, rel=1e-12)
    assert generalized_eig_max(2 * B, B) == pytest.approx(2.0, rel=1e-12)


def test_generalized_eig_quotient_oracle(rng):
    A = rng.standard_normal((5, 5))
    A = A + A.T
    B = np.real(random_hermitian(rng, 5, pd=True))
    lam, x = generalized_eig_max(A, B, return_vector=True)
    X = rng.standard_normal((100_000, 5))
    q = np.einsum("ij,jk,ik->i", X, A, X) / np.einsum("ij,jk,ik->i", X, B, X)
    assert lam >= q.max() - 1e-12
    assert x @ A @ x / (x @ B @ x) == pytest.approx(lam, rel=1e-10)


def test_generalized_eig_requires_pd():
    with pytest.raises(NumericalDomainError):
        generalized_eig_max(np.eye(2), -np.eye(2))


def test_psd_sqrt(rng):
    A = random_hermitian(rng, 5, pd=True)
    S = psd_sqrt(A)
    assert np.linalg.norm(S @ S - A) <= 1e-9 * np.linalg.norm(A)
    # tiny negative eigenvalues are clamped, larger ones refused
    Q = np.linalg.qr(rng.standard_normal((3, 3)))[0]
    almost = Q @ np.diag([1.0, 0.5, -1e-13]) @ Q.T
    assert np.all(np.isfinite(psd_sqrt(almost)))
    with pytest.raises(NumericalDomainError):
        psd_sqrt(Q @ np.diag([1.0, 0.5, -1e-3]) @ Q.T)


def test_solve_singular():
    with pytest.raises(NumericalDomainError, match="Zfoo"):
        solve(np.zeros((2, 2)), np.ones(2), "Zfoo")


gain = st.one_of(st.just(0.0), st.floats(1e-3, 1e3))


@given(st.lists(st.tuples(st.sampled_from([1.0, 4.0]), gain), min_size=1, max_size=12),
       st.floats(1e-3, 1e3))
def test_water_level_budget(entries, budget):
    B = np.array([e[0] for e in entries])
    lam = np.array([e[1] for e in entries])
    kappa = water_level(B, lam, budget)
    if not np.any(lam > 0):
        assert kappa == 0.0
        return
    inv = np.where(lam > 0, 1.0 / np.where(lam > 0, lam, 1), np.inf)
    used = np.maximum(B * kappa - inv, 0).sum()
    assert used == pytest.approx(budget, rel=1e-10)


def test_rng_stream_determinism_and_independence():
    a = rng_stream(5, "fading", 0, 1).standard_normal(1000)
    b = rng_stream(5, "fading", 0, 1).standard_normal(1000)
    c = rng_stream(5, "fading", 0, 2).standard_normal(1000)
    assert np.array_equal(a, b)
    assert abs(np.corrcoef(a, c)[0, 1]) < 0.1
    # golden values: the stream must not drift across platforms or releases
    assert rng_stream(0, "x").integers(0, 2**32) == 498405113
    assert rng_stream(42, "fading", 3, 7).standard_normal(2).tolist() == pytest.approx(
        [-1.6994815217420647, -0.5599593227559382], abs=1e-15)
