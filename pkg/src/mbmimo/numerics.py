"""Shared numerical kernels.

All tolerances are relative to the norm of the input, because impedances
(tens of ohms) and equivalent channel gains (1e-12 and below) live in the
same pipeline.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
from scipy import linalg


class NumericalDomainError(ValueError):
    """An input violates the numerical precondition of a kernel."""


HERMITIAN_RTOL = 1e-9
PSD_CLAMP_RTOL = 1e-9


@dataclass(frozen=True)
class EigenPair:
    values: np.ndarray  # descending
    vectors: np.ndarray  # columns match ``values``


def _norm(A):
    n = np.linalg.norm(A, 2) if A.size else 0.0
    return float(n)


def hermitian_eig(A):
    """Eigendecomposition of a Hermitian matrix, eigenvalues descending.

    ``A`` is symmetrised as ``(A + A^H) / 2`` after checking that it is
    Hermitian to within ``1e-9 * ||A||``.
    """
    A = np.asarray(A)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise NumericalDomainError(f"expected a square matrix, got shape {A.shape}")
    scale = _norm(A)
    if np.linalg.norm(A - A.conj().T, 2) > HERMITIAN_RTOL * max(scale, np.finfo(float).tiny):
        raise NumericalDomainError("matrix is not Hermitian within tolerance")
    w, V = np.linalg.eigh(0.5 * (A + A.conj().T))
    return EigenPair(values=w[::-1].copy(), vectors=V[:, ::-1].copy())


def generalized_eig_max(A, B, return_vector=False):
    """Largest root of ``det(A - lam B) = 0`` for real symmetric A and PD B.

    Uses the Cholesky reduction ``B = L L^T`` and a standard symmetric
    eigenproblem on ``L^-1 A L^-T``.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    try:
        L = np.linalg.cholesky(0.5 * (B + B.T))
    except np.linalg.LinAlgError as exc:
        raise NumericalDomainError("B is not positive definite") from exc
    Li_A = linalg.solve_triangular(L, 0.5 * (A + A.T), lower=True)
    C = linalg.solve_triangular(L, Li_A.T, lower=True)
    w, V = np.linalg.eigh(0.5 * (C + C.T))
    lam = float(w[-1])
    if not return_vector:
        return lam
    x = linalg.solve_triangular(L.T, V[:, -1], lower=False)
    return lam, x / np.linalg.norm(x)


def psd_sqrt(A):
    """Principal square root of a Hermitian PSD matrix.

    Eigenvalues in ``[-1e-9 ||A||, 0)`` are rounding noise from tightly
    coupled impedance matrices and are clamped to zero; anything more
    negative is rejected.
    """
    A = np.asarray(A)
    if A.size == 0:
        return A.copy()
    eig = hermitian_eig(A)
    lam = eig.values
    floor = -PSD_CLAMP_RTOL * max(abs(lam[0]), abs(lam[-1]))
    if lam[-1] < floor:
        raise NumericalDomainError(
            f"matrix is not PSD: smallest eigenvalue {lam[-1]:.3e}")
    root = np.sqrt(np.clip(lam, 0.0, None))
    Q = eig.vectors
    S = (Q * root) @ Q.conj().T
    if np.isrealobj(A):
        S = S.real
    return S


def solve(A, B, name="matrix"):
    """``A^-1 B`` with a domain error naming the singular factor."""
    A = np.asarray(A)
    try:
        X = np.linalg.solve(A, B)
    except np.linalg.LinAlgError as exc:
        raise NumericalDomainError(f"{name} is singular") from exc
    if np.linalg.cond(A) > 1e14:
        raise NumericalDomainError(f"{name} is numerically singular")
    return X


def water_level(bandwidths, gains, budget, rtol=1e-10):
    """Base water level for weighted water-filling.

    Finds ``kappa`` such that ``sum_j [B_j * kappa - 1/Lambda_j]^+ = budget``.
    Bisection locates the active set, which is then used to solve for the
    level in closed form so the budget is met to rounding accuracy.
    Returns 0 when no entry has a positive gain.
    """
    B = np.asarray(bandwidths, dtype=float).ravel()
    lam = np.asarray(gains, dtype=float).ravel()
    if budget <= 0:
        raise ValueError("budget must be positive")
    if B.shape != lam.shape:
        raise ValueError("bandwidths and gains must have the same length")
    if np.any(lam < 0) or np.any(B <= 0):
        raise ValueError("gains must be >= 0 and bandwidths > 0")
    pos = lam > 0
    if not np.any(pos):
        return 0.0
    B, inv = B[pos], 1.0 / lam[pos]

    def used(kappa):
        return np.maximum(B * kappa - inv, 0.0).sum()

    lo = 0.0
    hi = float(np.min(inv / B))
    while used(hi) < budget:
        hi *= 2.0
    while hi - lo > 1e-15 * hi:
        mid = 0.5 * (lo + hi)
        if used(mid) < budget:
            lo = mid
        else:
            hi = mid
        if abs(used(hi) - budget) <= rtol * budget:
            break
    kappa = hi
    # closed-form polish on the active set found above
    for _ in range(len(B)):
        active = B * kappa > inv
        exact = (budget + inv[active].sum()) / B[active].sum()
        if np.array_equal(B * exact > inv, active):
            return float(exact)
        kappa = exact
    return float(kappa)


def _label_key(label):
    if isinstance(label, (int, np.integer)) and label >= 0:
        return int(label)
    digest = hashlib.sha256(repr(label).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def rng_stream(seed, *labels):
    """Deterministic generator for the substream ``(seed, *labels)``.

    Philox (counter-based) keyed through a ``SeedSequence`` whose spawn key
    is the label path. Non-integer labels are hashed with SHA-256, so the
    stream is stable across platforms and Python processes.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_label_key(l) for l in labels))
    return np.random.Generator(np.random.Philox(ss))
