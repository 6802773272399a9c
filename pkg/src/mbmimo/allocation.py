"""Joint subcarrier, carrier-window and power allocation.

Block iterative water-filling on the dual uplink. Each user has a single
antenna, so the dual-uplink precoder of user ``k`` on subcarrier ``i`` is a
scalar ``sqrt(P[i, k]) * phase`` and the objective depends on powers only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from .channel import HIGH, LOW, EquivalentChannelSet
from .numerics import NumericalDomainError, hermitian_eig, water_level
from ._validation import check_channels, check_positive

JPA, BWPA, CWPA = "jpa", "bwpa", "cwpa"


@dataclass(frozen=True)
class PowerScheme:
    """How the total budget ``P_T`` is pooled.

    ``jpa`` pools everything, ``bwpa`` splits it between bands in the ratio
    ``1 : beta`` (low : high), ``cwpa`` gives each subcarrier ``P_T / S``.
    """

    kind: str = JPA
    beta: float = 1.0

    def __post_init__(self):
        kind = str(self.kind).lower()
        if kind not in (JPA, BWPA, CWPA):
            raise ValueError(f"unknown power scheme {self.kind!r}")
        if not self.beta >= 0:
            raise ValueError("beta must be >= 0")
        object.__setattr__(self, "kind", kind)

    def pools(self, grid, P_T):
        """List of ``(subcarrier indices, budget)`` pairs."""
        S = grid.size
        if self.kind == JPA:
            return [(np.arange(S), P_T)]
        if self.kind == BWPA:
            return [(np.arange(grid.M_L), P_T / (1 + self.beta)),
                    (np.arange(grid.M_L, S), self.beta * P_T / (1 + self.beta))]
        return [(np.array([i]), P_T / S) for i in range(S)]


@dataclass(frozen=True)
class UserCapability:
    """Band count ``eta``, per-band window length and the bands a user may use."""

    eta: int = 2
    n_window: int | None = None  # None: no window limit
    allowed_bands: tuple = (LOW, HIGH)

    def __post_init__(self):
        bands = tuple(self.allowed_bands)
        object.__setattr__(self, "allowed_bands", bands)
        if self.eta not in (1, 2):
            raise ValueError("eta must be 1 or 2")
        if not set(bands) <= {LOW, HIGH} or not bands:
            raise ValueError("allowed_bands must be a non-empty subset of ('L', 'H')")
        if self.eta > len(bands):
            raise ValueError("eta exceeds the number of allowed bands")
        if self.n_window is not None and self.n_window < 1:
            raise ValueError("n_window must be >= 1")


@dataclass
class AllocationState:
    P: np.ndarray  # (S, K) powers
    w_phase: np.ndarray  # (S, K) unit phases
    windows: np.ndarray  # (S, K) bool, True where f_i is in Omega_k
    sum_rate: float  # bits/s
    iterations: int
    converged: bool
    history: list = field(default_factory=list)

    @property
    def precoders(self):
        return np.sqrt(self.P) * self.w_phase

    def window_sets(self):
        return [set(np.flatnonzero(self.windows[:, k]).tolist()) for k in range(self.P.shape[1])]


def interference_matrix(i, k, H_tilde_i, P_i, sigma2_i):
    """Interference-plus-noise covariance seen by user ``k`` on subcarrier ``i``.

    ``H_tilde_i`` is K x N, ``P_i`` the K powers on this subcarrier; ``i`` is
    only carried for error messages.
    """
    H = np.atleast_2d(H_tilde_i)
    K, N = H.shape
    if not 0 <= k < K:
        raise IndexError(f"user {k} out of range on subcarrier {i}")
    others = np.arange(K) != k
    Ho = H[others]
    Z = sigma2_i * np.eye(N, dtype=complex) + (Ho.conj().T * np.asarray(P_i)[others]) @ Ho
    return 0.5 * (Z + Z.conj().T)


def whiten(h_tilde, Z):
    """Noise-whitened channel ``h Q Delta^-1/2`` and the eigenpairs of ``Z``."""
    eig = hermitian_eig(Z)
    if eig.values[-1] <= 0:
        raise NumericalDomainError("interference covariance is not positive definite")
    h_dot = (np.atleast_2d(h_tilde) @ eig.vectors) / np.sqrt(eig.values)
    return h_dot, eig


def whitened_gain(h_tilde, Z, method="direct"):
    """Single non-zero eigenvalue of ``h_dot^H h_dot``, i.e. ``h Z^-1 h^H``."""
    h = np.atleast_2d(h_tilde)
    if method == "eig":
        h_dot, _ = whiten(h, Z)
        return float(np.sum(np.abs(h_dot) ** 2))
    try:
        L = np.linalg.cholesky(Z)
    except np.linalg.LinAlgError as exc:
        raise NumericalDomainError("interference covariance is not positive definite") from exc
    y = np.linalg.solve(L, h.conj().T)
    return float(np.sum(np.abs(y) ** 2))


def _gram(channels):
    H = channels.H_tilde
    return H @ np.swapaxes(H.conj(), 1, 2)  # (S, K, K)


def effective_gains(channels, P, gram=None):
    """All ``Lambda[i, k]`` for the current powers, shape (S, K).

    Works in the K-dimensional user space through the matrix inversion
    lemma, which is exact and much cheaper than N x N solves when N >> K.
    """
    G = _gram(channels) if gram is None else gram
    S, K, _ = G.shape
    s2 = channels.sigma2
    D = np.sqrt(np.asarray(P, dtype=float))
    Lam = np.empty((S, K))
    eye = np.eye(K)
    for k in range(K):
        Dk = D.copy()
        Dk[:, k] = 0.0
        # sigma2 I + Dk G Dk, and Dk G[:, :, k]
        M = s2[:, None, None] * eye + Dk[:, :, None] * G * Dk[:, None, :]
        r = Dk * G[:, :, k]
        x = np.linalg.solve(M, r[:, :, None])[:, :, 0]
        quad = np.real(np.sum(r.conj() * x, axis=1))
        Lam[:, k] = (np.real(G[:, k, k]) - quad) / s2
    return np.maximum(Lam, 0.0)


def _effective_gains_direct(channels, P):
    """Reference path: one N x N Cholesky solve per (i, k)."""
    S, K, _ = channels.H_tilde.shape
    out = np.empty((S, K))
    for i in range(S):
        for k in range(K):
            Z = interference_matrix(i, k, channels.H_tilde[i], P[i], channels.sigma2[i])
            out[i, k] = whitened_gain(channels.H_tilde[i, k], Z)
    return out


def water_fill(Lambda, grid, scheme, windows, P_budget, return_levels=False):
    """Weighted water-filling ``P = [B_i kappa - 1/Lambda]^+`` per budget pool.

    Entries outside the windows, or with zero gain, get exactly zero power.
    With ``return_levels`` the per-subcarrier water level ``kappa_i`` is also
    returned (zero for pools without any usable entry).
    """
    Lambda = np.asarray(Lambda, dtype=float)
    S, K = Lambda.shape
    if np.any(Lambda < 0):
        raise ValueError("effective gains must be non-negative")
    check_positive(P_budget, "P_budget")
    windows = np.ones((S, K), bool) if windows is None else np.asarray(windows, bool)
    P = np.zeros((S, K))
    kappa = np.zeros(S)
    B = grid.bandwidths
    for idx, budget in scheme.pools(grid, P_budget):
        if len(idx) == 0 or budget <= 0:
            continue
        sub = Lambda[idx] * windows[idx]
        Bs = np.broadcast_to(B[idx][:, None], sub.shape)
        usable = sub > 0
        if not np.any(usable):
            continue
        base = water_level(Bs[usable], sub[usable], budget)
        level = B[idx] * base
        with np.errstate(divide="ignore"):
            alloc = np.where(usable, level[:, None] - 1.0 / np.where(usable, sub, 1.0), 0.0)
        P[idx] = np.maximum(alloc, 0.0)
        kappa[idx] = level
    if return_levels:
        return P, kappa
    return P


def _best_window(scores, length):
    csum = np.concatenate([[0.0], np.cumsum(scores)])
    sums = csum[length:] - csum[:-length]
    start = int(np.argmax(sums))  # first maximum: lowest starting index
    return start, float(sums[start])


def select_windows(Lambda, caps, grid):
    """Carrier windows maximising the bandwidth-weighted gain sum per user.

    Returns an (S, K) boolean mask.
    """
    Lambda = np.asarray(Lambda, dtype=float)
    S, K = Lambda.shape
    mask = np.zeros((S, K), bool)
    weight = np.where(grid.is_high, grid.band_ratio, 1.0)
    for k in range(K):
        cap = caps[k]
        options = []
        for band in (LOW, HIGH):
            sl = grid.band_slice(band)
            size = sl.stop - sl.start
            if band not in cap.allowed_bands or size == 0:
                continue
            length = size if cap.n_window is None else min(cap.n_window, size)
            start, score = _best_window(weight[sl] * Lambda[sl, k], length)
            options.append((score, sl.start + start, length))
        # stable sort keeps the low band first on ties
        options.sort(key=lambda o: -o[0])
        for score, start, length in options[:cap.eta]:
            mask[start:start + length, k] = True
    return mask


def update_precoders(channels, P):
    """Unit phases of the dual-uplink precoders.

    The precoder aligns with the left singular vector of the whitened
    channel, which for a 1 x N row is a single phase. Zero-power entries
    keep phase 1.
    """
    S, K, _ = channels.H_tilde.shape
    phase = np.ones((S, K), dtype=complex)
    for i, k in zip(*np.nonzero(P > 0)):
        Z = interference_matrix(i, k, channels.H_tilde[i], P[i], channels.sigma2[i])
        h_dot, _ = whiten(channels.H_tilde[i, k], Z)
        U = np.linalg.svd(h_dot)[0]
        phase[i, k] = U[0, 0] / abs(U[0, 0])
    return phase


def sum_rate(channels, P, gram=None):
    """Dual-uplink sum rate (bits/s) of the power allocation ``P``.

    ``sum_i B_i log2 det(I + sum_k P_ik h_ik^H h_ik / sigma2_i)``, evaluated
    in the K x K form ``det(I + D G D / sigma2)`` which has the same value.
    """
    G = _gram(channels) if gram is None else gram
    D = np.sqrt(np.asarray(P, dtype=float))
    K = G.shape[1]
    M = np.eye(K) + D[:, :, None] * G * D[:, None, :] / channels.sigma2[:, None, None]
    sign, logdet = np.linalg.slogdet(M)
    return float(np.sum(channels.grid.bandwidths * logdet) / np.log(2))


def surrogate_rate(channels, Lambda, P):
    """``sum B_i log2(1 + Lambda P)`` for fixed effective gains."""
    B = channels.grid.bandwidths[:, None]
    return float(np.sum(B * np.log2(1 + Lambda * P)))


def unconstrained_capabilities(K):
    return [UserCapability() for _ in range(K)]


def inner_optimize(channels, scheme=PowerScheme(), caps=None, P_T=2.0,
                   tol=1e-4, max_iter=100, max_backtracks=30):
    """Alternating window selection and block iterative water-filling.

    Every iteration computes the effective gains from the previous powers,
    re-selects the carrier windows, water-fills all pools jointly and
    accepts the new powers only if the exact sum rate does not drop. A
    window change that would lower the rate is rejected (the old windows are
    kept), and a water-filling step that overshoots is shortened towards the
    previous powers. The water-filling direction is an ascent direction of
    the concave sum rate, so some shortened step always improves unless the
    allocation is already optimal for the current windows.

    Stops when the rate gain falls below ``tol * R`` or after ``max_iter``
    accepted updates.
    """
    S, K = channels.H_tilde.shape[:2]
    caps = unconstrained_capabilities(K) if caps is None else list(caps)
    if len(caps) != K:
        raise ValueError(f"expected {K} user capabilities, got {len(caps)}")
    check_positive(tol, "tol")
    G = _gram(channels)
    P = np.zeros((S, K))
    R_prev = 0.0
    windows = None
    history = [R_prev]
    converged = False
    iterations = 0
    while iterations < max_iter:
        Lam = effective_gains(channels, P, G)
        candidate = select_windows(Lam, caps, channels.grid)
        P_wf = water_fill(Lam, channels.grid, scheme, candidate, P_T)
        R_wf = sum_rate(channels, P_wf, G)
        accepted = None
        if windows is None or not np.array_equal(candidate, windows):
            if R_wf >= R_prev:
                accepted, windows = (P_wf, R_wf), candidate
            elif windows is not None:
                P_wf = water_fill(Lam, channels.grid, scheme, windows, P_T)
                R_wf = sum_rate(channels, P_wf, G)
        if accepted is None:
            step = 1.0
            for _ in range(max_backtracks):
                trial = P + step * (P_wf - P)
                R_trial = R_wf if step == 1.0 else sum_rate(channels, trial, G)
                if R_trial > R_prev:
                    accepted = (trial, R_trial)
                    break
                step *= 0.5
        if accepted is None:
            converged = True
            break
        P, R_new = accepted
        iterations += 1
        history.append(R_new)
        gain = R_new - R_prev
        R_prev = R_new
        if gain < tol * R_new:
            converged = True
            break
    if windows is None:
        windows = np.zeros((S, K), bool)
    return AllocationState(
        P=P,
        w_phase=update_precoders(channels, P),
        windows=windows,
        sum_rate=R_prev,
        iterations=iterations,
        converged=converged,
        history=history,
    )


class BlockWaterFilling(BaseEstimator):
    """Estimator wrapper around :func:`inner_optimize`.

    Parameters
    ----------
    scheme : {"jpa", "bwpa", "cwpa"}
        Power pooling scheme.
    beta : float
        High-to-low band power ratio for ``"bwpa"``.
    P_T : float
        Total transmit power (W).
    tol : float
        Relative sum-rate improvement below which iterations stop.
    max_iter : int
        Maximum number of accepted updates.

    Attributes
    ----------
    power_ : ndarray of shape (n_subcarriers, n_users)
    precoders_ : ndarray of shape (n_subcarriers, n_users), complex
    windows_ : ndarray of shape (n_subcarriers, n_users), bool
    sum_rate_ : float
        Achieved sum rate in bits/s.
    history_ : list of float
        Sum rate after every accepted update, starting from 0.
    n_iter_ : int
    converged_ : bool
    """

    def __init__(self, scheme=JPA, beta=1.0, P_T=2.0, tol=1e-4, max_iter=100):
        self.scheme = scheme
        self.beta = beta
        self.P_T = P_T
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, channels, capabilities=None):
        channels = check_channels(channels)
        check_positive(self.P_T, "P_T")
        state = inner_optimize(channels, PowerScheme(self.scheme, self.beta), capabilities,
                               P_T=self.P_T, tol=self.tol, max_iter=self.max_iter)
        self.state_ = state
        self.power_ = state.P
        self.precoders_ = state.precoders
        self.windows_ = state.windows
        self.sum_rate_ = state.sum_rate
        self.history_ = state.history
        self.n_iter_ = state.iterations
        self.converged_ = state.converged
        return self

    def score(self, channels):
        """Sum rate (bits/s) of the fitted powers on ``channels``."""
        if not hasattr(self, "power_"):
            raise AttributeError("BlockWaterFilling is not fitted yet")
        channels = check_channels(channels)
        return sum_rate(channels, self.power_)
