"""Subcarrier grid, Rayleigh fading and coupling-aware equivalent channels."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .antenna import ChuParams, build_zr, build_zt_stack, self_impedance
from .numerics import NumericalDomainError, psd_sqrt, rng_stream, solve


class ConfigError(ValueError):
    """Scenario parameters that cannot describe a valid system."""


LOW, HIGH = "L", "H"


@dataclass(frozen=True)
class SubcarrierGrid:
    """Low-band subcarriers first, then high-band ones (common index i)."""

    freqs: np.ndarray
    bandwidths: np.ndarray
    bands: np.ndarray  # LOW / HIGH tags
    M_L: int
    M_H: int
    B_L: float
    B_H: float

    @property
    def size(self):
        return self.M_L + self.M_H

    @property
    def is_high(self):
        return self.bands == HIGH

    @property
    def band_ratio(self):
        return self.B_H / self.B_L

    def band_slice(self, band):
        return slice(0, self.M_L) if band == LOW else slice(self.M_L, self.size)


def build_grid(M_L, M_H, f_L=3.5e9, f_H=17.5e9, B_L=120e3, B_H=480e3):
    """Contiguous subcarriers centred on each band's carrier frequency."""
    if M_L < 0 or M_H < 0 or M_L + M_H < 1:
        raise ConfigError("need M_L, M_H >= 0 and at least one subcarrier")
    if B_L <= 0 or B_H <= 0 or f_L <= 0 or f_H <= 0:
        raise ConfigError("band centres and bandwidths must be positive")
    low = f_L + (np.arange(M_L) - (M_L - 1) / 2) * B_L
    high = f_H + (np.arange(M_H) - (M_H - 1) / 2) * B_H
    if M_L and M_H and low[-1] + B_L / 2 > high[0] - B_H / 2:
        raise ConfigError("low and high bands overlap")
    return SubcarrierGrid(
        freqs=np.concatenate([low, high]),
        bandwidths=np.concatenate([np.full(M_L, float(B_L)), np.full(M_H, float(B_H))]),
        bands=np.array([LOW] * M_L + [HIGH] * M_H),
        M_L=int(M_L),
        M_H=int(M_H),
        B_L=float(B_L),
        B_H=float(B_H),
    )


@dataclass(frozen=True)
class FadingRealization:
    F: np.ndarray  # (subcarriers, K, N)
    seed: int
    d: np.ndarray  # per-user distance (m)
    gamma: float

    @property
    def K(self):
        return self.F.shape[1]

    def columns(self, N):
        """Fading restricted to the first ``N`` transmit elements."""
        if N > self.F.shape[2]:
            raise ValueError(f"realization holds {self.F.shape[2]} columns, asked for {N}")
        return self.F[:, :, :N]


def draw_distances(seed, K, d_range=(50.0, 150.0), realization=0, label="distance"):
    lo, hi = d_range
    if not 0 < lo <= hi:
        raise ConfigError("distance range must satisfy 0 < lo <= hi")
    return rng_stream(seed, label, realization).uniform(lo, hi, size=K)


def draw_fading(seed, K, N, grid, d=None, gamma=2.7, realization=0, label="fading"):
    """Independent CN(0, 1) fading per subcarrier.

    Each subcarrier ``i`` uses its own substream and draws element by
    element, so the first ``N'`` columns of a wide draw coincide with a
    narrow draw of ``N'`` columns; spacing sweeps rely on this.
    """
    if K < 1 or N < 1:
        raise ValueError("K and N must be >= 1")
    F = np.empty((grid.size, K, N), dtype=complex)
    for i in range(grid.size):
        x = rng_stream(seed, label, realization, i).standard_normal((N, K, 2))
        F[i] = ((x[..., 0] + 1j * x[..., 1]) * np.sqrt(0.5)).T
    if d is None:
        d = draw_distances(seed, K, realization=realization)
    d = np.asarray(d, dtype=float)
    if d.shape != (K,) or np.any(d <= 0):
        raise ConfigError("need one positive distance per user")
    return FadingRealization(F=F, seed=seed, d=d, gamma=float(gamma))


def receive_gain_factor(f, params=ChuParams()):
    """Receive-antenna factor of the transimpedance (ohm^1/2)."""
    wa = 2 * np.pi * np.asarray(f, dtype=float) * params.a
    return wa / np.sqrt(wa**2 + params.c**2) * np.sqrt(params.R_a)


def transimpedance(f, F, Z_T, d, gamma, params=ChuParams()):
    """Physical downlink channel ``Z_RT`` (K x N) at one frequency."""
    F = np.atleast_2d(F)
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0):
        raise ConfigError("distances must be positive")
    root = psd_sqrt(np.real(Z_T))
    scale = params.c / (2 * np.pi * f) * receive_gain_factor(f, params)
    return scale * (d ** (-gamma / 2))[:, None] * (F @ root)


@dataclass(frozen=True)
class LoadModel:
    R_L: np.ndarray  # K x K diagonal
    R: float

    def __post_init__(self):
        if np.any(np.diag(self.R_L) <= 0) or self.R <= 0:
            raise ConfigError("load and source resistances must be positive")

    @classmethod
    def matched(cls, K, params=ChuParams(), R=None):
        return cls(R_L=np.eye(K) * params.R_a, R=params.R_a if R is None else R)


IDENTITY_RTOL = 1e-10


def equivalent_channel(Z_RT, Z_T, Z_R, loads):
    """Return ``(H_eq, A, H_tilde)`` for one subcarrier."""
    K, N = Z_RT.shape
    # (Z_T + R I) is symmetric, so Z_RT (Z_T + R I)^-1 = [(Z_T + R I)^-1 Z_RT^T]^T
    M = Z_T + loads.R * np.eye(N)
    direct = solve(M, Z_RT.T, "Z_T + R I").T
    A = solve(loads.R_L + Z_R, loads.R_L.T, "R_L + Z_R").T  # R_L (R_L + Z_R)^-1
    H_eq = A @ direct
    H_tilde = solve(A, H_eq, "A")
    scale = np.linalg.norm(direct)
    if np.linalg.norm(H_tilde - direct) > IDENTITY_RTOL * max(scale, np.finfo(float).tiny):
        raise NumericalDomainError("normalised channel identity violated")
    return H_eq, A, H_tilde


@dataclass(frozen=True)
class EquivalentChannelSet:
    """Per-subcarrier normalised channel, noise variance and noise colouring."""

    H_tilde: np.ndarray  # (S, K, N)
    sigma2: np.ndarray  # (S,)
    A: np.ndarray  # (S, K, K)
    grid: SubcarrierGrid
    H_eq: np.ndarray | None = None

    @property
    def K(self):
        return self.H_tilde.shape[1]

    @property
    def N(self):
        return self.H_tilde.shape[2]

    def with_noise(self, sigma2):
        sigma2 = np.broadcast_to(np.asarray(sigma2, dtype=float), (self.grid.size,)).copy()
        if np.any(sigma2 <= 0):
            raise ConfigError("noise variance must be positive")
        return EquivalentChannelSet(self.H_tilde, sigma2, self.A, self.grid, self.H_eq)

    def user_gains(self):
        """``||h_tilde_{i,k}||^2`` as an (S, K) array."""
        return np.sum(np.abs(self.H_tilde) ** 2, axis=2)


def synthesize(geom, grid, fading, params=ChuParams(), loads=None, coupled=True,
               sigma2=None, check_identity=True):
    """Build the equivalent channel set for one geometry and fading draw.

    Vectorised over subcarriers; equivalent to calling
    :func:`transimpedance` and :func:`equivalent_channel` per subcarrier.
    """
    K, N = fading.K, geom.N
    if loads is None:
        loads = LoadModel.matched(K, params)
    F = fading.columns(N)
    Z_T = build_zt_stack(grid.freqs, geom, params, coupled)
    # batched principal square root of Re Z_T with the same clamping policy
    w, Q = np.linalg.eigh(Z_T.real)
    span = np.maximum(np.abs(w[:, :1]), np.abs(w[:, -1:]))
    if np.any(w < -1e-9 * span):
        raise NumericalDomainError("Re Z_T is not PSD")
    root = (Q * np.sqrt(np.clip(w, 0, None))[:, None, :]) @ np.swapaxes(Q, 1, 2)
    scale = params.c / (2 * np.pi * grid.freqs) * receive_gain_factor(grid.freqs, params)
    Z_RT = scale[:, None, None] * (fading.d ** (-fading.gamma / 2))[None, :, None] * (F @ root)
    Mt = Z_T + loads.R * np.eye(N)
    direct = np.swapaxes(np.linalg.solve(Mt, np.swapaxes(Z_RT, 1, 2)), 1, 2)
    Z_R = self_impedance(grid.freqs, params)[:, None, None] * np.eye(K)
    RL = loads.R_L[None]
    A = np.swapaxes(np.linalg.solve(np.swapaxes(RL + Z_R, 1, 2), np.swapaxes(RL, 1, 2)), 1, 2)
    H_eq = A @ direct
    H_tilde = np.linalg.solve(A, H_eq)
    if check_identity:
        err = np.linalg.norm(H_tilde - direct, axis=(1, 2))
        ref = np.linalg.norm(direct, axis=(1, 2))
        if np.any(err > IDENTITY_RTOL * np.maximum(ref, np.finfo(float).tiny)):
            raise NumericalDomainError("normalised channel identity violated")
    if sigma2 is None:
        sigma2 = np.ones(grid.size)
    sigma2 = np.broadcast_to(np.asarray(sigma2, dtype=float), (grid.size,)).copy()
    return EquivalentChannelSet(H_tilde=H_tilde, sigma2=sigma2, A=A, grid=grid, H_eq=H_eq)


def mutual_information(H, W, sigma2, A=None):
    """Gaussian mutual information (bits/s/Hz) of ``y = H W s + A n``.

    Evaluated as ``log2|H W W^H H^H + s2 A A^H| - log2|s2 A A^H|``; with
    ``A = None`` the noise is white.
    """
    if sigma2 <= 0:
        raise ValueError("sigma2 must be positive")
    H = np.atleast_2d(H)
    W = np.atleast_2d(W)
    K = H.shape[0]
    noise = sigma2 * (np.eye(K) if A is None else A @ A.conj().T)
    S = H @ W
    signal = S @ S.conj().T
    sign1, ld1 = np.linalg.slogdet(signal + noise)
    sign0, ld0 = np.linalg.slogdet(noise)
    if abs(sign1.imag) > 1e-9 or sign1.real <= 0 or abs(sign0.imag) > 1e-9 or sign0.real <= 0:
        raise NumericalDomainError("covariance determinant is not positive")
    return float((ld1 - ld0) / np.log(2))


def normalized_mutual_information(H, W, sigma2, A):
    """Same quantity through the normalised model ``A^-1 H``."""
    return mutual_information(np.linalg.solve(A, H), W, sigma2, None)


def _noise_from_gain(target_snr_db, grid, gain, P_T, band):
    if not gain > 0:
        raise ConfigError("calibration ensemble has zero mean gain")
    sigma2 = P_T / grid.size * gain / 10 ** (target_snr_db / 10)
    if band == LOW:
        return float(sigma2), float(sigma2 * grid.band_ratio)
    return float(sigma2 / grid.band_ratio), float(sigma2)


def calibrate_noise(target_snr_db, grid, sample_channels, P_T):
    """Noise variances ``(sigma2_L, sigma2_H)`` hitting a target mean SNR.

    The SNR is that of uniform per-subcarrier power ``P_T / (M_L + M_H)``
    on the ensemble-mean low-band gain. High-band noise scales with the
    bandwidth ratio. If the grid has no low band the high band anchors.
    """
    sample_channels = list(sample_channels)
    if not sample_channels:
        raise ConfigError("calibration ensemble is empty")
    band = LOW if grid.M_L else HIGH
    sl = grid.band_slice(band)
    gain = np.mean([np.mean(ch.user_gains()[sl]) for ch in sample_channels])
    return _noise_from_gain(target_snr_db, grid, gain, P_T, band)


def mean_path_gain(d_range, gamma):
    """``E[d^-gamma]`` for ``d`` uniform on ``d_range``."""
    lo, hi = map(float, d_range)
    if not 0 < lo <= hi:
        raise ConfigError("distance range must satisfy 0 < lo <= hi")
    if hi == lo:
        return lo ** -gamma
    if gamma == 1:
        return math.log(hi / lo) / (hi - lo)
    return (hi ** (1 - gamma) - lo ** (1 - gamma)) / ((1 - gamma) * (hi - lo))


def single_element_gain(f, params=ChuParams(), R=None, d_range=(50.0, 150.0), gamma=2.7):
    """Expected ``|h_tilde|^2`` of one isolated element driven from source ``R``."""
    R = params.R_a if R is None else R
    z = self_impedance(f, params)
    scale = params.c / (2 * np.pi * np.asarray(f, dtype=float)) * receive_gain_factor(f, params)
    return scale**2 * mean_path_gain(d_range, gamma) * np.real(z) / np.abs(z + R) ** 2


def calibrate_noise_reference(target_snr_db, grid, P_T, params=ChuParams(), R=None,
                              d_range=(50.0, 150.0), gamma=2.7):
    """Noise variances fixed by a single isolated element as SNR reference.

    Same convention as :func:`calibrate_noise` but with the exact ensemble
    mean of a one-element link, so the noise floor does not depend on the
    array under test.
    """
    band = LOW if grid.M_L else HIGH
    gain = float(np.mean(single_element_gain(grid.freqs[grid.band_slice(band)], params, R,
                                             d_range, gamma)))
    return _noise_from_gain(target_snr_db, grid, gain, P_T, band)


def noise_vector(grid, sigma2_L, sigma2_H):
    return np.where(grid.is_high, sigma2_H, sigma2_L).astype(float)
