"""TM1 (Chu) antenna elements and coupled array impedance matrices."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .numerics import NumericalDomainError, generalized_eig_max

SPEED_OF_LIGHT = 2.99792458e8
# floor(D / delta) must not lose an element to rounding when D / delta is integral
_FLOOR_EPS = 1e-9


class GeometryError(ValueError):
    """Invalid array geometry or element index."""


class ArrayKind(str, Enum):
    COLINEAR = "colinear"
    PARALLEL = "parallel"
    PLANAR = "planar"


@dataclass(frozen=True)
class ChuParams:
    """Element radius ``a`` (m) and equivalent resistance ``R_a`` (ohm)."""

    a: float = 0.0025
    R_a: float = 50.0
    c: float = SPEED_OF_LIGHT

    def __post_init__(self):
        if not (self.a > 0 and self.R_a > 0):
            raise ValueError("ChuParams requires a > 0 and R_a > 0")

    @property
    def min_spacing(self):
        return 2.0 * self.a


def _count(length, spacing):
    return int(math.floor(length / spacing + _FLOOR_EPS)) + 1


@dataclass(frozen=True)
class ArrayGeometry:
    """Uniform array inside a fixed aperture.

    Linear arrays use ``delta1`` and ``D1``. Planar arrays are ``N1 x N2``
    with rows along the first dimension; the vertical extent reserves one
    element radius, ``(N2 - 1) * delta2 + a <= D2``.
    """

    kind: ArrayKind
    delta1: float
    D1: float
    delta2: float | None = None
    D2: float | None = None
    a: float = 0.0025
    N1: int = field(init=False)
    N2: int = field(init=False)

    def __post_init__(self):
        kind = ArrayKind(self.kind)
        object.__setattr__(self, "kind", kind)
        dmin = 2.0 * self.a
        if self.a <= 0:
            raise GeometryError("element radius must be positive")
        if not (self.delta1 >= dmin * (1 - _FLOOR_EPS)):
            raise GeometryError(f"delta1={self.delta1} below minimum spacing 2a={dmin}")
        if self.delta1 > self.D1 * (1 + _FLOOR_EPS):
            raise GeometryError(f"delta1={self.delta1} exceeds aperture D1={self.D1}")
        object.__setattr__(self, "N1", _count(self.D1, self.delta1))
        if kind is ArrayKind.PLANAR:
            if self.delta2 is None or self.D2 is None:
                raise GeometryError("planar arrays need delta2 and D2")
            if not (self.delta2 >= dmin * (1 - _FLOOR_EPS)):
                raise GeometryError(f"delta2={self.delta2} below minimum spacing 2a={dmin}")
            if self.delta2 > (self.D2 - self.a) * (1 + _FLOOR_EPS):
                raise GeometryError(f"delta2={self.delta2} exceeds D2 - a={self.D2 - self.a}")
            object.__setattr__(self, "N2", _count(self.D2 - self.a, self.delta2))
        else:
            object.__setattr__(self, "N2", 1)

    @property
    def N(self):
        return self.N1 * self.N2

    @classmethod
    def linear(cls, kind, delta, D, a=0.0025):
        return cls(ArrayKind(kind), delta, D, a=a)

    @classmethod
    def single(cls, a=0.0025):
        """One isolated element (used as the noise-calibration reference)."""
        geom = cls(ArrayKind.COLINEAR, 2 * a, 2 * a, a=a)
        object.__setattr__(geom, "N1", 1)
        return geom

    @classmethod
    def planar(cls, delta1, delta2, D1, D2, a=0.0025):
        return cls(ArrayKind.PLANAR, delta1, D1, delta2, D2, a=a)

    def spacing_bounds(self):
        """Feasible box for the spacing variable(s)."""
        lo = 2.0 * self.a
        if self.kind is ArrayKind.PLANAR:
            return (lo, self.D1), (lo, self.D2 - self.a)
        return (lo, self.D1)


@dataclass(frozen=True)
class PairPlacement:
    delta_pq: float
    alpha: float
    beta: float


def self_impedance(f, params=ChuParams()):
    """Input impedance of a TM1 element at frequency ``f`` (Hz)."""
    f_arr = np.asarray(f, dtype=float)
    if not np.all(np.isfinite(f_arr)) or np.any(f_arr <= 0):
        raise NumericalDomainError("frequency must be finite and positive")
    c, a = params.c, params.a
    wa = 2 * np.pi * f_arr * a
    z = (c**2 + 1j * wa * c - wa**2) / (1j * wa * c - wa**2) * params.R_a
    return z if np.ndim(z) else complex(z)


def _planar_offsets(p, q, N1):
    """Column and row offsets between planar elements p and q (row-major)."""
    dcol = (p - q) + N1 * (q // N1 - p // N1)
    drow = p // N1 - q // N1
    return dcol, drow


def pair_placement(geom, p, q):
    """Separation and orientation angles of elements ``p`` and ``q``."""
    N = geom.N
    if not (0 <= p < N and 0 <= q < N):
        raise GeometryError(f"element index out of range for N={N}: ({p}, {q})")
    if p == q:
        raise GeometryError("pair placement needs two distinct elements")
    if geom.kind is ArrayKind.COLINEAR:
        return PairPlacement(abs(p - q) * geom.delta1, math.pi, 0.0)
    if geom.kind is ArrayKind.PARALLEL:
        return PairPlacement(abs(p - q) * geom.delta1, math.pi / 2, math.pi / 2)
    dcol, drow = _planar_offsets(p, q, geom.N1)
    dist = math.sqrt((dcol * geom.delta1) ** 2 + (drow * geom.delta2) ** 2)
    if dcol == 0:
        beta = math.pi / 2
    else:
        beta = math.atan(abs(drow / dcol) * geom.delta2 / geom.delta1)
    return PairPlacement(dist, math.pi - beta, beta)


def _coupling_kernel(k0, dist, sin_prod, cos_prod):
    x = 1j * k0 * dist
    inv1, inv2, inv3 = 1 / x, 1 / x**2, 1 / x**3
    return (0.5 * sin_prod * (inv1 + inv2 + inv3) + cos_prod * (inv2 + inv3)) * np.exp(-x)


def mutual_impedance(f, params, place, Zp, Zq):
    """Mutual impedance between two TM1 elements with the given placement."""
    if not place.delta_pq > 0:
        raise NumericalDomainError("element separation must be positive")
    k0 = 2 * np.pi * f / params.c
    sin_prod = math.sin(place.alpha) * math.sin(place.beta)
    cos_prod = math.cos(place.alpha) * math.cos(place.beta)
    scale = -3.0 * math.sqrt(np.real(Zp) * np.real(Zq))
    return complex(scale * _coupling_kernel(k0, place.delta_pq, sin_prod, cos_prod))


def _pair_tables(geom):
    """Distance and angle-product tables over all element pairs."""
    N = geom.N
    idx = np.arange(N)
    p, q = np.meshgrid(idx, idx, indexing="ij")
    if geom.kind is ArrayKind.PLANAR:
        dcol, drow = _planar_offsets(p, q, geom.N1)
        dist = np.hypot(dcol * geom.delta1, drow * geom.delta2)
        with np.errstate(divide="ignore", invalid="ignore"):
            beta = np.where(dcol == 0, np.pi / 2,
                            np.arctan(np.abs(drow / np.where(dcol == 0, 1, dcol))
                                      * geom.delta2 / geom.delta1))
        alpha = np.pi - beta
        sin_prod = np.sin(alpha) * np.sin(beta)
        cos_prod = np.cos(alpha) * np.cos(beta)
    else:
        dist = np.abs(p - q) * geom.delta1
        if geom.kind is ArrayKind.COLINEAR:
            sin_prod, cos_prod = np.zeros_like(dist), -np.ones_like(dist)
        else:
            sin_prod, cos_prod = np.ones_like(dist), np.zeros_like(dist)
    return dist, sin_prod, cos_prod


def build_zt_stack(freqs, geom, params=ChuParams(), coupled=True):
    """Transmit impedance matrices for several frequencies, shape (F, N, N)."""
    freqs = np.atleast_1d(np.asarray(freqs, dtype=float))
    z_self = np.atleast_1d(self_impedance(freqs, params))
    N = geom.N
    Z = np.zeros((freqs.size, N, N), dtype=complex)
    Z[:, np.arange(N), np.arange(N)] = z_self[:, None]
    if not coupled or N == 1:
        return Z
    dist, sin_prod, cos_prod = _pair_tables(geom)
    off = ~np.eye(N, dtype=bool)
    k0 = 2 * np.pi * freqs / params.c
    kern = _coupling_kernel(k0[:, None], dist[off][None, :],
                            sin_prod[off][None, :], cos_prod[off][None, :])
    # identical elements: sqrt(Re Zp Re Zq) = Re Z
    Z[:, off] = -3.0 * z_self.real[:, None] * kern
    return 0.5 * (Z + np.swapaxes(Z, 1, 2))


def build_zt(f, geom, params=ChuParams(), coupled=True):
    """N x N complex symmetric transmit impedance matrix at ``f``."""
    return build_zt_stack([f], geom, params, coupled)[0]


def build_zr(f, K, params=ChuParams()):
    """K x K receive impedance matrix; distant users do not couple."""
    if K < 1:
        raise ValueError("K must be >= 1")
    return np.eye(K, dtype=complex) * self_impedance(f, params)


def max_radiation_efficiency(Z_T, R, return_current=False):
    """Largest achievable radiated/consumed power ratio of the driven array.

    This is the maximum generalized Rayleigh quotient of the pair
    ``(Re Z_T, Re Z_T + R I)``; with ``return_current`` the maximising
    (unit-norm, real) drive current is returned as well.
    """
    A = np.real(np.atleast_2d(Z_T))
    B = A + R * np.eye(A.shape[0])
    result = generalized_eig_max(A, B, return_vector=return_current)
    return result
