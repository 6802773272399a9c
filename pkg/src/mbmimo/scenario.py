"""Scenario configuration (JSON, versioned) and the resolved simulation context."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from functools import cached_property
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .allocation import PowerScheme, UserCapability, inner_optimize
from .antenna import ArrayGeometry, ArrayKind, ChuParams
from .channel import (HIGH, LOW, ConfigError, LoadModel, build_grid, calibrate_noise_reference,
                      draw_distances, draw_fading, noise_vector, synthesize)
from .numerics import rng_stream
from .search import ObjectiveHandle, SearchConfig

SCHEMA_VERSION = 1

Kind = Literal["colinear", "parallel", "planar"]


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ArraySection(_Section):
    kind: Kind
    D: float = Field(gt=0)
    D2: float | None = Field(default=None, gt=0)
    delta: float | None = Field(default=None, gt=0)
    delta2: float | None = Field(default=None, gt=0)
    a: float = Field(default=0.0025, gt=0)
    R_a: float = Field(default=50.0, gt=0)
    R: float | None = Field(default=None, gt=0)
    coupled: bool = True

    @model_validator(mode="after")
    def _planar_needs_height(self):
        if self.kind == "planar" and self.D2 is None:
            raise ValueError("planar arrays need D2")
        if self.D < 2 * self.a:
            raise ValueError("aperture D is shorter than the minimum spacing 2a")
        return self


class BandsSection(_Section):
    f_L: float = Field(gt=0)
    f_H: float = Field(gt=0)
    B_L: float = Field(gt=0)
    B_H: float = Field(gt=0)
    M_L: int = Field(ge=0)
    M_H: int = Field(ge=0)


class UsersSection(_Section):
    K: int = Field(ge=1)
    d_min: float = Field(default=50.0, gt=0)
    d_max: float = Field(default=150.0, gt=0)
    gamma: float = Field(default=2.7, gt=0)
    case: Literal[1, 2, 3, 4] | None = 1
    eta: list[int] | None = None
    n_window: list[int] | None = None
    allowed_bands: list[list[Literal["L", "H"]]] | None = None

    @model_validator(mode="after")
    def _check(self):
        if self.d_max < self.d_min:
            raise ValueError("d_max must be >= d_min")
        for name in ("eta", "n_window", "allowed_bands"):
            value = getattr(self, name)
            if value is not None and len(value) != self.K:
                raise ValueError(f"{name} needs one entry per user (K={self.K})")
        if self.case is None and self.eta is None:
            raise ValueError("give either a capability case or explicit eta lists")
        return self


class PowerSection(_Section):
    P_T: float = Field(gt=0)
    scheme: Literal["jpa", "bwpa", "cwpa"] = "jpa"
    beta: float = Field(default=1.0, ge=0)


class InnerSection(_Section):
    tol: float = Field(default=1e-4, gt=0)
    max_iter: int = Field(default=100, ge=1)


class SearchSection(_Section):
    C1: float = 0.8
    C2: float = 2.0
    C3: float = 2.0
    zeta: int = Field(default=10, ge=1)
    I_PS: int = Field(default=15, ge=0)
    delta_tilde: float | None = Field(default=None, gt=0)
    bisection_tol: float = Field(default=1e-4, gt=0)
    ga_step: float = Field(default=2e-3, gt=0)
    ga_min_improvement: float = Field(default=1e3, gt=0)
    fd_step: float = Field(default=1e-4, gt=0)


class SeedsSection(_Section):
    master: int = Field(default=0, ge=0, lt=2**64)
    ensemble_size: int = Field(default=5, ge=1)


class SweepSection(_Section):
    variable: Literal["spacing", "subcarriers_per_band", "snr_db", "beta"]
    values: list[float] = Field(min_length=1)
    values2: list[float] | None = None  # second planar spacing axis
    repetitions: int = Field(default=5, ge=1)


class ComparisonSection(_Section):
    """Schemes run side by side on shared realizations."""

    cwpa: bool = True
    bwpa_betas: list[float] = Field(default_factory=lambda: [1.0])
    jpa_cases: list[Literal[1, 2, 3, 4]] = Field(default_factory=lambda: [1, 2, 3, 4])


class BodeSection(_Section):
    f_min: float = Field(default=1e9, gt=0)
    f_max: float = Field(default=20e9, gt=0)
    n_freq: int = Field(default=39, ge=2)
    repetitions: int = Field(default=20, ge=1)


class CompareSection(_Section):
    snr_values: list[float] = Field(default_factory=lambda: [10.0], min_length=1)
    repetitions: int = Field(default=20, ge=1)


class ScenarioConfig(_Section):
    schema_version: Literal[1] = SCHEMA_VERSION
    preset: Literal["paper"] | None = None
    command: str | None = None
    mode: Literal["offline", "online"] = "offline"
    realization: int = Field(default=0, ge=0)
    array: ArraySection
    kinds: list[Kind] | None = None
    bands: BandsSection
    users: UsersSection
    power: PowerSection
    snr_db: float
    inner: InnerSection = Field(default_factory=InnerSection)
    search: SearchSection = Field(default_factory=SearchSection)
    seeds: SeedsSection = Field(default_factory=SeedsSection)
    sweep: SweepSection | None = None
    comparison: ComparisonSection = Field(default_factory=ComparisonSection)
    bode: BodeSection = Field(default_factory=BodeSection)
    compare: CompareSection = Field(default_factory=CompareSection)

    @field_validator("kinds")
    @classmethod
    def _nonempty(cls, v):
        if v is not None and not v:
            raise ValueError("kinds must not be empty")
        return v


PRESETS = {
    "paper": {
        "array": {"kind": "colinear", "D": 0.2, "a": 0.0025, "R_a": 50.0},
        "bands": {"f_L": 3.5e9, "f_H": 17.5e9, "B_L": 120e3, "B_H": 480e3, "M_L": 10, "M_H": 10},
        "users": {"K": 4, "d_min": 50.0, "d_max": 150.0, "gamma": 2.7, "case": 1},
        "power": {"P_T": 2.0, "scheme": "jpa", "beta": 1.0},
        "snr_db": 10.0,
    }
}


def _merge(base, override):
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def format_validation_error(err):
    lines = []
    for e in err.errors():
        loc = ".".join(str(p) for p in e["loc"]) or "<root>"
        lines.append(f"{loc}: {e['msg']}")
    return "\n".join(lines)


def parse_config(data):
    """Validate a config mapping, merging a named preset underneath it.

    Raises :class:`ConfigError` whose message names the offending fields
    in dotted form (for example ``power.P_T: Field required``).
    """
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    preset = data.get("preset")
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"preset: unknown preset {preset!r}")
        data = _merge(PRESETS[preset], data)
    try:
        return ScenarioConfig.model_validate(data)
    except ValidationError as err:
        raise ConfigError(format_validation_error(err)) from None


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as err:
            raise ConfigError(f"{path}: invalid JSON ({err})") from None
    return parse_config(data)


def _capabilities_for_case(case, K, windows):
    n_high = int(round(0.75 * K)) if case in (2, 4) else int(round(0.25 * K))
    caps = []
    for k in range(K):
        w = int(windows[k])
        if case == 1:
            caps.append(UserCapability(2, w, (LOW, HIGH)))
        elif case in (2, 3):
            band = (HIGH,) if k < n_high else (LOW,)
            caps.append(UserCapability(1, w, band))
        else:
            caps.append(UserCapability(2 if k < n_high else 1, w, (LOW, HIGH)))
    return caps


@dataclass
class Scenario:
    """Resolved scenario: physical parameters, grid, noise and realizations."""

    config: ScenarioConfig

    def __post_init__(self):
        cfg = self.config
        self.params = ChuParams(a=cfg.array.a, R_a=cfg.array.R_a)
        self.R = cfg.array.R if cfg.array.R is not None else cfg.array.R_a
        self.K = cfg.users.K
        try:
            self.grid = build_grid(cfg.bands.M_L, cfg.bands.M_H, cfg.bands.f_L, cfg.bands.f_H,
                                   cfg.bands.B_L, cfg.bands.B_H)
        except ConfigError as err:
            raise ConfigError(f"bands: {err}") from None
        self.loads = LoadModel.matched(self.K, self.params, self.R)
        self.d_range = (cfg.users.d_min, cfg.users.d_max)

    @classmethod
    def from_dict(cls, data):
        return cls(parse_config(data))

    def replace(self, **updates):
        """Copy with top-level or dotted (``"bands.M_L"``) overrides."""
        data = self.config.model_dump()
        for key, value in updates.items():
            node = data
            *path, leaf = key.split(".")
            for p in path:
                node = node[p]
            node[leaf] = value
        data.pop("preset", None)
        return Scenario(parse_config(data))

    @property
    def seed(self):
        return self.config.seeds.master

    @property
    def P_T(self):
        return self.config.power.P_T

    @property
    def scheme(self):
        return PowerScheme(self.config.power.scheme, self.config.power.beta)

    @property
    def kinds(self):
        return list(self.config.kinds or [self.config.array.kind])

    @cached_property
    def sigma2(self):
        cfg = self.config
        s2L, s2H = calibrate_noise_reference(cfg.snr_db, self.grid, self.P_T, self.params,
                                             self.R, self.d_range, cfg.users.gamma)
        return noise_vector(self.grid, s2L, s2H)

    def search_config(self, ensemble_size=None):
        s = self.config.search
        return SearchConfig(C1=s.C1, C2=s.C2, C3=s.C3, zeta=s.zeta, I_PS=s.I_PS,
                            delta_tilde=s.delta_tilde, bisection_tol=s.bisection_tol,
                            ga_step=s.ga_step, ga_min_improvement=s.ga_min_improvement,
                            fd_step=s.fd_step,
                            ensemble_size=ensemble_size or self.config.seeds.ensemble_size)

    # geometry -------------------------------------------------------------
    def geometry(self, delta, kind=None):
        kind = ArrayKind(kind or self.config.array.kind)
        arr = self.config.array
        if kind is ArrayKind.PLANAR:
            d1, d2 = (delta if np.ndim(delta) else (delta, delta))
            return ArrayGeometry.planar(float(d1), float(d2), arr.D, arr.D2, arr.a)
        return ArrayGeometry.linear(kind, float(delta), arr.D, arr.a)

    def bounds(self, kind=None):
        kind = ArrayKind(kind or self.config.array.kind)
        arr = self.config.array
        lo = 2 * arr.a
        if kind is ArrayKind.PLANAR:
            return ((lo, arr.D), (lo, arr.D2 - arr.a))
        return (lo, arr.D)

    def max_elements(self, kind=None):
        kind = kind or self.config.array.kind
        return self.geometry(2 * self.config.array.a if kind != "planar"
                             else (2 * self.config.array.a,) * 2, kind).N

    def default_delta(self, kind=None):
        kind = kind or self.config.array.kind
        arr = self.config.array
        d1 = arr.delta if arr.delta is not None else 2 * arr.a
        if kind == "planar":
            return (d1, arr.delta2 if arr.delta2 is not None else 2 * arr.a)
        return d1

    # randomness -----------------------------------------------------------
    def realization(self, r, stream="eval", n_columns=None):
        """Fading and distances of realization ``r`` (wide enough for any spacing)."""
        N = n_columns or max(self.max_elements(k) for k in self.kinds)
        gamma = self.config.users.gamma
        d = draw_distances(self.seed, self.K, self.d_range, r, label=f"{stream}-distance")
        return draw_fading(self.seed, self.K, N, self.grid, d=d, gamma=gamma, realization=r,
                           label=f"{stream}-fading")

    def window_lengths(self, r, stream="eval"):
        S = self.grid.size
        return rng_stream(self.seed, f"{stream}-window", r).integers(1, S + 1, size=self.K)

    def capabilities(self, r, case=None, stream="eval"):
        users = self.config.users
        if case is None and users.case is None:
            allowed = users.allowed_bands or [[LOW, HIGH]] * self.K
            windows = users.n_window or [None] * self.K
            return [UserCapability(int(e), w, tuple(b))
                    for e, w, b in zip(users.eta, windows, allowed)]
        return _capabilities_for_case(case or users.case, self.K,
                                      self.window_lengths(r, stream))

    # evaluation -----------------------------------------------------------
    def channels(self, geom, fading, coupled=None):
        coupled = self.config.array.coupled if coupled is None else coupled
        return synthesize(geom, self.grid, fading, self.params, self.loads, coupled,
                          sigma2=self.sigma2)

    def sum_rate(self, geom, fading, caps=None, scheme=None, coupled=None):
        ch = self.channels(geom, fading, coupled)
        state = inner_optimize(ch, scheme or self.scheme, caps, self.P_T,
                               tol=self.config.inner.tol, max_iter=self.config.inner.max_iter)
        return state.sum_rate

    def objective(self, indices, stream="eval", kind=None):
        """Ensemble-mean optimal sum rate as a function of spacing.

        The realizations are drawn once and shared by every evaluation.
        """
        draws = [(self.realization(r, stream), self.capabilities(r, stream=stream))
                 for r in indices]
        handle = None

        def g(delta):
            geom = self.geometry(delta, kind)
            total = 0.0
            for fading, caps in draws:
                total += self.sum_rate(geom, fading, caps)
                handle.count_inner_run()
            return total / len(draws)

        handle = ObjectiveHandle(g)
        return handle
