"""Antenna-spacing search: particle swarm, Swan bracketing, golden section
and projected gradient ascent, plus the offline and online drivers."""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import check_interval, check_positive
from .numerics import rng_stream

INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0  # 0.618...


class ObjectiveHandle:
    """Callable ``g(delta)`` that records every evaluation.

    ``func`` maps a spacing (float, or a length-2 array for planar arrays)
    to an averaged optimal sum rate. ``runs_per_eval`` is the number of
    inner optimisations one evaluation costs; ``func`` may instead report
    them itself through :meth:`count_inner_run`.
    """

    def __init__(self, func, runs_per_eval=None):
        self.func = func
        self.runs_per_eval = runs_per_eval
        self.evaluations = 0
        self.inner_runs = 0
        self.trace = []
        self._lock = threading.Lock()

    def count_inner_run(self, n=1):
        with self._lock:
            self.inner_runs += n

    def __call__(self, x):
        x = float(x) if np.ndim(x) == 0 else tuple(float(v) for v in np.ravel(x))
        value = float(self.func(x if isinstance(x, float) else np.array(x)))
        with self._lock:
            self.evaluations += 1
            if self.runs_per_eval is not None:
                self.inner_runs += self.runs_per_eval
            self.trace.append((x, value))
        return value

    def best(self):
        return max(self.trace, key=lambda t: t[1])


@dataclass
class SearchConfig:
    C1: float = 0.8
    C2: float = 2.0
    C3: float = 2.0
    zeta: int = 10
    I_PS: int = 15
    delta_tilde: float | None = None  # None: 5% of the domain width
    bisection_tol: float = 1e-4
    ga_step: float = 2e-3
    ga_min_improvement: float = 1e3
    ga_max_iter: int = 50
    fd_step: float = 1e-4
    ensemble_size: int = 5

    def __post_init__(self):
        if self.zeta < 1 or self.I_PS < 0 or self.ensemble_size < 1:
            raise ValueError("zeta and ensemble_size must be >= 1, I_PS >= 0")
        for name in ("bisection_tol", "ga_step", "ga_min_improvement", "fd_step"):
            check_positive(getattr(self, name), name)


@dataclass
class SwarmResult:
    x: np.ndarray | float
    value: float
    gbest_history: list
    pbest_history: list


def particle_swarm(g, domain, cfg=SearchConfig(), seed=0):
    """Global search with ``cfg.zeta`` particles for ``cfg.I_PS`` iterations.

    Initial positions are Latin-hypercube samples of the domain, so even a
    handful of particles covers it.
    ``domain`` is ``(lo, hi)`` or a sequence of such pairs. Particles leaving
    the domain are clipped to its margin. Costs ``zeta * (1 + I_PS)``
    evaluations of ``g``. ``seed`` may be an int or a tuple ``(int, *labels)``.
    """
    bounds = np.atleast_2d(np.asarray(domain, dtype=float))
    lo, hi = bounds[:, 0], bounds[:, 1]
    for a, b in zip(lo, hi):
        check_interval(a, b)
    dim = lo.size
    seed, *extra = seed if isinstance(seed, tuple) else (seed,)
    rng = rng_stream(seed, "pso", *extra)
    # Latin-hypercube start: uniform marginals, one particle per stratum
    strata = np.stack([rng.permutation(cfg.zeta) for _ in range(dim)], axis=1)
    x = lo + (strata + rng.random((cfg.zeta, dim))) / cfg.zeta * (hi - lo)
    v = (rng.random((cfg.zeta, dim)) - 0.5) * (hi - lo)

    def evaluate(points):
        return np.array([g(p[0] if dim == 1 else p) for p in points])

    pbest, pval = x.copy(), evaluate(x)
    j = int(np.argmax(pval))
    gbest, gval = pbest[j].copy(), pval[j]
    gbest_hist, pbest_hist = [gval], [pval.copy()]
    for _ in range(cfg.I_PS):
        r = rng.random((cfg.zeta, dim))
        s = rng.random((cfg.zeta, dim))
        v = cfg.C1 * v + cfg.C2 * r * (pbest - x) + cfg.C3 * s * (gbest - x)
        x = np.clip(x + v, lo, hi)
        val = evaluate(x)
        better = val > pval
        pbest[better], pval[better] = x[better], val[better]
        j = int(np.argmax(pval))
        gbest, gval = pbest[j].copy(), pval[j]
        gbest_hist.append(gval)
        pbest_hist.append(pval.copy())
    best = float(gbest[0]) if dim == 1 else gbest
    return SwarmResult(best, float(gval), gbest_hist, pbest_hist)


@dataclass
class Bracket:
    L: float
    R: float
    evaluations: int  # 2 + I_SB

    @property
    def extra_evaluations(self):
        return self.evaluations - 2


def swan_bracket(g, delta_0, delta_tilde, domain):
    """Step-doubling bracket ``[L, R]`` around a local maximum of ``g``.

    Starts from ``delta_0`` and ``delta_0 + delta_tilde`` (two evaluations),
    walks in the ascent direction doubling the step until ``g`` drops, and
    clips every probe to ``domain``.
    """
    check_positive(delta_tilde, "delta_tilde")
    lo, hi = check_interval(*domain)
    x0 = min(max(float(delta_0), lo), hi)
    n = 0

    def ev(x):
        nonlocal n
        n += 1
        return g(x)

    f0 = ev(x0)
    xp = min(x0 + delta_tilde, hi)
    fp = ev(xp)
    if xp > x0 and fp > f0:
        direction, prev, cur, fcur = 1.0, x0, xp, fp
    else:
        xm = max(x0 - delta_tilde, lo)
        if xm == x0:
            if xp == x0:
                return Bracket(lo, hi, n)
            return Bracket(x0, xp, n)
        fm = ev(xm)
        if fm > f0:
            direction, prev, cur, fcur = -1.0, x0, xm, fm
        else:
            return Bracket(xm, xp if xp > x0 else x0, n)
    step = delta_tilde
    while True:
        edge = hi if direction > 0 else lo
        if cur == edge:
            return Bracket(*sorted((prev, edge)), n)
        step *= 2.0
        nxt = min(max(cur + direction * step, lo), hi)
        fnext = ev(nxt)
        if fnext < fcur:
            return Bracket(*sorted((prev, nxt)), n)
        prev, cur, fcur = cur, nxt, fnext


@dataclass
class GoldenResult:
    x: float
    L: float
    R: float
    evaluations: int  # I_BS


def golden_section(g, L, R, tol):
    """Golden-section maximisation down to an interval no wider than ``tol``.

    Returns the midpoint of the final interval.
    """
    check_positive(tol, "tol")
    L, R = float(L), float(R)
    if not L < R:
        raise ValueError("golden_section needs L < R")
    if tol >= R - L:
        return GoldenResult(0.5 * (L + R), L, R, 0)
    a, b = L, R
    c = b - INV_PHI * (b - a)
    d = a + INV_PHI * (b - a)
    fc, fd = g(c), g(d)
    n = 2
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - INV_PHI * (b - a)
            if b - a <= tol:
                break
            fc = g(c)
        else:
            a, c, fc = c, d, fd
            d = a + INV_PHI * (b - a)
            if b - a <= tol:
                break
            fd = g(d)
        n += 1
    return GoldenResult(0.5 * (a + b), a, b, n)


@dataclass
class AscentResult:
    x: np.ndarray
    value: float
    iterations: int
    evaluations: int


def gradient_ascent_2d(g, start, box, cfg=SearchConfig()):
    """Projected gradient ascent with central differences and backtracking.

    Steps of length ``cfg.ga_step`` (m) along the normalised gradient; a
    step that does not improve ``g`` is halved. Stops once an accepted step
    gains less than ``cfg.ga_min_improvement`` or the step falls below the
    finite-difference resolution.
    """
    box = np.asarray(box, dtype=float)
    lo, hi = box[:, 0], box[:, 1]
    x = np.asarray(start, dtype=float)
    if x.shape != (2,) or np.any(x < lo) or np.any(x > hi):
        raise ValueError(f"start {start} is outside the feasible box {box.tolist()}")
    n = 0

    def ev(p):
        nonlocal n
        n += 1
        return g(p)

    fx = ev(x)
    h = cfg.fd_step
    step = cfg.ga_step
    iterations = 0
    while iterations < cfg.ga_max_iter:
        iterations += 1
        grad = np.zeros(2)
        for j in range(2):
            e = np.zeros(2)
            e[j] = h
            xp, xm = np.minimum(x + e, hi), np.maximum(x - e, lo)
            if xp[j] > xm[j]:
                grad[j] = (ev(xp) - ev(xm)) / (xp[j] - xm[j])
        norm = np.linalg.norm(grad)
        if norm == 0:
            break
        direction = grad / norm
        gained = None
        while step >= h / 10:
            cand = np.clip(x + step * direction, lo, hi)
            if np.allclose(cand, x, rtol=0, atol=1e-15):
                step *= 0.5
                continue
            fc = ev(cand)
            if fc > fx:
                gained = fc - fx
                x, fx = cand, fc
                break
            step *= 0.5
        if gained is None or gained < cfg.ga_min_improvement:
            break
    return AscentResult(x, fx, iterations, n)


@dataclass
class SearchResult:
    delta_star: float | tuple
    g_star: float
    evaluations: int
    trace: list = field(default_factory=list)
    inner_runs: int = 0
    counts: dict = field(default_factory=dict)


class SpacingSearch(BaseEstimator):
    """Particle swarm seeding followed by a local refinement.

    One-dimensional domains are refined by Swan bracketing and golden
    section search, two-dimensional ones by projected gradient ascent.

    Parameters
    ----------
    C1, C2, C3 : float
        Inertia, cognitive and social coefficients.
    n_particles : int
    n_pso_iter : int
    bracket_step : float or None
        Initial bracket step; ``None`` uses 5% of the domain width.
    tol : float
        Final golden-section interval width (m).
    ga_step, ga_min_improvement, fd_step : float
        Gradient-ascent step (m), stopping gain and finite-difference step (m).
    random_state : int

    Attributes
    ----------
    delta_ : float or ndarray
        Best spacing found (the best evaluated point).
    score_ : float
    n_evaluations_ : int
    counts_ : dict
        Evaluations spent per stage (``pso``, ``bracket``, ``golden`` or
        ``ascent``).
    trace_ : list of (delta, value)
    """

    def __init__(self, C1=0.8, C2=2.0, C3=2.0, n_particles=10, n_pso_iter=15,
                 bracket_step=None, tol=1e-4, ga_step=2e-3, ga_min_improvement=1e3,
                 fd_step=1e-4, random_state=0):
        self.C1 = C1
        self.C2 = C2
        self.C3 = C3
        self.n_particles = n_particles
        self.n_pso_iter = n_pso_iter
        self.bracket_step = bracket_step
        self.tol = tol
        self.ga_step = ga_step
        self.ga_min_improvement = ga_min_improvement
        self.fd_step = fd_step
        self.random_state = random_state

    def _config(self):
        return SearchConfig(C1=self.C1, C2=self.C2, C3=self.C3, zeta=self.n_particles,
                            I_PS=self.n_pso_iter, delta_tilde=self.bracket_step,
                            bisection_tol=self.tol, ga_step=self.ga_step,
                            ga_min_improvement=self.ga_min_improvement, fd_step=self.fd_step)

    def fit(self, objective, bounds):
        g = objective if isinstance(objective, ObjectiveHandle) else ObjectiveHandle(objective)
        before = g.evaluations
        result = run_search(g, bounds, self._config(), self.random_state)
        self.delta_ = result.delta_star
        self.score_ = result.g_star
        self.n_evaluations_ = g.evaluations - before
        self.counts_ = result.counts
        self.trace_ = result.trace
        return self


def run_search(g, bounds, cfg, seed):
    """Full two-stage search on an :class:`ObjectiveHandle`."""
    bounds = np.atleast_2d(np.asarray(bounds, dtype=float))
    start_evals = g.evaluations
    start_trace = len(g.trace)
    swarm = particle_swarm(g, bounds, cfg, seed)
    counts = {"pso": g.evaluations - start_evals}
    if bounds.shape[0] == 1:
        lo, hi = bounds[0]
        step = cfg.delta_tilde if cfg.delta_tilde is not None else 0.05 * (hi - lo)
        bracket = swan_bracket(g, swarm.x, step, (lo, hi))
        golden = golden_section(g, bracket.L, bracket.R, cfg.bisection_tol)
        counts.update(bracket=bracket.evaluations, golden=golden.evaluations,
                      I_SB=bracket.extra_evaluations, I_BS=golden.evaluations)
    else:
        ascent = gradient_ascent_2d(g, swarm.x, bounds, cfg)
        counts.update(ascent=ascent.evaluations)
    trace = g.trace[start_trace:]
    best_x, best_val = max(trace, key=lambda t: t[1])
    return SearchResult(delta_star=best_x, g_star=best_val,
                        evaluations=g.evaluations - start_evals, trace=list(trace),
                        inner_runs=g.inner_runs, counts=counts)


def expected_evaluations(counts, zeta, I_PS):
    """Evaluation count implied by the stage counters: zeta(1+I_PS) + 2 + I_SB + I_BS."""
    return zeta * (1 + I_PS) + 2 + counts["I_SB"] + counts["I_BS"]


def offline_optimize(scenario, cfg=None, seed=None, kind=None):
    """Spacing that maximises the ensemble-mean sum rate.

    The objective averages ``cfg.ensemble_size`` frozen design realizations
    (a stream separate from the evaluation realizations).
    """
    cfg = cfg or scenario.search_config()
    seed = scenario.seed if seed is None else seed
    g = scenario.objective(range(cfg.ensemble_size), stream="design", kind=kind)
    return run_search(g, scenario.bounds(kind), cfg, seed)


@dataclass
class ActivationMask:
    """Switched elements of a dense array with pitch ``2a``.

    ``active`` has shape ``(n1,)`` for linear arrays and ``(n2, n1)`` for
    planar ones (rows along the second dimension).
    """

    active: np.ndarray
    pitch: float
    delta_snapped: float | tuple

    @property
    def count(self):
        return int(self.active.sum())


def _snap(delta, pitch, length):
    n_dense = int(math.floor(length / pitch + 1e-9)) + 1
    m = int(round(delta / pitch))
    m = min(max(m, 1), max(n_dense - 1, 1))
    mask = np.zeros(n_dense, bool)
    mask[::m] = True
    return mask, m * pitch


def activation_mask(delta, extent, a):
    """Snap ``delta`` to the dense ``2a`` grid over ``extent`` (D or (D1, D2 - a))."""
    pitch = 2 * a
    if np.ndim(delta) == 0:
        mask, snapped = _snap(float(delta), pitch, float(extent))
        return ActivationMask(mask, pitch, snapped)
    m1, s1 = _snap(float(delta[0]), pitch, float(extent[0]))
    m2, s2 = _snap(float(delta[1]), pitch, float(extent[1]))
    return ActivationMask(np.outer(m2, m1), pitch, (s1, s2))


def online_optimize(scenario, cfg=None, realization=0, seed=None, kind=None):
    """Per-realization spacing search plus the dense-array activation mask."""
    cfg = cfg or scenario.search_config(ensemble_size=1)
    seed = scenario.seed if seed is None else seed
    g = scenario.objective([realization], stream="eval", kind=kind)
    result = run_search(g, scenario.bounds(kind), cfg, (seed, realization))
    bounds = np.atleast_2d(scenario.bounds(kind))
    extent = bounds[0, 1] if bounds.shape[0] == 1 else (bounds[0, 1], bounds[1, 1])
    mask = activation_mask(result.delta_star, extent, scenario.params.a)
    return result, mask
