import math

import numpy as np
import pytest
from sklearn.base import clone

import mbmimo.scenario as scenario_mod
from mbmimo.scenario import Scenario
from mbmimo.search import (ObjectiveHandle, SearchConfig, SpacingSearch, activation_mask,
                           expected_evaluations, golden_section, gradient_ascent_2d,
                           offline_optimize, online_optimize, particle_swarm, run_search,
                           swan_bracket)

from conftest import small_scenario_dict


def bump(x, peak=0.03):
    return -((x - peak) ** 2)


def test_pso_finds_quadratic_peak():
    res = particle_swarm(bump, (0.01, 0.1), SearchConfig(zeta=10, I_PS=30), seed=3)
    assert abs(res.x - 0.03) < 2e-3
    assert all(np.diff(res.gbest_history) >= 0)
    for before, after in zip(res.pbest_history, res.pbest_history[1:]):
        assert np.all(after >= before)


def test_pso_degenerate_swarm():
    g = ObjectiveHandle(bump)
    res = particle_swarm(g, (0.01, 0.1), SearchConfig(zeta=1, I_PS=0), seed=0)
    assert g.evaluations == 1 and res.x == g.trace[0][0]


def test_pso_stays_in_domain():
    g = ObjectiveHandle(lambda x: x)  # pushes particles to the upper margin
    particle_swarm(g, (0.005, 0.2), SearchConfig(zeta=5, I_PS=10), seed=1)
    xs = [x for x, _ in g.trace]
    assert min(xs) >= 0.005 and max(xs) <= 0.2
    assert 0.2 in xs


def test_swan_bracket_cases():
    br = swan_bracket(bump, 0.02, 0.002, (0.005, 0.2))
    assert br.L <= 0.03 <= br.R
    br = swan_bracket(lambda x: -abs(x - 0.05), 0.05, 0.01, (0.0, 0.2))
    assert (br.L, br.R) == pytest.approx((0.04, 0.06))
    br = swan_bracket(lambda x: x, 0.05, 0.01, (0.0, 0.2))
    assert br.R == 0.2
    with pytest.raises(ValueError):
        swan_bracket(bump, 0.02, 0.0, (0.0, 1.0))


def test_golden_section():
    g = ObjectiveHandle(lambda x: -((x - 1) ** 2))
    res = golden_section(g, 0.0, 2.0, 1e-6)
    assert abs(res.x - 1) < 1e-6
    assert res.R - res.L <= 1e-6
    expected = math.ceil(math.log(2 / 1e-6) / math.log(1 / 0.618))
    assert abs(res.evaluations - expected) <= 2
    assert res.evaluations == g.evaluations
    assert golden_section(bump, 0.0, 1.0, 2.0).x == 0.5


def test_gradient_ascent_quadratic_bowl():
    g = lambda d: -((d[0] - 0.01) ** 2) - (d[1] - 0.01) ** 2  # noqa: E731
    cfg = SearchConfig(ga_step=2e-3, ga_min_improvement=1e-14, ga_max_iter=200)
    res = gradient_ascent_2d(g, (0.03, 0.02), ((0.005, 0.05), (0.005, 0.05)), cfg)
    assert np.all(np.abs(res.x - 0.01) < 1e-4)
    res = gradient_ascent_2d(g, (0.01, 0.01), ((0.005, 0.05), (0.005, 0.05)), cfg)
    assert res.iterations == 1
    with pytest.raises(ValueError):
        gradient_ascent_2d(g, (0.001, 0.01), ((0.005, 0.05), (0.005, 0.05)), cfg)


def test_run_search_counts_and_trace():
    g = ObjectiveHandle(bump)
    cfg = SearchConfig(zeta=4, I_PS=3)
    res = run_search(g, (0.005, 0.2), cfg, 0)
    assert res.evaluations == g.evaluations == expected_evaluations(res.counts, 4, 3)
    assert res.g_star == max(v for _, v in res.trace)
    assert abs(res.delta_star - 0.03) < 1e-3


def test_spacing_search_estimator():
    est = SpacingSearch(n_particles=4, n_pso_iter=3, random_state=2)
    assert clone(est).get_params() == est.get_params()
    est.fit(bump, (0.005, 0.2))
    assert abs(est.delta_ - 0.03) < 1e-3
    assert est.n_evaluations_ == expected_evaluations(est.counts_, 4, 3)
    est2 = SpacingSearch(n_particles=4, n_pso_iter=3, ga_min_improvement=1e-14)
    est2.fit(lambda d: -np.sum((np.asarray(d) - 0.02) ** 2), ((0.005, 0.05), (0.005, 0.05)))
    assert np.allclose(est2.delta_, 0.02, atol=5e-4)


def test_activation_mask_counts():
    m = activation_mask(0.0231, 0.2, 0.0025)
    assert m.delta_snapped == pytest.approx(0.025)
    assert m.count == math.floor(0.2 / 0.025 + 1e-9) + 1
    m = activation_mask(0.001, 0.2, 0.0025)
    assert m.count == 41
    m2 = activation_mask((0.01, 0.02), (0.05, 0.0475), 0.0025)
    assert m2.active.shape == (10, 11)
    assert m2.count == (math.floor(0.05 / 0.01 + 1e-9) + 1) * (math.floor(0.0475 / 0.02) + 1)


def test_offline_optimize_deterministic_and_audited(monkeypatch):
    sc = Scenario.from_dict(small_scenario_dict())
    calls = []
    real = scenario_mod.inner_optimize

    def counting(*a, **k):
        calls.append(1)
        return real(*a, **k)

    monkeypatch.setattr(scenario_mod, "inner_optimize", counting)
    res = offline_optimize(sc)
    assert res.inner_runs == len(calls) == res.evaluations * sc.config.seeds.ensemble_size
    assert res.evaluations == expected_evaluations(res.counts, 3, 2)
    assert res.g_star == max(v for _, v in res.trace)
    lo, hi = sc.bounds()
    assert all(lo <= x <= hi for x, _ in res.trace)
    again = offline_optimize(sc)
    assert again.delta_star == res.delta_star and again.trace == res.trace


def test_offline_grid_oracle_uncoupled_single_user():
    sc = Scenario.from_dict(small_scenario_dict(
        bands={"M_L": 1, "M_H": 0}, users={"K": 1}, array={"coupled": False},
        seeds={"ensemble_size": 1}, search={"zeta": 6, "I_PS": 5}))
    res = offline_optimize(sc)
    g = sc.objective([0], stream="design")
    grid = np.linspace(*sc.bounds(), 200)
    best = grid[int(np.argmax([g(x) for x in grid]))]
    assert abs(res.delta_star - best) <= sc.config.search.bisection_tol


def test_online_optimize_beats_offline_on_its_realization():
    sc = Scenario.from_dict(small_scenario_dict())
    off = offline_optimize(sc)
    on, mask = online_optimize(sc, realization=1)
    rate_off = sc.sum_rate(sc.geometry(off.delta_star), sc.realization(1), sc.capabilities(1))
    assert on.g_star >= rate_off - 1e-6 * rate_off
    assert on.inner_runs == on.evaluations
    assert mask.count == math.floor(sc.config.array.D / mask.delta_snapped + 1e-9) + 1


def test_planar_online_ascent_improves_start():
    sc = Scenario.from_dict(small_scenario_dict(
        array={"kind": "planar", "D": 0.03, "D2": 0.0325}, search={"ga_min_improvement": 1.0}))
    res, mask = online_optimize(sc, realization=0)
    pso_best = max(v for _, v in res.trace[:res.counts["pso"]])
    assert res.g_star >= pso_best
    assert mask.active.ndim == 2
