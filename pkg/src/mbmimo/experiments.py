"""Experiment drivers: spacing, subcarrier, SNR and beta sweeps, frequency
response, spacing optimisation and offline/online comparison.

Every driver returns a dict ``{file name: Table}``; :mod:`mbmimo.cli`
writes them after the manifest.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .allocation import PowerScheme
from .antenna import build_zt_stack, max_radiation_efficiency
from .channel import SubcarrierGrid, draw_distances, draw_fading, synthesize
from .search import expected_evaluations, offline_optimize, online_optimize

THREADS_ENV = "MBMIMO_THREADS"


@dataclass
class Table:
    header: list
    rows: list

    def sorted(self, n_keys):
        return Table(self.header, sorted(self.rows, key=lambda r: tuple(r[:n_keys])))


def thread_count(requested=None):
    if requested is not None:
        return max(1, int(requested))
    env = os.environ.get(THREADS_ENV)
    return max(1, int(env)) if env else 1


def _map(func, items, threads):
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [func(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(func, items))


def _stats(values):
    v = np.asarray(values, dtype=float)
    std = float(v.std(ddof=1)) if v.size > 1 else 0.0
    return float(v.mean()), std


def _common(sc, snr=True):
    c = sc.config
    return [sc.seed] + ([c.snr_db] if snr else []) + [sc.K, c.bands.M_L, c.bands.M_H,
                                                       c.power.P_T]


COMMON_HEADER = ["seed", "snr_db", "K", "M_L", "M_H", "P_T_W"]


# spacing --------------------------------------------------------------------
def _spacing_points(sc, sweep):
    if sweep is not None and sweep.variable != "spacing":
        raise ValueError(f"sweep-spacing needs sweep.variable = 'spacing', got {sweep.variable!r}")
    lo, hi = np.atleast_2d(sc.bounds(sc.kinds[0]))[0]
    values = list(sweep.values) if sweep else list(np.linspace(lo, hi, 15))
    reps = sweep.repetitions if sweep else sc.config.seeds.ensemble_size
    values2 = list(sweep.values2) if sweep and sweep.values2 else None
    return values, values2, reps


def sweep_spacing(sc, threads=1):
    """Mean optimal sum rate per spacing and array kind (fixed spacing, JPA)."""
    values, values2, reps = _spacing_points(sc, sc.config.sweep)
    jobs = []
    for kind in sc.kinds:
        if kind == "planar":
            v2 = values2 or values
            jobs += [(kind, (d1, d2)) for d1 in values for d2 in v2]
        else:
            jobs += [(kind, d) for d in values]
    draws = [(sc.realization(r), sc.capabilities(r)) for r in range(reps)]
    scheme = PowerScheme("jpa")

    def work(job):
        kind, delta = job
        geom = sc.geometry(delta, kind)
        return geom.N, [sc.sum_rate(geom, f, caps, scheme) for f, caps in draws]

    results = _map(work, jobs, threads)
    summary, raw = [], []
    for (kind, delta), (N, rates) in zip(jobs, results):
        d1, d2 = (delta if kind == "planar" else (delta, ""))
        mean, std = _stats(rates)
        summary.append([kind, d1, d2, mean, std, len(rates), N, sc.config.array.D] + _common(sc))
        raw += [[kind, d1, d2, r, rate, N] + _common(sc) for r, rate in enumerate(rates)]
    head = ["kind", "delta_m", "delta2_m"]
    return {
        "spacing.csv": Table(head + ["mean_sumrate_bps", "std_bps", "n_seeds", "N", "D_m"]
                             + COMMON_HEADER, summary).sorted(3),
        "spacing_runs.csv": Table(head + ["realization", "sumrate_bps", "N"] + COMMON_HEADER,
                                  raw).sorted(4),
    }


# scheme comparisons ---------------------------------------------------------
def scheme_list(sc):
    comp = sc.config.comparison
    out = []
    if comp.cwpa:
        out.append(("cwpa", PowerScheme("cwpa"), 1))
    for b in comp.bwpa_betas:
        out.append((f"bwpa_beta={b:g}", PowerScheme("bwpa", b), 1))
    for case in comp.jpa_cases:
        out.append((f"jpa_case{case}", PowerScheme("jpa"), case))
    return out


def compare_schemes(sc, r, kind=None, delta=None, schemes=None):
    """Sum rate of every configured scheme on realization ``r`` (paired)."""
    kind = kind or sc.kinds[0]
    geom = sc.geometry(sc.default_delta(kind) if delta is None else delta, kind)
    fading = sc.realization(r, n_columns=geom.N)
    out = {}
    for label, scheme, case in schemes or scheme_list(sc):
        out[label] = sc.sum_rate(geom, fading, sc.capabilities(r, case), scheme)
    return out


_SWEEP_FIELDS = {"subcarriers_per_band": ("bands.M_L", "bands.M_H"), "snr_db": ("snr_db",),
                 "beta": ()}


def sweep_schemes(sc, variable, threads=1):
    """Scheme comparison along ``variable`` (subcarriers_per_band, snr_db or beta)."""
    sweep = sc.config.sweep
    if sweep is None or sweep.variable != variable:
        raise ValueError(f"config needs a sweep section with variable = {variable!r}")
    points = []
    for x in sweep.values:
        if variable == "subcarriers_per_band":
            if x != int(x) or x < 1:
                raise ValueError("subcarriers_per_band values must be positive integers")
            x = int(x)
        fields = _SWEEP_FIELDS[variable]
        point = sc.replace(**{f: x for f in fields}) if fields else sc
        if variable == "beta":
            schemes = [(f"bwpa_beta={x:g}", PowerScheme("bwpa", x), 1),
                       ("jpa_case1", PowerScheme("jpa"), 1)]
        else:
            schemes = scheme_list(point)
        points += [(x, point, schemes, r) for r in range(sweep.repetitions)]
    results = _map(lambda p: compare_schemes(p[1], p[3], schemes=p[2]), points, threads)
    grouped, raw = {}, []
    for (x, point, _, r), rates in zip(points, results):
        for label, rate in rates.items():
            grouped.setdefault((x, label), (point, []))[1].append(rate)
            raw.append([x, label, r, rate] + _common(point))
    summary = []
    for (x, label), (point, rates) in grouped.items():
        mean, std = _stats(rates)
        summary.append([x, label, mean, std, len(rates)] + _common(point))
    return {
        f"{variable}.csv": Table(["x", "scheme", "mean_sumrate_bps", "std_bps", "n_seeds"]
                                 + COMMON_HEADER, summary).sorted(2),
        f"{variable}_runs.csv": Table(["x", "scheme", "realization", "sumrate_bps"]
                                      + COMMON_HEADER, raw).sorted(3),
    }


# frequency response -----------------------------------------------------------
def frequency_grid(freqs):
    """Single-tone grid for frequency sweeps (bandwidths are irrelevant there)."""
    freqs = np.asarray(freqs, dtype=float)
    n = freqs.size
    return SubcarrierGrid(freqs=freqs, bandwidths=np.ones(n), bands=np.array(["L"] * n),
                          M_L=n, M_H=0, B_L=1.0, B_H=1.0)


def mean_equivalent_gain(sc, geom, freqs, reps, coupled=True):
    """Ensemble mean of ``||H_tilde(f)||_F^2 / (K N)`` per frequency.

    Realization ``r`` is shared by every geometry (column prefixes agree).
    """
    grid = frequency_grid(freqs)
    gamma = sc.config.users.gamma
    total = np.zeros(grid.size)
    for r in range(reps):
        d = draw_distances(sc.seed, sc.K, sc.d_range, r, label="bode-distance")
        fading = draw_fading(sc.seed, sc.K, geom.N, grid, d=d, gamma=gamma, realization=r,
                             label="bode-fading")
        ch = synthesize(geom, grid, fading, sc.params, sc.loads, coupled)
        total += np.sum(np.abs(ch.H_tilde) ** 2, axis=(1, 2)) / (sc.K * geom.N)
    return total / reps


def bode(sc, threads=1):
    b = sc.config.bode
    freqs = np.linspace(b.f_min, b.f_max, b.n_freq)
    base_kind = sc.kinds[0]
    curves = [(k, k, True) for k in sc.kinds] + [("uncoupled", base_kind, False)]

    def work(curve):
        label, kind, coupled = curve
        geom = sc.geometry(sc.default_delta(kind), kind)
        return mean_equivalent_gain(sc, geom, freqs, b.repetitions, coupled)

    gains = _map(work, curves, threads)
    rows, eff_rows = [], []
    for (label, kind, coupled), g in zip(curves, gains):
        geom = sc.geometry(sc.default_delta(kind), kind)
        delta = sc.default_delta(kind)
        d1, d2 = (delta if kind == "planar" else (delta, ""))
        rows += [[label, f, 10 * np.log10(v), v, d1, d2, geom.N, b.repetitions, sc.seed]
                 for f, v in zip(freqs, g)]
        Z = build_zt_stack(freqs, geom, sc.params, coupled)
        eff_rows += [[label, f, max_radiation_efficiency(z, sc.R), d1, d2, geom.N]
                     for f, z in zip(freqs, Z)]
    return {
        "bode_gain.csv": Table(["kind", "f_Hz", "mean_equivalent_gain_dB", "mean_equivalent_gain",
                                "delta_m", "delta2_m", "N", "n_seeds", "seed"], rows).sorted(2),
        "bode_efficiency.csv": Table(["kind", "f_Hz", "eta_eff", "delta_m", "delta2_m", "N"],
                                     eff_rows).sorted(2),
    }


# spacing optimisation ---------------------------------------------------------
def _delta_cols(delta):
    return list(delta) if np.ndim(delta) else [delta, ""]


def optimize(sc, mode="offline", realization=0, threads=1):
    kind = sc.kinds[0]
    cfg = sc.search_config(ensemble_size=None if mode == "offline" else 1)
    if mode == "offline":
        res, mask = offline_optimize(sc, cfg, kind=kind), None
    elif mode == "online":
        res, mask = online_optimize(sc, cfg, realization, kind=kind)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    counts = res.counts
    header = ["mode", "kind", "delta_star_m", "delta2_star_m", "g_star_bps", "evaluations",
              "inner_runs", "zeta", "I_PS", "I_SB", "I_BS", "ensemble_size", "realization"]
    row = [mode, kind] + _delta_cols(res.delta_star) + [
        res.g_star, res.evaluations, res.inner_runs, cfg.zeta, cfg.I_PS,
        counts.get("I_SB", ""), counts.get("I_BS", ""), cfg.ensemble_size,
        realization if mode == "online" else ""] + _common(sc)
    out = {
        "optimize.csv": Table(header + COMMON_HEADER, [row]),
        "optimize_trace.csv": Table(["step", "delta_m", "delta2_m", "g_bps"],
                                    [[i] + _delta_cols(x) + [v]
                                     for i, (x, v) in enumerate(res.trace)]),
    }
    if mask is not None:
        active = np.atleast_2d(mask.active)
        pitch = mask.pitch
        mrows = [[j, i, i * pitch, j * pitch, int(active[j, i])]
                 for j in range(active.shape[0]) for i in range(active.shape[1])]
        out["activation_mask.csv"] = Table(["row", "col", "x_m", "y_m", "active"], mrows)
    return out


def compare_modes(sc, threads=1):
    """Offline (ensemble-designed) against online (per-realization) spacing."""
    cmp_cfg = sc.config.compare
    kind = sc.kinds[0]
    rows, count_rows = [], []
    for snr in cmp_cfg.snr_values:
        point = sc.replace(snr_db=snr)
        off_cfg = point.search_config()
        design = offline_optimize(point, off_cfg, kind=kind)
        delta_off = design.delta_star
        geom_off = point.geometry(delta_off, kind)

        def work(r, point=point, geom_off=geom_off):
            off_rate = point.sum_rate(geom_off, point.realization(r), point.capabilities(r))
            res, _ = online_optimize(point, point.search_config(1), r, kind=kind)
            return off_rate, res

        results = _map(work, range(cmp_cfg.repetitions), threads)
        off = [o for o, _ in results]
        on = [res.g_star for _, res in results]
        online_evals = sum(res.evaluations for _, res in results)
        online_runs = sum(res.inner_runs for _, res in results)
        n = cmp_cfg.repetitions
        for mode, vals, runs in (("offline", off, n), ("online", on, online_runs)):
            mean, std = _stats(vals)
            rows.append([snr, mode, mean, std, n, runs, runs / n]
                        + _delta_cols(delta_off if mode == "offline" else "")
                        + [design.evaluations if mode == "offline" else "",
                           design.inner_runs if mode == "offline" else "", kind]
                        + _common(point, snr=False))
        for r, (_, res) in enumerate(results):
            zeta, ips = point.search_config(1).zeta, point.search_config(1).I_PS
            expected = (expected_evaluations(res.counts, zeta, ips)
                        if "I_SB" in res.counts else res.counts["pso"] + res.counts["ascent"])
            count_rows.append([snr, r] + _delta_cols(res.delta_star)
                              + [res.g_star, res.evaluations, res.inner_runs, zeta, ips,
                                 res.counts.get("I_SB", ""), res.counts.get("I_BS", ""),
                                 expected, 1.0 / res.evaluations, sc.seed])
        rows.append([snr, "ratio_offline_to_online", n / online_evals, "", n, "", ""]
                    + ["", "", "", "", kind] + _common(point, snr=False))
    header = ["snr_db", "mode", "mean_sumrate", "std", "n_seeds", "inner_runs",
              "inner_runs_per_realization", "delta_m", "delta2_m", "design_evaluations",
              "design_inner_runs", "kind"] + [h for h in COMMON_HEADER if h != "snr_db"]
    return {
        "compare_modes.csv": Table(header, rows).sorted(2),
        "compare_modes_counts.csv": Table(
            ["snr_db", "realization", "delta_star_m", "delta2_star_m", "g_star_bps",
             "evaluations", "inner_runs", "zeta", "I_PS", "I_SB", "I_BS",
             "expected_evaluations", "evaluation_ratio", "seed"], count_rows).sorted(2),
    }


COMMANDS = {
    "sweep-spacing": lambda sc, **kw: sweep_spacing(sc, kw.get("threads", 1)),
    "sweep-subcarriers": lambda sc, **kw: sweep_schemes(sc, "subcarriers_per_band",
                                                        kw.get("threads", 1)),
    "sweep-snr": lambda sc, **kw: sweep_schemes(sc, "snr_db", kw.get("threads", 1)),
    "sweep-beta": lambda sc, **kw: sweep_schemes(sc, "beta", kw.get("threads", 1)),
    "bode": lambda sc, **kw: bode(sc, kw.get("threads", 1)),
    "optimize": lambda sc, **kw: optimize(sc, kw.get("mode", "offline"),
                                          kw.get("realization", 0), kw.get("threads", 1)),
    "compare-modes": lambda sc, **kw: compare_modes(sc, kw.get("threads", 1)),
}
