"""Seeded experiment pipelines that emit a JSON report, a CSV of curve points and a PNG."""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from functools import lru_cache
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .active import passive_audit_baseline, run_noisy_audit
from .attribution import AttributionConfig, coverage_game, divergence_report, REDUNDANT, UNCREDITED
from .core import EcosystemAudit, FitConfig, ValidationError, rng_for
from .disco import run_disco
from .governance import POLICIES, curve_area, greedy_prune
from .io import write_report, write_rows
from .plotting import bar_plot, line_plot
from .synth import (
    SaturationSpec,
    make_divergence_ecosystem,
    make_linear_ecosystem,
    make_nonidentifiability_pair,
    make_prune_ecosystem,
    make_robustness_pair,
    max_slope,
    saturation_point,
)

REFERENCE_REDUCTION_RATIO = 1.34  # published reduction at 5% error

DEFAULTS: dict[str, dict] = {
    "saturation": {
        "seed": 0, "d": 10, "n_peers_grid": [1, 2, 5, 10, 15, 20, 30], "n_fit": 400, "n_eval": 400,
        "sigma": 0.0, "n_seeds": 20, "generator": "skill", "jitter": 0.05,
        # pilot: skill generator gives ratios near 0.1 at N=20 vs N=2
        "collapse_threshold": 0.2,
    },
    "active_vs_passive": {
        "seed": 0, "d": 5, "n_models": 6, "gamma": 1.0, "sigma": 0.6, "trials": 400,
        "target_error": 0.05, "r_max": 8, "passive_max": 80, "design_scale": "sqrt_d", "min_ratio": 1.2,
    },
    "bootstrap_coverage": {
        "seed": 0, "ecosystem_seed": 3, "d": 4, "n_models": 4, "gamma": 0.5, "sigma": 0.3,
        "n_fit": 2000, "n_eval": 500, "replications": 200, "n_boot": 500, "alpha": 0.10,
        "mc_draws": 1_000_000, "min_coverage": 0.85,
    },
    "divergence": {
        "seed": 0, "n_seeds": 10, "n": 2000, "d": 5, "slice_prob": 0.1, "shift": 3.0, "band": 0.1,
    },
    "prune": {
        "seed": 0, "n_seeds": 20, "policies": list(POLICIES), "n_extreme": 5, "n_interior": 7, "d": 6,
        "n": 600, "jitter": 0.05, "label_noise": 0.5, "budget": None,
    },
    "nonidentifiability": {"seed": 0, "s0_mass": 0.7, "n_logs": 500},
    "robustness_pair": {
        "seed": 0, "c": 1.0, "l_low": 0.5, "l_high": 300.0, "n_eval": 10_000, "doses": "grid", "n_boot": 200,
    },
}

EXPERIMENTS = tuple(DEFAULTS)


def n_workers() -> int:
    try:
        return max(1, int(os.environ.get("DISCO_THREADS", "1")))
    except ValueError:
        raise ValidationError("DISCO_THREADS must be an integer") from None


def parallel_map(fn: Callable, items) -> list:
    """Ordered map, threaded up to ``DISCO_THREADS`` workers."""
    items = list(items)
    k = n_workers()
    if k == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=k) as ex:
        return list(ex.map(fn, items))


def load_config(name: str, config_path=None, seed: Optional[int] = None) -> dict:
    if name not in DEFAULTS:
        raise ValidationError(f"unknown experiment {name!r}; valid names: {', '.join(EXPERIMENTS)}")
    cfg = json.loads(json.dumps(DEFAULTS[name]))
    if config_path is not None:
        with open(config_path, encoding="utf-8") as fh:
            user = json.load(fh)
        if not isinstance(user, dict):
            raise ValidationError("experiment config must be a JSON object")
        unknown = sorted(set(user) - set(cfg))
        if unknown:
            raise ValidationError(f"unknown config keys for {name}: {unknown}")
        cfg.update(user)
    if seed is not None:
        cfg["seed"] = int(seed)
    return cfg


# -- active audit harnesses ----------------------------------------------------

@lru_cache(maxsize=16384)
def _trial_ecosystem(d, n_models, kind, sigma, seed, gamma, design_scale):
    return make_linear_ecosystem(d, n_models, kind, sigma, seed, gamma=gamma, n_samples=1, design_scale=design_scale).ecosystem


def audit_error_rates(
    d: int, n_models: int, sigma: float, gamma: float, budget: int, trials: int, seed: int,
    arm: str = "active", design_scale: Optional[float] = None,
) -> dict:
    """Misclassification rates over random ecosystems under both hypotheses.

    H0 trials use an in-hull target, H1 trials a target at margin ``gamma``.
    ``budget`` is the repetition count ``r`` for the active arm and the number
    of random queries for the passive arm. Trial ``i`` uses the same ecosystem
    and noise stream at every budget, so error curves are paired across budgets.
    """
    wrong = {"in_hull": 0, "margin": 0}
    for kind, tag in (("in_hull", 0), ("margin", 1)):
        for i in range(trials):
            eco_seed = int(rng_for(seed, 0xA0, tag, i).integers(2**62))
            eco = _trial_ecosystem(d, n_models, kind, sigma, eco_seed, gamma, design_scale)
            noise_seed = int(rng_for(seed, 0xA1, tag, i).integers(2**62))
            if arm == "active":
                dec = run_noisy_audit(eco, gamma, budget, noise_seed)
            elif arm == "passive":
                dec = passive_audit_baseline(eco, budget, noise_seed, gamma)
            else:
                raise ValidationError("arm must be 'active' or 'passive'")
            wrong[kind] += dec.unique != (kind == "margin")
    t1, t2 = wrong["in_hull"] / trials, wrong["margin"] / trials
    return {"budget": int(budget), "type1": t1, "type2": t2, "balanced": (t1 + t2) / 2, "max": max(t1, t2)}


def minimal_repetitions(
    d: int, n_models: int, sigma: float, gamma: float, trials: int, seed: int,
    target_error: float = 0.05, r_max: int = 1 << 14, design_scale: Optional[float] = None,
) -> tuple[int, dict]:
    """Smallest ``r`` whose worse-hypothesis error is at most ``target_error`` (doubling then bisection)."""
    cache: dict[int, dict] = {}

    def err(r):
        if r not in cache:
            cache[r] = audit_error_rates(d, n_models, sigma, gamma, r, trials, seed, "active", design_scale)
        return cache[r]["max"]

    hi = 1
    while err(hi) > target_error:
        if hi >= r_max:
            raise ValidationError(f"error stays above {target_error} up to r = {r_max}")
        hi = min(2 * hi, r_max)
    lo = hi // 2
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if err(mid) <= target_error:
            hi = mid
        else:
            lo = mid
    return hi, cache


def crossing(budgets, errors, target: float) -> float:
    """First budget where the error curve reaches ``target``, linearly interpolated."""
    if errors[0] <= target:
        return float(budgets[0])
    for (q0, e0), (q1, e1) in zip(zip(budgets, errors), zip(budgets[1:], errors[1:])):
        if e1 <= target < e0:
            return float(q0 + (q1 - q0) * (e0 - target) / (e0 - e1))
    return math.nan


# -- experiment bodies -------------------------------------------------------

def _saturation(cfg):
    seeds = tuple(cfg["seed"] * 1_000_003 + i for i in range(cfg["n_seeds"]))
    spec = SaturationSpec(
        d=cfg["d"], n_peers_grid=tuple(cfg["n_peers_grid"]), n_fit=cfg["n_fit"], n_eval=cfg["n_eval"],
        sigma=cfg["sigma"], seeds=seeds, generator=cfg["generator"], jitter=cfg["jitter"],
    )
    per_n = []
    for n in spec.n_peers_grid:
        vals = parallel_map(lambda s, n=n: saturation_point(spec, n, s), spec.seeds)
        per_n.append((n, float(np.mean(vals)), float(np.std(vals, ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0))
    curve = {n: u for n, u, _ in per_n}
    ratio = curve[20] / curve[2] if 2 in curve and 20 in curve and curve[2] > 0 else None
    result = {
        "curve": [{"n_peers": n, "mean_uniqueness": u, "se": se} for n, u, se in per_n],
        "ratio_20_over_2": ratio,
        "collapse_threshold": cfg["collapse_threshold"],
        "collapsed": None if ratio is None else bool(ratio <= cfg["collapse_threshold"]),
    }
    rows = [(n, u, se) for n, u, se in per_n]
    fig = dict(series={"mean uniqueness": ([r[0] for r in rows], [r[1] for r in rows])},
               xlabel="number of peers", ylabel="mean uniqueness", title=f"saturation, d={cfg['d']}")
    return result, ("n_peers", "mean_uniqueness", "se"), rows, ("line", fig)


def _active_vs_passive(cfg):
    d, N, gamma, sigma, T = cfg["d"], cfg["n_models"], cfg["gamma"], cfg["sigma"], cfg["trials"]
    scale = {"sqrt_d": math.sqrt(d), "unit": None}.get(cfg["design_scale"], cfg["design_scale"])
    target = cfg["target_error"]
    rs = list(range(1, cfg["r_max"] + 1))
    active = parallel_map(lambda r: audit_error_rates(d, N, sigma, gamma, r, T, cfg["seed"], "active", scale), rs)
    passive, settled = [], 0
    for n in range(d, cfg["passive_max"] + 1):
        row = audit_error_rates(d, N, sigma, gamma, n, T, cfg["seed"], "passive")
        passive.append(row)
        settled = settled + 1 if row["balanced"] <= target else 0
        if settled >= 5:
            break
    qa = crossing([d * r["budget"] for r in active], [r["balanced"] for r in active], target)
    qp = crossing([r["budget"] for r in passive], [r["balanced"] for r in passive], target)
    ratio = qp / qa if qa > 0 and math.isfinite(qp) else None
    result = {
        "queries_active": qa,
        "queries_passive": qp,
        "reduction_ratio": ratio,
        "reference_reduction_ratio": REFERENCE_REDUCTION_RATIO,
        "target_error": target,
        "error_metric": "mean of type I and type II rates",
        "active": [dict(r, queries=d * r["budget"]) for r in active],
        "passive": [dict(r, queries=r["budget"]) for r in passive],
    }
    rows = [("active", d * r["budget"], r["balanced"], r["type1"], r["type2"]) for r in active]
    rows += [("passive", r["budget"], r["balanced"], r["type1"], r["type2"]) for r in passive]
    fig = dict(
        series={
            "active": ([d * r["budget"] for r in active], [r["balanced"] for r in active]),
            "passive": ([r["budget"] for r in passive], [r["balanced"] for r in passive]),
        },
        xlabel="queries per model", ylabel="error rate", title="active vs passive auditing", hline=target,
    )
    return result, ("arm", "queries", "error", "type1", "type2"), rows, ("line", fig)


def population_uniqueness_mc(betas, w, sigma, draws: int, seed: int, chunk: int = 200_000) -> float:
    """Monte-Carlo E|Y_t - sum_j w_j Y_j| under standard Gaussian features and response noise."""
    d, N = betas.shape
    total, done, k = 0.0, 0, 0
    coef = np.concatenate([[1.0], -np.asarray(w)])
    while done < draws:
        m = min(chunk, draws - done)
        g = rng_for(seed, 0xC0F, k)
        Y = g.standard_normal((m, d)) @ betas + sigma * g.standard_normal((m, N))
        total += float(np.abs(Y @ coef).sum())
        done += m
        k += 1
    return total / draws


def _bootstrap_coverage(cfg):
    d, N, sigma = cfg["d"], cfg["n_models"], cfg["sigma"]
    se = make_linear_ecosystem(d, N, "margin", sigma, cfg["ecosystem_seed"], gamma=cfg["gamma"], n_samples=1)
    B = se.ecosystem.betas
    u_mc = population_uniqueness_mc(B, se.w_population, sigma, cfg["mc_draws"], cfg["seed"])
    m, n = cfg["n_fit"], cfg["n_eval"]

    def one(rep):
        g = rng_for(cfg["seed"], 0xB0C, rep)
        Y = g.standard_normal((m + n, d)) @ B + sigma * g.standard_normal((m + n, N))
        audit = EcosystemAudit.from_arrays(Y[:m], Y[m:], config=FitConfig(rng_seed=rep))
        _, rpt = run_disco(audit, cfg["alpha"], cfg["n_boot"], seed=rep)
        return rep, rpt.uniqueness, rpt.ci_low, rpt.ci_high, bool(rpt.ci_low <= u_mc <= rpt.ci_high)

    rows = parallel_map(one, range(cfg["replications"]))
    coverage = float(np.mean([r[4] for r in rows]))
    result = {
        "coverage": coverage,
        "nominal": 1 - cfg["alpha"],
        "min_coverage": cfg["min_coverage"],
        "population_uniqueness_mc": u_mc,
        "population_uniqueness_closed_form": se.population_uniqueness,
        "mean_estimate": float(np.mean([r[1] for r in rows])),
        "mean_width": float(np.mean([r[3] - r[2] for r in rows])),
        "n_fit": m,
        "n_eval": n,
    }
    order = sorted(rows, key=lambda r: r[1])
    idx = list(range(len(order)))
    fig = dict(
        series={
            "ci_low": (idx, [r[2] for r in order]),
            "estimate": (idx, [r[1] for r in order]),
            "ci_high": (idx, [r[3] for r in order]),
        },
        xlabel="replication (sorted by estimate)", ylabel="uniqueness",
        title=f"bootstrap coverage {coverage:.3f}", hline=u_mc,
    )
    return result, ("replication", "uniqueness", "ci_low", "ci_high", "covered"), rows, ("line", fig)


def _divergence(cfg):
    def one(i):
        s = cfg["seed"] * 1_000_003 + i
        R, labels = make_divergence_ecosystem(s, cfg["n"], cfg["d"], cfg["slice_prob"], cfg["shift"])
        rpt = divergence_report(R, coverage_game(R, labels, cfg["band"]), AttributionConfig(seed=s))
        return s, rpt

    reports = parallel_map(one, range(cfg["n_seeds"]))
    ok = [rpt.flags[1] == REDUNDANT and rpt.flags[2] == UNCREDITED for _, rpt in reports]
    result = {
        "seeds": [s for s, _ in reports],
        "reports": [rpt.to_dict() for _, rpt in reports],
        "clone_flagged_redundant_and_specialist_uncredited": ok,
        "all_seeds_pass": bool(all(ok)),
    }
    rows = [
        (s, p.id, float(rpt.shapley[j]), float(rpt.pier[j]), rpt.flags[j])
        for s, rpt in reports for j, p in enumerate(rpt.players)
    ]
    first = reports[0][1]
    fig = dict(
        categories=[p.id for p in first.players],
        groups={"Shapley": list(first.shapley), "uniqueness": list(first.pier)},
        ylabel="share of maximum", title="attribution vs uniqueness",
    )
    return result, ("seed", "model", "shapley", "uniqueness", "flag"), rows, ("bar", fig)


def _prune(cfg):
    budget = math.inf if cfg["budget"] is None else float(cfg["budget"])
    policies = list(cfg["policies"])
    for p in policies:
        if p not in POLICIES:
            raise ValidationError(f"unknown policy {p!r}")
    seeds = [cfg["seed"] * 1_000_003 + i for i in range(cfg["n_seeds"])]

    def one(s):
        R, L = make_prune_ecosystem(
            s, cfg["n_extreme"], cfg["n_interior"], cfg["d"], cfg["n"], cfg["jitter"], cfg["label_noise"]
        )
        return {p: greedy_prune(R, L, p, budget, seed=s) for p in policies}

    traces = parallel_map(one, seeds)
    auc = {p: [curve_area(t[p]) for t in traces] for p in policies}
    Rc, Lc = make_prune_ecosystem(seeds[0], cfg["n_extreme"], cfg["n_interior"], cfg["d"], cfg["n"],
                                  cfg["jitter"], cfg["label_noise"], clone=True)
    clone_trace = greedy_prune(Rc, Lc, "pier_guided", 0.0, seed=seeds[0])
    first = clone_trace.order[0].id if clone_trace.order else None

    mean_curves = {}
    rows = []
    for p in policies:
        lengths = {len(t[p].curve) for t in traces}
        n_pts = min(lengths)
        fr = [traces[0][p].curve[k][0] for k in range(n_pts)]
        inc = [float(np.mean([t[p].curve[k][1] for t in traces])) for k in range(n_pts)]
        worst = [float(np.mean([t[p].tail[k][1] for t in traces])) for k in range(n_pts)]
        p80 = [float(np.mean([t[p].tail[k][2] for t in traces])) for k in range(n_pts)]
        mean_curves[p] = (fr, inc)
        rows += [(p, f, i, w, q) for f, i, w, q in zip(fr, inc, worst, p80)]
    result = {
        "mean_auc": {p: float(np.mean(v)) for p, v in auc.items()},
        "auc": auc,
        "pier_guided_beats_random": (
            bool(np.mean(auc["pier_guided"]) <= np.mean(auc["random"]))
            if "pier_guided" in auc and "random" in auc else None
        ),
        "clone_check": {
            "first_pruned": first,
            "is_clone_pair": first in ("E0", "E0_clone"),
            "increase": clone_trace.curve[1][1] if len(clone_trace.curve) > 1 else None,
            "trace": clone_trace.to_dict(),
        },
        "traces_seed0": {p: traces[0][p].to_dict() for p in policies},
    }
    fig = dict(series=mean_curves, xlabel="fraction pruned", ylabel="system error increase (MAE)",
               title="greedy pruning")
    return result, ("policy", "fraction_pruned", "mean_increase", "mean_worst_excess", "mean_p80_excess"), rows, ("line", fig)


def _nonidentifiability(cfg):
    pair, rpt = make_nonidentifiability_pair(cfg["s0_mass"], cfg["seed"], cfg["n_logs"])
    rows = [
        (k, rpt["log_hashes"][k], rpt["population_uniqueness"][k], rpt["log_based_estimate"][k]) for k in (0, 1)
    ]
    theta = np.linspace(0, 1, 401)
    fig = dict(
        series={f"target, ecosystem {k}": (theta.tolist(), pair.ecosystems[k][0](theta).tolist()) for k in (0, 1)},
        xlabel="dose", ylabel="target response", title=f"logs observed on [0, {cfg['s0_mass']})", steps=True,
    )
    return rpt, ("ecosystem", "log_sha256", "population_uniqueness", "log_based_estimate"), rows, ("line", fig)


def _robustness_pair(cfg):
    pair, a, b = make_robustness_pair(
        cfg["c"], n_eval=cfg["n_eval"], l_low=cfg["l_low"], l_high=cfg["l_high"], doses=cfg["doses"],
        seed=cfg["seed"], n_boot=cfg["n_boot"],
    )
    slope_a, slope_b = max_slope(pair.target_a), max_slope(pair.target_b)
    result = {
        "c": pair.c, "K": pair.K, "l_low": pair.l_low, "l_high": pair.l_high,
        "uniqueness_a": a.uniqueness, "uniqueness_b": b.uniqueness,
        "difference": abs(a.uniqueness - b.uniqueness),
        "expected_uniqueness": 2 * pair.c / math.pi,
        "max_slope_a": slope_a, "max_slope_b": slope_b, "lipschitz_b": pair.lipschitz_b,
        "intervals": {"a": [a.ci_low, a.ci_high], "b": [b.ci_low, b.ci_high]},
    }
    rows = [("A", a.uniqueness, a.ci_low, a.ci_high, slope_a), ("B", b.uniqueness, b.ci_low, b.ci_high, slope_b)]
    theta = np.linspace(0, 1, 4001)
    fig = dict(
        series={"A (constant)": (theta.tolist(), pair.target_a(theta).tolist()),
                "B (oscillating)": (theta.tolist(), pair.target_b(theta).tolist())},
        xlabel="dose", ylabel="target response (peer is 0)", title="equal uniqueness, different slopes",
    )
    return result, ("target", "uniqueness", "ci_low", "ci_high", "max_slope"), rows, ("line", fig)


_BODIES = {
    "saturation": _saturation,
    "active_vs_passive": _active_vs_passive,
    "bootstrap_coverage": _bootstrap_coverage,
    "divergence": _divergence,
    "prune": _prune,
    "nonidentifiability": _nonidentifiability,
    "robustness_pair": _robustness_pair,
}


def run_experiment(name: str, config_path=None, output_dir=".", seed: Optional[int] = None, figure: bool = True):
    """Run experiment ``name`` and write ``<name>.json``, ``<name>.csv`` and ``<name>.png``.

    Returns ``(result, paths)``.
    """
    cfg = load_config(name, config_path, seed)
    result, header, rows, (kind, fig) = _BODIES[name](cfg)
    out = Path(output_dir)
    paths = {
        "json": write_report(out / f"{name}.json", f"experiment/{name}", result, cfg, cfg["seed"]),
        "csv": write_rows(out / f"{name}.csv", header, rows),
    }
    if figure:
        paths["png"] = (line_plot if kind == "line" else bar_plot)(out / f"{name}.png", **fig)
    return result, paths
