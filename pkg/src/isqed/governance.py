"""Ecosystem governance with convex routers: substitution impact and greedy pruning.

A removed model is served by a convex router over the surviving models, fitted
on the fit split to imitate the removed model's responses. Errors are mean
absolute errors against per-target labels on the eval split. The router is
scored through its expected response (the convex surrogate).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import EcosystemAudit, FitConfig, ModelId, ResponseMatrix, ValidationError, rng_for, split_honest
from .disco import fit_arrays, fit_weights
from .simplex import SimplexWeights

POLICIES = ("pier_guided", "random", "utility_only", "oracle_penalty")


@dataclass(frozen=True)
class SubstitutionResult:
    target: ModelId
    router_weights: SimplexWeights
    impact: float
    target_error: float
    router_error: float
    metric: str = "mae"

    def to_dict(self) -> dict:
        return {
            "target": self.target.id,
            "router_weights": self.router_weights.tolist(),
            "impact": self.impact,
            "target_error": self.target_error,
            "router_error": self.router_error,
            "metric": self.metric,
        }


def _mae(pred, labels) -> float:
    return float(np.mean(np.abs(np.asarray(pred) - np.asarray(labels))))


def substitution_impact(audit: EcosystemAudit, labels) -> SubstitutionResult:
    """Signed MAE change from replacing the target by its router; negative means the router is better."""
    P, y = audit.eval_arrays()
    labels = np.asarray(labels, dtype=float).ravel()
    if labels.size != y.size:
        raise ValidationError(f"labels have {labels.size} entries, eval split has {y.size} points")
    w = fit_weights(audit).weights
    e_t = _mae(y, labels)
    e_r = _mae(P @ w.w, labels)
    return SubstitutionResult(audit.target, w, e_r - e_t, e_t, e_r)


@dataclass(frozen=True)
class PruneTrace:
    order: tuple[ModelId, ...]
    curve: tuple[tuple[float, float], ...]
    policy: str
    tail: tuple[tuple[float, float, float], ...]
    baseline_error: float = math.nan
    stopped_by_budget: bool = False

    def __post_init__(self):
        fr = [c[0] for c in self.curve]
        if any(b <= a for a, b in zip(fr, fr[1:])):
            raise ValidationError("prune curve fractions must be strictly increasing")
        if any(t[1] < 0 or t[2] < 0 or t[2] > t[1] for t in self.tail):
            raise ValidationError("tail excess must satisfy 0 <= p80 <= worst")

    def to_dict(self) -> dict:
        return {
            "policy": self.policy,
            "order": [m.id for m in self.order],
            "curve": [list(c) for c in self.curve],
            "tail": [list(t) for t in self.tail],
            "baseline_error": self.baseline_error,
            "stopped_by_budget": self.stopped_by_budget,
        }


def curve_area(trace: PruneTrace) -> float:
    """Trapezoid area under the error-increase curve."""
    if len(trace.curve) < 2:
        return 0.0
    x, y = np.array(trace.curve).T
    return float(np.sum(np.diff(x) * (y[1:] + y[:-1]) / 2))


@dataclass
class _PruneState:
    fit: np.ndarray
    eval: np.ndarray
    labels_eval: np.ndarray
    config: FitConfig
    base_mae: np.ndarray = field(init=False)

    def __post_init__(self):
        self.base_mae = np.mean(np.abs(self.eval - self.labels_eval), axis=0)

    def target_errors(self, survivors: list[int]) -> np.ndarray:
        """Per-target MAE with every non-survivor served by a router over ``survivors``."""
        err = self.base_mae.copy()
        for j in range(self.fit.shape[1]):
            if j in survivors:
                continue
            w = fit_arrays(self.fit[:, survivors], self.fit[:, j], self.config).weights.w
            err[j] = _mae(self.eval[:, survivors] @ w, self.labels_eval[:, j])
        return err

    def uniqueness(self, survivors: list[int]) -> dict[int, float]:
        out = {}
        for j in survivors:
            peers = [k for k in survivors if k != j]
            w = fit_arrays(self.fit[:, peers], self.fit[:, j], self.config).weights.w
            out[j] = _mae(self.eval[:, peers] @ w, self.eval[:, j])
        return out


def greedy_prune(
    responses: ResponseMatrix,
    labels,
    policy: str = "pier_guided",
    budget: float = math.inf,
    seed: int = 0,
    *,
    fit_fraction: float = 0.5,
    band: float = 0.01,
    tol: float = 1e-9,
    config: Optional[FitConfig] = None,
) -> PruneTrace:
    """Remove models one at a time, serving each removed model by a router over survivors.

    ``labels`` is one vector shared by all models or an n x N matrix with a
    column per model. Policies: ``pier_guided`` removes the survivor with the
    smallest uniqueness against the other survivors (recomputed every step);
    ``random`` removes a uniformly random survivor; ``utility_only`` removes
    the survivor with the worst standalone error; ``oracle_penalty`` removes
    the survivor whose removal raises system error least. Pruning stops
    before a step that would raise system error (mean per-target MAE) above
    the baseline by more than ``budget``, or when one model remains.
    """
    if policy not in POLICIES:
        raise ValidationError(f"unknown policy {policy!r}; choose from {POLICIES}")
    n_models = len(responses.models)
    if n_models < 3:
        raise ValidationError("pruning needs at least 3 models")
    if budget < 0:
        raise ValidationError("budget must be non-negative")
    L = np.asarray(labels, dtype=float)
    if L.ndim == 1:
        L = np.repeat(L[:, None], n_models, axis=1)
    if L.shape != responses.values.shape:
        raise ValidationError("labels must be a vector over points or a points x models matrix")
    if not np.all(np.isfinite(L)):
        raise ValidationError("labels must be finite")
    config = config or FitConfig(rng_seed=seed)
    fit_s, eval_s = split_honest(responses.sample, fit_fraction, seed)
    fi, ei = list(fit_s.indices), list(eval_s.indices)
    st = _PruneState(responses.values[fi], responses.values[ei], L[ei], config)
    baseline = float(st.base_mae.mean())

    survivors = list(range(n_models))
    order: list[ModelId] = []
    curve = [(0.0, 0.0)]
    tail = [(0.0, 0.0, 0.0)]
    stopped = False
    step = 0
    while len(survivors) > 1:
        step += 1
        if policy == "pier_guided":
            u = st.uniqueness(survivors)
            pick = min(survivors, key=lambda j: (u[j], j))
            errs = st.target_errors([k for k in survivors if k != pick])
        elif policy == "random":
            pick = survivors[int(rng_for(seed, 0x9A4D, step).integers(len(survivors)))]
            errs = st.target_errors([k for k in survivors if k != pick])
        elif policy == "utility_only":
            pick = max(survivors, key=lambda j: (st.base_mae[j], -j))
            errs = st.target_errors([k for k in survivors if k != pick])
        else:
            cand = {j: st.target_errors([k for k in survivors if k != j]) for j in survivors}
            pick = min(survivors, key=lambda j: (cand[j].mean(), j))
            errs = cand[pick]
        increase = float(errs.mean()) - baseline
        if increase > budget + tol:
            stopped = True
            break
        survivors.remove(pick)
        order.append(responses.models[pick])
        frac = len(order) / n_models
        excess = np.maximum(0.0, errs - (1 + band) * st.base_mae)
        worst = float(excess.max())
        p80 = min(float(np.quantile(excess, 0.8)), worst)
        curve.append((frac, increase))
        tail.append((frac, worst, p80))
    return PruneTrace(tuple(order), tuple(curve), policy, tuple(tail), baseline, stopped)
