"""DISCO estimator: simplex weights on the fit split, PIER and uniqueness on the eval split."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, asdict
from typing import Optional, Sequence

import numpy as np

from .core import EcosystemAudit, FitConfig, ValidationError, rng_for
from .simplex import IllConditionedWarning, QpSolution, SimplexWeights, solve_simplex_ls


@dataclass(frozen=True)
class PierReport:
    weights: SimplexWeights
    residuals: np.ndarray
    uniqueness: float
    ci_low: float
    ci_high: float
    n_fit: int
    n_eval: int
    alpha: float = 0.10

    def to_dict(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "residuals": np.asarray(self.residuals).tolist(),
            "uniqueness": float(self.uniqueness),
            "ci_low": float(self.ci_low),
            "ci_high": float(self.ci_high),
            "alpha": float(self.alpha),
            "n_fit": int(self.n_fit),
            "n_eval": int(self.n_eval),
        }


@dataclass(frozen=True)
class AnchorBound:
    """Inputs of the anchor/design error bound.

    ``c_phi`` bounds the Euclidean norm of the peer response vector; ``l_x`` and
    ``l_theta`` are Lipschitz constants in input and dose; ``r_x``/``r_theta``
    are the maximal anchor offsets; ``weight_error`` is ``||w_hat - w_star||``.
    """

    c_phi: float
    l_x: float
    l_theta: float
    r_x: float
    r_theta: float
    weight_error: float = 0.0

    @property
    def bound(self) -> float:
        return self.c_phi * self.weight_error + 2 * self.l_x * self.r_x + 2 * self.l_theta * self.r_theta


@dataclass(frozen=True)
class RouterComplexity:
    n_eff: float
    top_k_mass: float
    k: int

    def to_dict(self) -> dict:
        return asdict(self)


def _solve(A, y, lam, config: FitConfig) -> QpSolution:
    with warnings.catch_warnings():
        if lam > 0:
            warnings.simplefilter("ignore", IllConditionedWarning)
        return solve_simplex_ls(A, y, lam, config.solver_tol, config.solver_max_iters)


def fit_weights(audit: EcosystemAudit) -> QpSolution:
    """Regularised simplex least squares on the fit split only."""
    A, y = audit.fit_arrays()
    if A.shape[0] < 1:
        raise ValidationError("fit split is empty")
    return _solve(A, y, audit.config.lam(A.shape[0]), audit.config)


def fit_arrays(peers, target, config: Optional[FitConfig] = None) -> QpSolution:
    """Same as :func:`fit_weights` for raw arrays (peers m x p, target m)."""
    config = config or FitConfig()
    peers = np.asarray(peers, dtype=float)
    return _solve(peers, target, config.lam(peers.shape[0]), config)


def _boot_means(abs_res: np.ndarray, n_boot: int, seed: int) -> np.ndarray:
    n = abs_res.size
    out = np.empty(n_boot)
    for b in range(n_boot):
        idx = rng_for(seed, 0xB007, b).integers(0, n, size=n)
        out[b] = abs_res[idx].mean()
    return out


def evaluate_pier(
    audit: EcosystemAudit,
    weights: SimplexWeights,
    alpha: float = 0.10,
    n_boot: int = 1000,
    seed: int = 0,
    refit: bool = False,
) -> PierReport:
    """Residuals, uniqueness and a percentile-bootstrap interval on the eval split.

    The default bootstrap resamples eval points with the weights held fixed.
    With ``refit=True`` each replicate also resamples the fit split and refits
    the weights, which folds weight uncertainty into the interval.
    """
    if n_boot < 2:
        raise ValidationError("n_boot must be at least 2")
    if not 0 < alpha < 1:
        raise ValidationError("alpha must lie in (0, 1)")
    P, y = audit.eval_arrays()
    w = np.asarray(weights.w)
    if w.size != P.shape[1]:
        raise ValidationError(f"weights have length {w.size}, audit has {P.shape[1]} peers")
    if P.shape[0] < 1:
        raise ValidationError("eval split is empty")
    residuals = y - P @ w
    abs_res = np.abs(residuals)
    u_hat = float(abs_res.mean())

    if refit:
        Af, yf = audit.fit_arrays()
        m, n = len(yf), len(y)
        lam = audit.config.lam(m)
        boots = np.empty(n_boot)
        for b in range(n_boot):
            g = rng_for(seed, 0xB007, b)
            fi = g.integers(0, m, size=m)
            ei = g.integers(0, n, size=n)
            wb = _solve(Af[fi], yf[fi], lam, audit.config).weights.w
            boots[b] = np.abs(y[ei] - P[ei] @ wb).mean()
    else:
        boots = _boot_means(abs_res, n_boot, seed)
    lo, hi = np.quantile(boots, [alpha / 2, 1 - alpha / 2])
    # percentile intervals need not bracket the point estimate; widen if so
    lo, hi = min(float(lo), u_hat), max(float(hi), u_hat)
    return PierReport(weights, residuals, u_hat, lo, hi, audit.fit.values.shape[0], len(y), alpha)


def run_disco(audit: EcosystemAudit, alpha: float = 0.10, n_boot: int = 1000, seed: int = 0, refit: bool = False):
    """Fit then evaluate; returns ``(QpSolution, PierReport)``."""
    sol = fit_weights(audit)
    return sol, evaluate_pier(audit, sol.weights, alpha, n_boot, seed, refit)


def uniqueness_of(fit_peers, fit_target, eval_peers, eval_target, config: Optional[FitConfig] = None) -> float:
    """Point estimate of uniqueness for raw arrays, no interval."""
    w = fit_arrays(fit_peers, fit_target, config).weights.w
    return float(np.mean(np.abs(np.asarray(eval_target) - np.asarray(eval_peers) @ w)))


def per_model_uniqueness(fit_values, eval_values, config: Optional[FitConfig] = None, members: Optional[Sequence[int]] = None):
    """Uniqueness of each model in ``members`` against all other members.

    Returns ``(uniqueness, weights)`` where ``weights[j]`` maps peer column to
    weight. A single member has no peers and gets ``nan``.
    """
    fit_values = np.asarray(fit_values, dtype=float)
    eval_values = np.asarray(eval_values, dtype=float)
    members = list(range(fit_values.shape[1])) if members is None else list(members)
    out, weights = {}, {}
    for t in members:
        peers = [j for j in members if j != t]
        if not peers:
            out[t], weights[t] = math.nan, {}
            continue
        sol = fit_arrays(fit_values[:, peers], fit_values[:, t], config)
        out[t] = float(np.mean(np.abs(eval_values[:, t] - eval_values[:, peers] @ sol.weights.w)))
        weights[t] = dict(zip(peers, sol.weights.w.tolist()))
    return out, weights


def anchor_pier(eval_point, anchor_point, responses_at_anchor, weights: SimplexWeights, bound_inputs: AnchorBound):
    """PIER at ``eval_point`` read off the responses at a nearby anchor.

    ``eval_point`` and ``anchor_point`` are ``(x, theta)`` pairs with ``x`` a
    scalar or vector. ``responses_at_anchor`` holds the target response first,
    then the peers in weight order. Returns ``(pier_estimate, bound)``.
    """
    x_e, th_e = eval_point
    x_a, th_a = anchor_point
    dx = float(np.linalg.norm(np.atleast_1d(np.asarray(x_e, dtype=float) - np.asarray(x_a, dtype=float))))
    dth = abs(float(th_e) - float(th_a))
    slack = 1e-12
    if dx > bound_inputs.r_x * (1 + slack) + slack or dth > bound_inputs.r_theta * (1 + slack) + slack:
        raise ValidationError(
            f"anchor out of range: |dx|={dx:.3g} (r_x={bound_inputs.r_x}), "
            f"|dtheta|={dth:.3g} (r_theta={bound_inputs.r_theta})"
        )
    resp = np.asarray(responses_at_anchor, dtype=float).ravel()
    w = np.asarray(weights.w)
    if resp.size != w.size + 1:
        raise ValidationError("responses_at_anchor must hold the target plus one entry per peer")
    return float(resp[0] - w @ resp[1:]), bound_inputs.bound


def stochastic_router(weights: SimplexWeights, peer_responses, seed: int, n_draws: Optional[int] = None):
    """Route to peer ``j`` with probability ``w_j`` and return its response.

    With ``n_draws`` the router is queried that many times and an array of
    routed responses is returned.
    """
    resp = np.asarray(peer_responses, dtype=float).ravel()
    w = np.asarray(weights.w)
    if resp.size != w.size:
        raise ValidationError("one response per peer is required")
    g = rng_for(seed, 0x7007E)
    if n_draws is None:
        return float(resp[g.choice(w.size, p=w)])
    return resp[g.choice(w.size, size=n_draws, p=w)]


def oracle_router(target_responses, peer_matrix):
    """Per-point best single peer: ``min_j |target_i - peer_ij|`` and its mean."""
    t = np.asarray(target_responses, dtype=float).ravel()
    P = np.asarray(peer_matrix, dtype=float)
    if P.ndim == 1:
        P = P[:, None]
    if P.shape[0] != t.size:
        raise ValidationError("target and peer matrix disagree on the number of points")
    err = np.min(np.abs(t[:, None] - P), axis=1)
    return err, float(err.mean())


def router_complexity(weights: SimplexWeights, k: int = 3) -> RouterComplexity:
    w = np.asarray(weights.w)
    if not 1 <= k <= w.size:
        raise ValidationError(f"k must lie in [1, {w.size}]")
    return RouterComplexity(float(1.0 / np.sum(w * w)), float(np.sort(w)[::-1][:k].sum()), int(k))
