"""Synthetic ecosystems with known ground truth.

Each generator records the quantities an oracle needs (margin, projection
weights, population uniqueness) next to the sampled responses so downstream
tests can compare estimates against truth.
"""

from __future__ import annotations

import hashlib
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .active import LinearEcosystem, orthogonal_design
from .core import EcosystemAudit, FitConfig, ResponseMatrix, SampleSet, ValidationError, rng_for
from .disco import evaluate_pier, fit_weights, uniqueness_of
from .simplex import IllConditionedWarning, hull_distance, solve_simplex_ls

TARGET_KINDS = ("in_hull", "margin", "clone")


@dataclass(frozen=True)
class SyntheticEcosystem:
    ecosystem: LinearEcosystem
    responses: ResponseMatrix
    gamma: float
    w_star: np.ndarray
    population_uniqueness: float
    features: np.ndarray = field(repr=False)
    w_population: np.ndarray = field(default=None, repr=False)


def _margin_target(peers: np.ndarray, gamma: float, g: np.random.Generator) -> np.ndarray:
    d, p = peers.shape
    dirs = peers[:, 1:] - peers[:, :1]
    rank = np.linalg.matrix_rank(dirs) if p > 1 else 0
    if rank < d:
        # a normal to the peers' affine hull exists: offset an interior point along it
        w = g.dirichlet(np.ones(p))
        n = g.standard_normal(d)
        if rank:
            q = np.linalg.qr(dirs)[0][:, :rank]
            n -= q @ (q.T @ n)
        return peers @ w + gamma * n / np.linalg.norm(n)
    # full-dimensional hull: step outward from the vertex exposed by a random direction
    u = g.standard_normal(d)
    u /= np.linalg.norm(u)
    k = int(np.argmax(u @ peers))
    return peers[:, k] + gamma * u


def make_linear_ecosystem(
    d: int,
    n_models: int,
    target_kind: str = "in_hull",
    sigma: float = 0.0,
    seed: int = 0,
    *,
    gamma: float = 0.5,
    mix_weights: Optional[Sequence[float]] = None,
    clone_of: int = 0,
    n_samples: int = 400,
    design_scale: Optional[float] = None,
) -> SyntheticEcosystem:
    """Linear ecosystem with standard-normal peer coefficients and a constructed target.

    The target is model 0. ``target_kind`` is ``"in_hull"`` (convex combination
    of peers, Dirichlet weights unless ``mix_weights`` is given), ``"margin"``
    (at distance ``gamma`` from the peer hull) or ``"clone"`` (copy of peer
    ``clone_of``, counted among peers from 0). Sampled responses use standard
    Gaussian features, so the population projection weights are the hull
    witness in coefficient space.
    """
    if d < 1:
        raise ValidationError("margin construction needs d >= 1")
    if n_models < 2:
        raise ValidationError("need a target and at least one peer")
    if target_kind not in TARGET_KINDS:
        raise ValidationError(f"target_kind must be one of {TARGET_KINDS}")
    g = rng_for(seed, 0x5E0)
    p = n_models - 1
    peers = g.standard_normal((d, p))
    if target_kind == "in_hull":
        w = g.dirichlet(np.ones(p)) if mix_weights is None else np.asarray(mix_weights, dtype=float)
        if w.size != p or np.any(w < 0) or not math.isclose(w.sum(), 1.0, abs_tol=1e-12):
            raise ValidationError("mix_weights must be a simplex vector over the peers")
        target = peers @ w
    elif target_kind == "clone":
        if not 0 <= clone_of < p:
            raise ValidationError("clone_of must index a peer")
        target = peers[:, clone_of].copy()
    else:
        if gamma <= 0:
            raise ValidationError("margin target needs gamma > 0")
        target = _margin_target(peers, gamma, g)
    betas = np.column_stack([target, peers])
    eco = LinearEcosystem(orthogonal_design(d, seed, design_scale), betas, 0, sigma)

    true_gamma, w_star = hull_distance(target, peers)
    if target_kind == "in_hull":
        w_star_arr = np.asarray(w, dtype=float)
        true_gamma = 0.0 if true_gamma < 1e-9 else true_gamma
    elif target_kind == "clone":
        w_star_arr = np.eye(p)[clone_of]
        true_gamma = 0.0
    else:
        w_star_arr = w_star.w.copy()
    # independent response noise adds sigma^2 ||w||^2, so the population
    # projection is a ridge-penalised hull problem in coefficient space
    w_pop = w_star_arr if sigma == 0 else _ridge_hull(target, peers, sigma)
    gap = target - peers @ w_pop
    resid_sd = math.sqrt(float(gap @ gap) + sigma**2 * (1.0 + float(w_pop @ w_pop)))
    pop_u = math.sqrt(2.0 / math.pi) * resid_sd

    X = rng_for(seed, 0x5E1).standard_normal((n_samples, d))
    Y = X @ betas
    if sigma > 0:
        Y = Y + sigma * rng_for(seed, 0x5E2).standard_normal(Y.shape)
    labels = ["target"] + [f"peer{j}" for j in range(p)]
    sample = SampleSet.from_doses(np.zeros(n_samples))
    return SyntheticEcosystem(
        eco, ResponseMatrix.from_array(Y, labels, sample), true_gamma, w_star_arr, pop_u, X, np.asarray(w_pop)
    )


def _ridge_hull(target, peers, sigma):
    d = peers.shape[0]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", IllConditionedWarning)
        return solve_simplex_ls(peers, target, sigma**2 / d, 1e-13).weights.w


# -- saturation -------------------------------------------------------------

@dataclass(frozen=True)
class SaturationSpec:
    """Sweep of peer-set sizes in a skill-mixture ecosystem.

    ``generator="skill"`` draws each peer as a specialist on one of ``d`` base
    skills (unit coefficient plus ``jitter`` noise) and each target as a
    Dirichlet(1) mixture of skills. ``generator="gaussian"`` draws everything
    i.i.d. standard normal instead.
    """

    d: int = 10
    n_peers_grid: tuple = (1, 2, 5, 10, 15, 20, 30)
    n_fit: int = 400
    n_eval: int = 400
    sigma: float = 0.0
    seeds: tuple = tuple(range(20))
    generator: str = "skill"
    jitter: float = 0.05
    target: str = "random"

    def __post_init__(self):
        grid = tuple(int(n) for n in self.n_peers_grid)
        if self.d < 1 or not grid or any(n < 1 for n in grid) or any(b <= a for a, b in zip(grid, grid[1:])):
            raise ValidationError("saturation grid must be increasing positive integers and d >= 1")
        if self.generator not in ("skill", "gaussian") or self.target not in ("random", "in_hull"):
            raise ValidationError("unknown saturation generator or target mode")
        object.__setattr__(self, "n_peers_grid", grid)
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))


def _saturation_coeffs(spec: SaturationSpec, n_peers: int, g: np.random.Generator):
    d = spec.d
    if spec.generator == "skill":
        skills = g.integers(0, d, size=n_peers)
        peers = np.eye(d)[:, skills] + spec.jitter * g.standard_normal((d, n_peers))
        target = g.dirichlet(np.ones(d))
    else:
        peers = g.standard_normal((d, n_peers))
        target = g.standard_normal(d)
    if spec.target == "in_hull":
        target = peers @ g.dirichlet(np.ones(n_peers))
    return target, peers


def saturation_point(spec: SaturationSpec, n_peers: int, seed: int, config: Optional[FitConfig] = None) -> float:
    """Uniqueness of one random target against ``n_peers`` fresh peers."""
    g = rng_for(seed, 0x5A7, n_peers)
    target, peers = _saturation_coeffs(spec, n_peers, g)
    B = np.column_stack([target, peers])
    X = g.standard_normal((spec.n_fit + spec.n_eval, spec.d))
    Y = X @ B
    if spec.sigma > 0:
        Y = Y + spec.sigma * g.standard_normal(Y.shape)
    fit, ev = Y[: spec.n_fit], Y[spec.n_fit:]
    return uniqueness_of(fit[:, 1:], fit[:, 0], ev[:, 1:], ev[:, 0], config)


def run_saturation(spec: SaturationSpec, config: Optional[FitConfig] = None) -> list[tuple[int, float]]:
    """Mean uniqueness over seeds for every peer-set size in the grid."""
    return [
        (n, float(np.mean([saturation_point(spec, n, s, config) for s in spec.seeds])))
        for n in spec.n_peers_grid
    ]


# -- non-identifiability ----------------------------------------------------

@dataclass(frozen=True)
class StepResponse:
    """Piecewise-constant response of the dose on [0, 1]: ``values[k]`` on ``[breaks[k], breaks[k+1])``."""

    breaks: tuple
    values: tuple

    def __call__(self, theta):
        theta = np.asarray(theta, dtype=float)
        idx = np.clip(np.searchsorted(np.asarray(self.breaks), theta, side="right") - 1, 0, len(self.values) - 1)
        return np.asarray(self.values, dtype=float)[idx]


def population_uniqueness_steps(target: StepResponse, peers: Sequence[StepResponse]) -> float:
    """Exact uniqueness of step responses under the uniform design on [0, 1].

    Projection weights minimise the exact L2 distance, computed piece by piece
    with square-root-length row weights.
    """
    cuts = sorted(set(target.breaks).union(*(set(p.breaks) for p in peers)) | {0.0, 1.0})
    cuts = [c for c in cuts if 0.0 <= c <= 1.0]
    lo, hi = np.array(cuts[:-1]), np.array(cuts[1:])
    length = hi - lo
    mid = (lo + hi) / 2
    t = target(mid)
    P = np.column_stack([p(mid) for p in peers])
    sw = np.sqrt(length)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", IllConditionedWarning)
        w = solve_simplex_ls(P * sw[:, None], t * sw).weights.w
    return float(np.sum(length * np.abs(t - P @ w)))


@dataclass(frozen=True)
class NonIdentifiabilityPair:
    s0_mass: float
    ecosystems: tuple
    logs: tuple = field(repr=False)
    population_uniqueness: tuple = ()

    def log_hashes(self) -> tuple[str, str]:
        return tuple(hashlib.sha256(np.ascontiguousarray(log).tobytes()).hexdigest() for log in self.logs)


def make_nonidentifiability_pair(s0_mass: float, seed: int, n_logs: int = 500, n_peers: int = 2):
    """Two ecosystems whose observational logs on S0 = [0, s0_mass) coincide.

    Ecosystem 0 is identically zero. In ecosystem 1 the target is the indicator
    of [s0_mass, 1] and the peers are zero. Every model's log is drawn from the
    uniform design restricted to S0. Returns ``(pair, report)``.
    """
    if not 0 < s0_mass < 1:
        raise ValidationError("s0_mass must lie in (0, 1)")
    zero = StepResponse((0.0,), (0.0,))
    eco0 = (zero,) + (zero,) * n_peers
    eco1 = (StepResponse((0.0, s0_mass), (0.0, 1.0)),) + (zero,) * n_peers

    def logs_for(eco):
        rows = []
        for j, resp in enumerate(eco):
            theta = rng_for(seed, 0xC2, j).uniform(0.0, s0_mass, size=n_logs)
            rows.append(np.column_stack([np.full(n_logs, j), theta, resp(theta)]))
        return np.vstack(rows)

    logs = (logs_for(eco0), logs_for(eco1))
    u = (
        population_uniqueness_steps(eco0[0], eco0[1:]),
        population_uniqueness_steps(eco1[0], eco1[1:]),
    )
    pair = NonIdentifiabilityPair(float(s0_mass), (eco0, eco1), logs, u)
    # any statistic of the logs alone is blind to the difference
    naive = tuple(float(np.mean(np.abs(lg[lg[:, 0] == 0, 2]))) for lg in logs)
    h = pair.log_hashes()
    report = {
        "s0_mass": float(s0_mass),
        "log_hashes": list(h),
        "logs_identical": bool(h[0] == h[1] and np.array_equal(logs[0], logs[1])),
        "population_uniqueness": list(u),
        "expected_uniqueness": [0.0, 1.0 - s0_mass],
        "log_based_estimate": list(naive),
    }
    return pair, report


# -- robustness ambiguity ---------------------------------------------------

@dataclass(frozen=True)
class RobustnessPair:
    c: float
    K: int
    l_low: float
    l_high: float

    def target_a(self, theta):
        return np.full_like(np.asarray(theta, dtype=float), 2 * self.c / math.pi)

    def target_b(self, theta):
        return self.c * np.sin(2 * math.pi * self.K * np.asarray(theta, dtype=float))

    @property
    def lipschitz_b(self) -> float:
        return 2 * math.pi * self.K * self.c


def frequency_for(l_high: float, c: float) -> int:
    """Smallest integer frequency whose sine residual has slope at least ``l_high``."""
    return max(1, math.ceil(l_high / (2 * math.pi * c)))


def max_slope(f, n: int = 2**20) -> float:
    """Largest finite-difference slope of ``f`` on a uniform grid over [0, 1]."""
    theta = np.linspace(0.0, 1.0, n + 1)
    return float(np.max(np.abs(np.diff(f(theta)))) * n)


def make_robustness_pair(
    c: float,
    K: Optional[int] = None,
    n_eval: int = 10_000,
    l_low: float = 0.5,
    l_high: Optional[float] = None,
    doses: str = "grid",
    seed: int = 0,
    n_boot: int = 200,
):
    """Constant target vs. oscillating target with equal uniqueness against a zero peer.

    ``doses="grid"`` evaluates on midpoints of a uniform grid (a quadrature
    rule); ``"random"`` draws uniform doses. Returns ``(pair, report_a, report_b)``.
    """
    if c <= 0:
        raise ValidationError("amplitude c must be positive")
    if K is None:
        if l_high is None:
            raise ValidationError("give either K or l_high")
        K = frequency_for(l_high, c)
    if K < 1:
        raise ValidationError("frequency K must be at least 1")
    if l_high is None:
        l_high = 2 * math.pi * K * c
    pair = RobustnessPair(float(c), int(K), float(l_low), float(l_high))
    if doses == "grid":
        theta_e = (np.arange(n_eval) + 0.5) / n_eval
    elif doses == "random":
        theta_e = rng_for(seed, 0x20B).uniform(size=n_eval)
    else:
        raise ValidationError("doses must be 'grid' or 'random'")
    theta_f = (np.arange(64) + 0.5) / 64
    reports = []
    for target in (pair.target_a, pair.target_b):
        fit = np.column_stack([target(theta_f), np.zeros_like(theta_f)])
        ev = np.column_stack([target(theta_e), np.zeros_like(theta_e)])
        audit = EcosystemAudit.from_arrays(fit, ev, target=0)
        reports.append(evaluate_pier(audit, fit_weights(audit).weights, n_boot=n_boot, seed=seed))
    return pair, reports[0], reports[1]


# -- attribution and pruning families -----------------------------------------

def make_divergence_ecosystem(seed: int, n: int = 2000, d: int = 5, slice_prob: float = 0.1, shift: float = 3.0):
    """Dominant model, its exact clone and a niche specialist.

    Inputs carry a rare context flag ``z`` (probability ``slice_prob``). Labels
    are ``x'b + shift * z``. The dominant model ignores the flag, the clone
    copies it, and the specialist is exact on the flagged slice but uses
    unrelated coefficients elsewhere. Returns ``(ResponseMatrix, labels)``.
    """
    g = rng_for(seed, 0xF2B)
    b = g.standard_normal(d)
    b_off = g.standard_normal(d)
    x = g.standard_normal((n, d))
    z = (g.uniform(size=n) < slice_prob).astype(float)
    labels = x @ b + shift * z
    dominant = x @ b
    specialist = np.where(z > 0, labels, x @ b_off)
    Y = np.column_stack([dominant, dominant.copy(), specialist])
    sample = SampleSet(tuple((f"x{i}", float(zi)) for i, zi in enumerate(z)))
    return ResponseMatrix.from_array(Y, ["M1_dominant", "M2_clone", "M3_specialist"], sample), labels


def make_prune_ecosystem(
    seed: int, n_extreme: int = 5, n_interior: int = 7, d: int = 6, n: int = 600,
    jitter: float = 0.05, label_noise: float = 0.5, clone: bool = False,
):
    """Models that are well covered by peers plus a few extreme ones, each with its own labels.

    Extreme models have standard-normal coefficients; interior models are
    Dirichlet mixtures of them plus ``jitter``. Model ``j`` is scored against
    ``x'beta_j + noise``. With ``clone=True`` the last model copies model 0.
    Returns ``(ResponseMatrix, labels)`` with labels of shape n x N.
    """
    g = rng_for(seed, 0x94E)
    ext = g.standard_normal((d, n_extreme))
    mix = ext @ g.dirichlet(np.ones(n_extreme), size=n_interior).T
    inner = mix + jitter * g.standard_normal((d, n_interior))
    B = np.column_stack([ext, inner])
    if clone:
        B = np.column_stack([B, B[:, 0]])
    x = g.standard_normal((n, d))
    Y = x @ B
    labels = Y + label_noise * g.standard_normal(Y.shape)
    names = [f"E{j}" for j in range(n_extreme)] + [f"I{j}" for j in range(n_interior)]
    if clone:
        names.append("E0_clone")
    return ResponseMatrix.from_array(Y, names), labels
