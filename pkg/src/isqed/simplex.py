"""Simplex-constrained least squares, simplex projection and convex-hull distance.

The main solver minimises

    f(w) = (1/m) ||y - A w||^2 + lam ||w||^2    over  {w >= 0, sum(w) = 1}

with accelerated projected gradient (FISTA, adaptive restart).  Every few dozen
iterations the current support is handed to a small primal active-set routine
that solves the equality-constrained subproblem exactly; this is what brings the
KKT residual down to round-off instead of the O(1/k) tail of a first-order
method.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

__all__ = [
    "SimplexWeights",
    "QpSolution",
    "SolverError",
    "IllConditionedWarning",
    "project_simplex",
    "solve_simplex_ls",
    "hull_distance",
    "solve_linear_span_ls",
    "kkt_residual",
]

_CHUNK = 40
_COND_WARN = 1e12


class SolverError(RuntimeError):
    """Raised when the simplex QP does not reach the KKT tolerance."""

    def __init__(self, message, best_weights, kkt_residual, iterations):
        super().__init__(f"{message} (kkt_residual={kkt_residual:.3e}, iterations={iterations})")
        self.best_weights = best_weights
        self.kkt_residual = kkt_residual
        self.iterations = iterations


class IllConditionedWarning(UserWarning):
    """Peer Gram matrix is nearly singular; weights may not be unique."""


@dataclass(frozen=True)
class SimplexWeights:
    w: np.ndarray

    def __post_init__(self):
        w = np.array(self.w, dtype=float, copy=True).ravel()
        if w.size == 0:
            raise ValueError("simplex weights must be non-empty")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12 * max(1, w.size):
            raise ValueError("weights are not on the probability simplex")
        w.setflags(write=False)
        object.__setattr__(self, "w", w)

    def __len__(self):
        return self.w.size

    def __array__(self, dtype=None, copy=None):
        return self.w if dtype is None else self.w.astype(dtype)

    def tolist(self):
        return self.w.tolist()

    @classmethod
    def uniform(cls, p: int) -> "SimplexWeights":
        return cls(np.full(p, 1.0 / p))

    @classmethod
    def vertex(cls, p: int, j: int) -> "SimplexWeights":
        w = np.zeros(p)
        w[j] = 1.0
        return cls(w)


@dataclass(frozen=True)
class QpSolution:
    weights: SimplexWeights
    objective: float
    kkt_residual: float
    iterations: int
    gram_condition: float = float("nan")


def project_simplex(v) -> SimplexWeights:
    """Euclidean projection of ``v`` onto the probability simplex (sort-based)."""
    return SimplexWeights(_project(np.asarray(v, dtype=float).ravel()))


def _project(v: np.ndarray, check: bool = True) -> np.ndarray:
    if check:
        if v.size == 0:
            raise ValueError("cannot project an empty vector")
        if not np.all(np.isfinite(v)):
            raise ValueError("cannot project a vector with non-finite entries")
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, v.size + 1)
    rho = np.nonzero(u - css / k > 0)[0][-1]
    w = np.maximum(v - css[rho] / (rho + 1), 0.0)
    # clean residual rounding so the sum is 1 to the last ulp
    s = w.sum()
    if s != 1.0:
        w /= s
    return w


def kkt_residual(G: np.ndarray, c: np.ndarray, w: np.ndarray, L: float) -> float:
    """Gradient-mapping norm ||w - P(w - grad/L)||_inf; zero exactly at optima."""
    if L <= 0:
        return 0.0
    g = G @ w + c
    return float(np.max(np.abs(w - _project(w - g / L, False))))


def _lipschitz(G: np.ndarray, iters: int = 200) -> float:
    """Largest eigenvalue of the PSD matrix G by power iteration, padded upward."""
    p = G.shape[0]
    if not np.any(G):
        return 0.0
    x = np.ones(p) / np.sqrt(p) + 1e-3 * np.arange(p)
    x /= np.linalg.norm(x)
    est = 0.0
    for _ in range(iters):
        y = G @ x
        ny = np.linalg.norm(y)
        if ny == 0:
            break
        x = y / ny
        new = float(x @ G @ x)
        if abs(new - est) <= 1e-12 * max(new, 1e-300):
            est = new
            break
        est = new
    # power iteration approaches from below; trace is a hard upper bound
    return min(1.05 * est + 1e-15, float(np.trace(G))) or float(np.trace(G))


def _objective(A, y, lam, w):
    r = y - A @ w
    return float(r @ r) / len(y) + lam * float(w @ w)


def _eqp(G, c, S):
    """Minimise 0.5 w'Gw + c'w on {sum(w_S) = 1, w_j = 0 off S}. Returns w_S."""
    k = len(S)
    K = np.zeros((k + 1, k + 1))
    K[:k, :k] = G[np.ix_(S, S)]
    K[:k, k] = 1.0
    K[k, :k] = 1.0
    rhs = np.concatenate([-c[S], [1.0]])
    try:
        sol = np.linalg.solve(K, rhs)
        if not np.all(np.isfinite(sol)):
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
    return sol[:k]


def _active_set(G, c, w0, L, tol, max_steps):
    """Primal active-set iterations started from a feasible point ``w0``."""
    p = w0.size
    w = w0.copy()
    S = list(np.flatnonzero(w > 0))
    steps = 0
    for steps in range(1, max_steps + 1):
        z = np.zeros(p)
        z[S] = _eqp(G, c, S)
        if np.all(z[S] >= -1e-14):
            w = np.maximum(z, 0.0)
            w /= w.sum()
            g = G @ w + c
            nu = float(np.mean(g[S]))
            off = np.setdiff1d(np.arange(p), S)
            if off.size == 0:
                break
            mult = g[off] - nu
            j = int(np.argmin(mult))
            if mult[j] >= -0.5 * tol * L:
                break
            S.append(int(off[j]))
        else:
            neg = [j for j in S if z[j] < 0]
            ratios = [w[j] / (w[j] - z[j]) for j in neg]
            k = int(np.argmin(ratios))
            alpha = ratios[k]
            w = np.maximum(w + alpha * (z - w), 0.0)
            w[neg[k]] = 0.0
            w /= w.sum()
            S = [j for j in S if w[j] > 0]
    return w, steps


def solve_simplex_ls(A, y, lam: float = 0.0, tol: float = 1e-10, max_iters: int = 100_000) -> QpSolution:
    """Minimise (1/m)||y - A w||^2 + lam ||w||^2 over the probability simplex.

    Raises:
        SolverError: if the KKT residual is still above ``tol`` after
            ``max_iters`` iterations; the best iterate is attached to the error.
    """
    A = np.asarray(A, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if A.ndim == 1:
        A = A[:, None]
    m, p = A.shape
    if m < 1 or p < 1 or y.size != m:
        raise ValueError(f"shape mismatch: A is {A.shape}, y has {y.size} entries")
    if lam < 0:
        raise ValueError("regularisation must be non-negative")
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(y))):
        raise ValueError("non-finite entries in the least-squares data")

    G = (2.0 / m) * (A.T @ A) + 2.0 * lam * np.eye(p)
    c = -(2.0 / m) * (A.T @ y)
    # exact eigenvalue is cheaper than power iteration at small sizes
    L = max(float(np.linalg.eigvalsh(G)[-1]), 0.0) * (1 + 1e-12) if p <= 64 else _lipschitz(G)

    gram = A.T @ A / m
    diag = np.sqrt(np.maximum(np.diag(gram), 1e-300))
    cond = float(np.linalg.cond(gram / np.outer(diag, diag))) if p > 1 else 1.0
    if lam == 0 and p > 1 and not cond < _COND_WARN:
        warnings.warn("peer Gram matrix is nearly singular; weights may not be unique", IllConditionedWarning)

    if L == 0.0:
        w = np.full(p, 1.0 / p)
        return QpSolution(SimplexWeights(w), _objective(A, y, lam, w), 0.0, 0, cond)
    if p == 1:
        w = np.ones(1)
        return QpSolution(SimplexWeights(w), _objective(A, y, lam, w), 0.0, 0, cond)

    x = np.full(p, 1.0 / p)
    polish_steps = 4 * p + 50
    # small problems usually finish in a handful of active-set steps
    best_w, it = _active_set(G, c, x, L, tol, polish_steps)
    best_r = kkt_residual(G, c, best_w, L)
    if best_r <= tol:
        return QpSolution(SimplexWeights(best_w), _objective(A, y, lam, best_w), best_r, it, cond)
    r0 = kkt_residual(G, c, x, L)
    if r0 < best_r:
        best_w, best_r = x, r0
    x_prev = x.copy()
    t = 1.0
    while it < max_iters:
        n = min(_CHUNK, max_iters - it)
        for _ in range(n):
            t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
            v = x + ((t - 1.0) / t_next) * (x - x_prev)
            g = G @ v + c
            x_new = _project(v - g / L, False)
            # gradient-based adaptive restart
            if (v - x_new) @ (x_new - x) > 0:
                t_next = 1.0
            x_prev, x, t = x, x_new, t_next
        it += n

        cand, steps = _active_set(G, c, x, L, tol, polish_steps)
        it += steps
        for w in (cand, x):
            r = kkt_residual(G, c, w, L)
            if r < best_r:
                best_w, best_r = w, r
        if best_r <= tol:
            return QpSolution(SimplexWeights(best_w), _objective(A, y, lam, best_w), best_r, it, cond)

    raise SolverError("simplex least squares did not converge", SimplexWeights(best_w), best_r, it)


def hull_distance(target, peers, tol: float = 1e-10) -> tuple[float, SimplexWeights]:
    """Euclidean distance from ``target`` (length d) to the hull of the columns of ``peers`` (d x p)."""
    target = np.asarray(target, dtype=float).ravel()
    peers = np.asarray(peers, dtype=float)
    if peers.ndim == 1:
        peers = peers[:, None]
    if peers.shape[0] != target.size or peers.shape[1] < 1:
        raise ValueError(f"shape mismatch: target has {target.size} entries, peers are {peers.shape}")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", IllConditionedWarning)
        sol = solve_simplex_ls(peers, target, 0.0, tol)
    dist = float(np.linalg.norm(target - peers @ sol.weights.w))
    return dist, sol.weights


def solve_linear_span_ls(A, y) -> tuple[np.ndarray, float]:
    """Minimum-norm unconstrained least squares; returns (coeffs, ||y - A coeffs||)."""
    A = np.asarray(A, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if A.ndim == 1:
        A = A[:, None]
    coeffs = np.linalg.lstsq(A, y, rcond=None)[0]
    return coeffs, float(np.linalg.norm(y - A @ coeffs))
