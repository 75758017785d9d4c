"""Shared domain types: model ids, samples, response matrices and audit bundles."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


class ValidationError(ValueError):
    """Raised when user-supplied data or configuration violates a contract."""


def rng_for(seed: int, *keys: int) -> np.random.Generator:
    """Return a counter-based (Philox) generator for ``seed`` and a spawn path.

    Distinct key paths give statistically independent streams, so trial ``i`` of
    an experiment can use ``rng_for(seed, i)`` regardless of execution order.
    """
    ss = np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ModelId:
    id: str
    index: int

    def __post_init__(self):
        if self.index < 0:
            raise ValidationError(f"model index must be non-negative, got {self.index}")


def make_model_ids(labels: Sequence[str]) -> tuple[ModelId, ...]:
    labels = [str(s) for s in labels]
    if len(set(labels)) != len(labels):
        raise ValidationError("model labels must be unique")
    return tuple(ModelId(s, i) for i, s in enumerate(labels))


@dataclass(frozen=True)
class DoseGrid:
    values: np.ndarray

    def __post_init__(self):
        v = _frozen(self.values)
        if v.ndim != 1 or v.size == 0:
            raise ValidationError("dose grid must be a non-empty 1-D sequence")
        if v.size > 1 and np.any(np.diff(v) <= 0):
            raise ValidationError("dose grid must be strictly increasing")
        object.__setattr__(self, "values", v)

    @property
    def spacing(self) -> float:
        if self.values.size < 2:
            return 0.0
        return float(np.max(np.diff(self.values)))

    @classmethod
    def uniform(cls, lo: float, hi: float, n: int) -> "DoseGrid":
        return cls(np.linspace(lo, hi, n))


@dataclass(frozen=True)
class SampleSet:
    """Input-dose points plus their row positions in the parent sample."""

    points: tuple[tuple[str, float], ...]
    role: str = "all"
    indices: Optional[tuple[int, ...]] = None

    def __post_init__(self):
        if self.role not in ("fit", "eval", "all"):
            raise ValidationError(f"unknown sample role {self.role!r}")
        pts = tuple((str(i), float(d)) for i, d in self.points)
        object.__setattr__(self, "points", pts)
        idx = tuple(range(len(pts))) if self.indices is None else tuple(int(i) for i in self.indices)
        if len(idx) != len(pts):
            raise ValidationError("indices and points differ in length")
        object.__setattr__(self, "indices", idx)

    def __len__(self) -> int:
        return len(self.points)

    @classmethod
    def from_doses(cls, doses, prefix: str = "x", role: str = "all") -> "SampleSet":
        return cls(tuple((f"{prefix}{i}", float(d)) for i, d in enumerate(np.ravel(doses))), role=role)


@dataclass(frozen=True)
class ResponseMatrix:
    """Scalarised responses: rows are sample points, columns are models."""

    models: tuple[ModelId, ...]
    sample: SampleSet
    values: np.ndarray

    def __post_init__(self):
        models = tuple(self.models)
        vals = _frozen(self.values)
        if vals.ndim != 2:
            raise ValidationError("response values must be a 2-D matrix")
        if vals.shape != (len(self.sample), len(models)):
            raise ValidationError(
                f"response matrix shape {vals.shape} does not match "
                f"{len(self.sample)} points x {len(models)} models"
            )
        if not np.all(np.isfinite(vals)):
            raise ValidationError("response matrix contains non-finite entries")
        if [m.index for m in models] != list(range(len(models))):
            raise ValidationError("model indices must be contiguous 0..N-1 in column order")
        if len({m.id for m in models}) != len(models):
            raise ValidationError("model labels must be unique")
        object.__setattr__(self, "models", models)
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_array(cls, values, labels: Optional[Sequence[str]] = None, sample: Optional[SampleSet] = None):
        values = np.asarray(values, dtype=float)
        if values.ndim != 2:
            raise ValidationError("response values must be a 2-D matrix")
        if labels is None:
            labels = [f"M{j + 1}" for j in range(values.shape[1])]
        if sample is None:
            sample = SampleSet.from_doses(np.zeros(values.shape[0]))
        return cls(make_model_ids(labels), sample, values)

    @property
    def labels(self) -> list[str]:
        return [m.id for m in self.models]

    def model(self, label: str) -> ModelId:
        for m in self.models:
            if m.id == label:
                return m
        raise ValidationError(f"unknown model {label!r}")

    def column(self, model) -> np.ndarray:
        j = model.index if isinstance(model, ModelId) else self.model(model).index
        return self.values[:, j]

    def rows(self, sample: SampleSet) -> "ResponseMatrix":
        """Restrict to the rows named by ``sample.indices``."""
        return ResponseMatrix(self.models, sample, self.values[list(sample.indices)])

    def select(self, labels: Sequence[str]) -> "ResponseMatrix":
        """Keep the named columns (in the given order) and re-index them."""
        cols = [self.model(s).index for s in labels]
        return ResponseMatrix(make_model_ids(labels), self.sample, self.values[:, cols])


@dataclass(frozen=True)
class FitConfig:
    lambda0: float = 1e-3
    lambda_exponent: float = 1.5
    solver_tol: float = 1e-10
    solver_max_iters: int = 100_000
    rng_seed: int = 0

    def __post_init__(self):
        if self.lambda0 < 0:
            raise ValidationError("lambda0 must be non-negative")
        # exponent > 1 gives both lambda_m -> 0 and m * lambda_m -> 0
        if self.lambda_exponent <= 1:
            raise ValidationError("lambda_exponent must exceed 1")
        if self.solver_tol <= 0 or self.solver_max_iters < 1:
            raise ValidationError("solver tolerance and iteration cap must be positive")

    def lam(self, m: int) -> float:
        return self.lambda0 * float(m) ** (-self.lambda_exponent)


def split_honest(points: SampleSet, fit_fraction: float, seed: int) -> tuple[SampleSet, SampleSet]:
    """Randomly partition ``points`` into disjoint fit and eval sets."""
    n = len(points)
    if n < 2:
        raise ValidationError("insufficient sample: need at least 2 points to split")
    if not 0.0 < fit_fraction < 1.0:
        raise ValidationError("fit_fraction must lie in (0, 1)")
    n_fit = min(max(int(round(fit_fraction * n)), 1), n - 1)
    perm = rng_for(seed, 0x5B17).permutation(n)
    fit_pos, eval_pos = np.sort(perm[:n_fit]), np.sort(perm[n_fit:])

    def sub(pos, role):
        return SampleSet(
            tuple(points.points[i] for i in pos), role=role, indices=tuple(points.indices[i] for i in pos)
        )

    return sub(fit_pos, "fit"), sub(eval_pos, "eval")


@dataclass(frozen=True)
class EcosystemAudit:
    target: ModelId
    peers: tuple[ModelId, ...]
    fit: ResponseMatrix
    eval: ResponseMatrix
    config: FitConfig = field(default_factory=FitConfig)

    def __post_init__(self):
        peers = tuple(self.peers)
        if not peers:
            raise ValidationError("an audit needs at least one peer")
        if self.target in peers:
            raise ValidationError("target must not be among its peers")
        if self.fit.models != self.eval.models:
            raise ValidationError("fit and eval matrices must share model columns")
        object.__setattr__(self, "peers", peers)

    @property
    def peer_cols(self) -> list[int]:
        return [p.index for p in self.peers]

    def fit_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """(peer matrix m x p, target vector m) on the fit split."""
        return self.fit.values[:, self.peer_cols], self.fit.values[:, self.target.index]

    def eval_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return self.eval.values[:, self.peer_cols], self.eval.values[:, self.target.index]

    @classmethod
    def from_matrix(
        cls,
        matrix: ResponseMatrix,
        target: str,
        peers: Optional[Sequence[str]] = None,
        fit_fraction: float = 0.5,
        seed: int = 0,
        config: Optional[FitConfig] = None,
    ) -> "EcosystemAudit":
        """Split ``matrix`` honestly and bundle target/peers into an audit."""
        t = matrix.model(target)
        if peers is None:
            peer_ids = tuple(m for m in matrix.models if m != t)
        else:
            peer_ids = tuple(matrix.model(p) for p in peers)
        fit_s, eval_s = split_honest(matrix.sample, fit_fraction, seed)
        return cls(t, peer_ids, matrix.rows(fit_s), matrix.rows(eval_s), config or FitConfig(rng_seed=seed))

    @classmethod
    def from_arrays(cls, fit_values, eval_values, target: int = 0, config: Optional[FitConfig] = None):
        """Audit from pre-split arrays; column ``target`` is the target, the rest peers."""
        fit_values = np.asarray(fit_values, dtype=float)
        eval_values = np.asarray(eval_values, dtype=float)
        labels = [f"M{j + 1}" for j in range(fit_values.shape[1])]
        fit = ResponseMatrix.from_array(fit_values, labels, SampleSet.from_doses(np.zeros(len(fit_values)), role="fit"))
        ev = ResponseMatrix.from_array(eval_values, labels, SampleSet.from_doses(np.zeros(len(eval_values)), role="eval"))
        t = fit.models[target]
        return cls(t, tuple(m for m in fit.models if m != t), fit, ev, config or FitConfig())
