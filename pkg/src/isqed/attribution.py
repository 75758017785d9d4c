"""Exact Shapley attribution over model coalitions and its disagreement with uniqueness."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .core import FitConfig, ModelId, ResponseMatrix, ValidationError, make_model_ids, split_honest
from .disco import per_model_uniqueness

MAX_EXACT_PLAYERS = 20

REDUNDANT = "redundant-but-credited"
UNCREDITED = "unique-but-uncredited"
CONSISTENT = "consistent"
NO_PEERS = "no peers"


@dataclass(frozen=True)
class CoalitionGame:
    """Characteristic function stored as a table indexed by coalition bitmask.

    Bit ``i`` of the mask is player ``i``. ``values[0]`` is the empty
    coalition and must be 0.
    """

    players: tuple[ModelId, ...]
    values: np.ndarray

    def __post_init__(self):
        players = tuple(self.players)
        n = len(players)
        if n < 1:
            raise ValidationError("a game needs at least one player")
        if n > MAX_EXACT_PLAYERS:
            raise ValidationError(f"exact enumeration supports at most {MAX_EXACT_PLAYERS} players")
        v = np.array(self.values, dtype=float).ravel()
        if v.size != 1 << n:
            raise ValidationError(f"missing coalition values: expected {1 << n}, got {v.size}")
        if not np.all(np.isfinite(v)):
            raise ValidationError("coalition values must be finite")
        if v[0] != 0.0:
            raise ValidationError("value of the empty coalition must be 0")
        v.setflags(write=False)
        object.__setattr__(self, "players", players)
        object.__setattr__(self, "values", v)

    @property
    def n_players(self) -> int:
        return len(self.players)

    def value(self, coalition: Sequence[int]) -> float:
        mask = 0
        for i in coalition:
            mask |= 1 << int(i)
        return float(self.values[mask])

    @property
    def grand_value(self) -> float:
        return float(self.values[-1])

    @classmethod
    def from_table(cls, players, table: Mapping) -> "CoalitionGame":
        """Build from ``{coalition: value}`` where coalitions are iterables of player indices.

        The empty coalition may be omitted (it is 0); every other coalition must be present.
        """
        players = _as_players(players)
        n = len(players)
        v = np.full(1 << n, np.nan)
        v[0] = 0.0
        for coalition, val in table.items():
            mask = 0
            for i in coalition:
                if not 0 <= int(i) < n:
                    raise ValidationError(f"coalition member {i} is not a player")
                mask |= 1 << int(i)
            v[mask] = float(val)
        missing = np.flatnonzero(np.isnan(v))
        if missing.size:
            first = [i for i in range(n) if missing[0] >> i & 1]
            raise ValidationError(f"missing coalition value for {first} ({missing.size} missing in total)")
        return cls(players, v)


def _as_players(players) -> tuple[ModelId, ...]:
    players = list(players)
    if players and isinstance(players[0], ModelId):
        return tuple(players)
    return make_model_ids([str(p) for p in players])


def _popcounts(n: int) -> np.ndarray:
    masks = np.arange(1 << n)
    counts = np.zeros(1 << n, dtype=np.int64)
    for i in range(n):
        counts += (masks >> i) & 1
    return counts


def shapley_exact(game: CoalitionGame) -> np.ndarray:
    """Shapley values by enumerating every coalition once per player.

    ``phi_i = sum_{S not containing i} |S|! (n-|S|-1)! / n! (v(S+i) - v(S))``.
    """
    n = game.n_players
    v = game.values
    masks = np.arange(1 << n)
    size = _popcounts(n)
    weight = np.array([math.factorial(s) * math.factorial(n - s - 1) / math.factorial(n) if s < n else 0.0
                       for s in range(n + 1)])
    phi = np.empty(n)
    for i in range(n):
        without = masks[(masks >> i & 1) == 0]
        phi[i] = float(np.sum(weight[size[without]] * (v[without | (1 << i)] - v[without])))
    return phi


def game_from_evaluator(players, evaluator: Callable[[tuple[int, ...]], float]) -> CoalitionGame:
    """Tabulate ``evaluator(coalition)`` over all non-empty coalitions; the empty one is 0."""
    players = _as_players(players)
    n = len(players)
    if n > MAX_EXACT_PLAYERS:
        raise ValidationError(f"exact enumeration supports at most {MAX_EXACT_PLAYERS} players")
    v = np.zeros(1 << n)
    for mask in range(1, 1 << n):
        v[mask] = float(evaluator(tuple(i for i in range(n) if mask >> i & 1)))
    return CoalitionGame(players, v)


def coverage_game(responses: ResponseMatrix, labels, band: float) -> CoalitionGame:
    """Coalition value = fraction of points where some member is within ``band`` of the label.

    This is the accuracy of an oracle that, per input, picks the best member
    of the coalition.
    """
    Y = responses.values
    labels = np.asarray(labels, dtype=float).ravel()
    if labels.size != Y.shape[0]:
        raise ValidationError("labels must align with response rows")
    if band < 0:
        raise ValidationError("band must be non-negative")
    hit = np.abs(Y - labels[:, None]) <= band
    n = Y.shape[1]
    if n > MAX_EXACT_PLAYERS:
        raise ValidationError(f"exact enumeration supports at most {MAX_EXACT_PLAYERS} players")
    # any-hit per coalition, built up one player at a time
    covered = np.zeros((1 << n, Y.shape[0]), dtype=bool)
    for mask in range(1, 1 << n):
        low = mask & -mask
        i = low.bit_length() - 1
        covered[mask] = covered[mask ^ low] | hit[:, i]
    v = covered.mean(axis=1)
    v[0] = 0.0
    return CoalitionGame(responses.models, v)


def redundancy_game() -> CoalitionGame:
    """Two interchangeable models: any non-empty coalition is worth 1."""
    return CoalitionGame(make_model_ids(["M1", "M2"]), np.array([0.0, 1.0, 1.0, 1.0]))


@dataclass(frozen=True)
class AttributionConfig:
    """Flag rules: credited means ``shapley > credit_fraction * max``; quartiles set the other flag."""

    tol: float = 1e-6
    credit_fraction: float = 0.1
    upper_quantile: float = 0.75
    lower_quantile: float = 0.25
    fit_fraction: float = 0.5
    seed: int = 0
    fit: FitConfig = field(default_factory=FitConfig)


@dataclass(frozen=True)
class AttributionReport:
    players: tuple[ModelId, ...]
    shapley: np.ndarray
    pier: np.ndarray
    flags: tuple[str, ...]
    grand_value: float

    def to_dict(self) -> dict:
        return {
            "players": [p.id for p in self.players],
            "shapley": [float(x) for x in self.shapley],
            "pier": [None if math.isnan(x) else float(x) for x in self.pier],
            "flags": list(self.flags),
            "grand_value": float(self.grand_value),
        }


def divergence_report(responses: ResponseMatrix, game: CoalitionGame, config: Optional[AttributionConfig] = None):
    """Compare Shapley credit with each model's uniqueness against all others.

    A model is ``redundant-but-credited`` when its uniqueness is at most
    ``tol`` but its Shapley value exceeds ``credit_fraction`` of the largest.
    It is ``unique-but-uncredited`` when its uniqueness is positive and in the
    top quartile while its Shapley value is in the bottom quartile.
    """
    config = config or AttributionConfig()
    if [p.id for p in game.players] != responses.labels:
        raise ValidationError("game players must match response columns in order")
    phi = shapley_exact(game)
    n = len(phi)
    if n == 1:
        return AttributionReport(game.players, phi, np.array([math.nan]), (NO_PEERS,), game.grand_value)

    fit_s, eval_s = split_honest(responses.sample, config.fit_fraction, config.seed)
    u, _ = per_model_uniqueness(responses.rows(fit_s).values, responses.rows(eval_s).values, config.fit)
    pier = np.array([u[j] for j in range(n)])
    u_hi = float(np.quantile(pier, config.upper_quantile))
    phi_lo = float(np.quantile(phi, config.lower_quantile))
    phi_max = float(np.max(phi))
    flags = []
    for j in range(n):
        if pier[j] <= config.tol and phi[j] > config.credit_fraction * phi_max:
            flags.append(REDUNDANT)
        elif pier[j] > config.tol and pier[j] >= u_hi and phi[j] <= phi_lo:
            flags.append(UNCREDITED)
        else:
            flags.append(CONSISTENT)
    return AttributionReport(game.players, phi, pier, tuple(flags), game.grand_value)
