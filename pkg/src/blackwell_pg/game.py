"""Zero-sum multi-objective Markov games.

Two environments are provided:

* :class:`TabularGame` -- finite states and actions with an explicit
  transition tensor ``P[x, u1, u2, x']`` and vector rewards ``R[x, u1, u2]``.
* :class:`ClimateEnv` -- the temperature/humidity toy.  The state is a point
  in R^2, the reward is the next state, player 1 picks one of three line
  segments and the adversary picks a point on it.  The state follows a noisy
  moving average toward the adversary's point.

Both expose ``reset(seed)`` and ``step(x, u1, u2, rng)``; the driver uses the
compiled kernels in :mod:`blackwell_pg.kernels` instead, which share the
sampling helpers defined here.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._jit import kernel


class ErgodicityError(ValueError):
    """A chain that should be irreducible and aperiodic is not."""


# ----------------------------------------------------------------------------
# shared sampling helpers (also called from compiled kernels)


@kernel
def inverse_cdf(probs, u):
    """Index ``i`` with ``cdf[i-1] <= u < cdf[i]``; ``u`` is uniform on [0, 1)."""
    acc = 0.0
    last = -1
    for i in range(probs.shape[0]):
        if probs[i] > 0.0:
            last = i
        acc += probs[i]
        if u < acc:
            return i
    # u landed in the rounding gap above the last partial sum
    return last


@kernel
def worst_candidate(cands, proj, lam):
    """Row of ``cands`` minimizing ``<c - proj, lam>``; lowest index on ties."""
    best = 0
    best_val = np.inf
    for i in range(cands.shape[0]):
        v = 0.0
        for j in range(cands.shape[1]):
            v += (cands[i, j] - proj[j]) * lam[j]
        if v < best_val:
            best_val = v
            best = i
    return best


# ----------------------------------------------------------------------------
# recurrence


@dataclass(frozen=True)
class RecurrenceSpec:
    """Anchor state for finite games, or a closed ball for continuous ones."""

    anchor_state: int | None = None
    center: tuple[float, ...] | None = None
    radius: float = 0.5

    def __post_init__(self):
        if (self.anchor_state is None) == (self.center is None):
            raise ValueError("give exactly one of anchor_state or center")
        if self.anchor_state is not None and self.anchor_state < 0:
            raise ValueError("anchor_state must be a valid state index")
        if self.center is not None and not self.radius > 0:
            raise ValueError("recurrence radius must be positive")

    @property
    def is_finite(self) -> bool:
        return self.anchor_state is not None


def is_recurrent(x, rec: RecurrenceSpec) -> bool:
    if rec.is_finite:
        return int(x) == rec.anchor_state
    x = np.asarray(x, dtype=np.float64)
    return bool(np.linalg.norm(x - np.asarray(rec.center)) <= rec.radius)


# ----------------------------------------------------------------------------
# tabular game


def _reachability(adj: np.ndarray) -> np.ndarray:
    n = adj.shape[0]
    reach = adj | np.eye(n, dtype=bool)
    for _ in range(max(1, int(np.ceil(np.log2(n))) + 1)):
        reach = reach | ((reach.astype(np.int64) @ reach.astype(np.int64)) > 0)
    return reach


def check_ergodic(P: np.ndarray) -> None:
    """Raise :class:`ErgodicityError` unless ``P`` is irreducible and aperiodic."""
    adj = P > 0
    n = adj.shape[0]
    if not _reachability(adj).all():
        raise ErgodicityError("chain is reducible: some state cannot reach another")
    # irreducible + primitive <=> aperiodic; Wielandt bound on the exponent
    power = adj.copy()
    a = adj.astype(np.int64)
    for _ in range((n - 1) ** 2):
        power = (power.astype(np.int64) @ a) > 0
    if not power.all():
        raise ErgodicityError("chain is periodic")


@dataclass(eq=False)
class TabularGame:
    """Finite zero-sum Markov game with vector rewards.

    ``P`` has shape ``(X, U1, U2, X)`` and ``R`` shape ``(X, U1, U2, k)``.
    Construction checks row-stochasticity and irreducibility under the
    uniform joint policy.  That check is only a proxy for ergodicity under
    every stationary policy; fixtures with strictly positive transition rows
    satisfy the stronger property trivially.
    """

    P: np.ndarray
    R: np.ndarray
    initial: np.ndarray
    recurrence: RecurrenceSpec = field(default_factory=lambda: RecurrenceSpec(anchor_state=0))
    check: bool = True

    def __post_init__(self):
        self.P = np.asarray(self.P, dtype=np.float64)
        self.R = np.asarray(self.R, dtype=np.float64)
        self.initial = np.asarray(self.initial, dtype=np.float64)
        if self.P.ndim != 4 or self.P.shape[0] != self.P.shape[3]:
            raise ValueError(f"P must have shape (X, U1, U2, X), got {self.P.shape}")
        nx, n1, n2, _ = self.P.shape
        if self.R.shape[:3] != (nx, n1, n2) or self.R.ndim != 4:
            raise ValueError(f"R must have shape ({nx}, {n1}, {n2}, k), got {self.R.shape}")
        if self.R.shape[3] < 2:
            raise ValueError("reward dimension k must be at least 2")
        if np.any(self.P < 0) or np.any(np.abs(self.P.sum(axis=3) - 1.0) > 1e-12):
            raise ValueError("every transition row P[x, u1, u2, :] must be a distribution")
        if not np.all(np.isfinite(self.R)):
            raise ValueError("rewards must be finite")
        if self.initial.shape != (nx,) or np.any(self.initial < 0) or abs(self.initial.sum() - 1) > 1e-12:
            raise ValueError("initial distribution must be a distribution over states")
        if not self.recurrence.is_finite or self.recurrence.anchor_state >= nx:
            raise ValueError("tabular games need a finite anchor state index")
        if self.check:
            check_ergodic(self.P.mean(axis=(1, 2)))

    @property
    def n_states(self) -> int:
        return self.P.shape[0]

    @property
    def n_actions1(self) -> int:
        return self.P.shape[1]

    @property
    def n_actions2(self) -> int:
        return self.P.shape[2]

    @property
    def reward_dim(self) -> int:
        return self.R.shape[3]

    @property
    def anchor(self) -> int:
        return self.recurrence.anchor_state

    def reset(self, seed: int) -> int:
        rng = np.random.default_rng(seed)
        return int(inverse_cdf(self.initial, rng.random()))

    def step(self, x: int, u1: int, u2: int, rng: np.random.Generator):
        if not (0 <= u1 < self.n_actions1 and 0 <= u2 < self.n_actions2):
            raise ValueError(
                f"invalid action pair ({u1}, {u2}) for action sets of size "
                f"{self.n_actions1} and {self.n_actions2}"
            )
        x_next = int(inverse_cdf(self.P[x, u1, u2], rng.random()))
        return x_next, self.R[x, u1, u2].copy()


def load_tabular(path, anchor: int = 0, initial=None, check: bool = True) -> TabularGame:
    """Read the whitespace tensor format.

    First line ``states u1 u2 k``; then one line per ``(x, u1, u2)`` in
    row-major order with ``k`` rewards followed by ``states`` probabilities.
    Lines starting with ``#`` are ignored.
    """
    lines = [
        (i + 1, ln.split())
        for i, ln in enumerate(Path(path).read_text().splitlines())
        if ln.strip() and not ln.lstrip().startswith("#")
    ]
    if not lines:
        raise ValueError(f"{path}: empty game file")
    lineno, head = lines[0]
    try:
        nx, n1, n2, k = (int(v) for v in head)
    except ValueError:
        raise ValueError(f"{path}:{lineno}: header must be 'states u1 u2 k'") from None
    rows = lines[1:]
    if len(rows) != nx * n1 * n2:
        raise ValueError(f"{path}: expected {nx * n1 * n2} data rows, found {len(rows)}")
    data = np.empty((len(rows), k + nx))
    for r, (lineno, toks) in enumerate(rows):
        if len(toks) != k + nx:
            raise ValueError(f"{path}:{lineno}: expected {k + nx} numbers, found {len(toks)}")
        try:
            data[r] = [float(t) for t in toks]
        except ValueError:
            raise ValueError(f"{path}:{lineno}: non-numeric entry") from None
        probs = data[r, k:]
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-12:
            raise ValueError(f"{path}:{lineno}: transition probabilities must be >= 0 and sum to 1")
    R = data[:, :k].reshape(nx, n1, n2, k)
    P = data[:, k:].reshape(nx, n1, n2, nx)
    if initial is None:
        initial = np.full(nx, 1.0 / nx)
    try:
        return TabularGame(P, R, initial, RecurrenceSpec(anchor_state=anchor), check=check)
    except ValueError as exc:
        raise type(exc)(f"{path}: {exc}") from None


def save_tabular(game: TabularGame, path) -> None:
    nx, n1, n2, k = game.n_states, game.n_actions1, game.n_actions2, game.reward_dim
    out = [f"{nx} {n1} {n2} {k}"]
    for x in range(nx):
        for a in range(n1):
            for b in range(n2):
                vals = list(game.R[x, a, b]) + list(game.P[x, a, b])
                out.append(" ".join(repr(float(v)) for v in vals))
    Path(path).write_text("\n".join(out) + "\n")


# ----------------------------------------------------------------------------
# climate toy

COMFORT_LOWER = (20.0, 40.0)
COMFORT_UPPER = (24.0, 60.0)
DEFAULT_SEGMENTS = (
    ((22.0, 34.0), (22.0, 58.0)),
    ((21.0, 57.0), (30.0, 50.0)),
    ((15.0, 58.0), (23.0, 46.0)),
)


@dataclass(eq=False)
class ClimateEnv:
    """Temperature (deg C) and relative humidity (%) under a moving average.

    ``x' = (1 - mixing_rate) * x + mixing_rate * p + w`` where ``p`` is the
    adversary's point on the segment chosen by player 1 and ``w`` is uniform
    noise of half-width ``noise_scale`` per coordinate.  The next state is
    clipped to ``[lower, upper]`` and doubles as the reward vector.

    Player 2's action is the segment parameter in [0, 1] (0 is the first
    endpoint).
    """

    segments: np.ndarray = field(default_factory=lambda: np.array(DEFAULT_SEGMENTS))
    mixing_rate: float = 0.3
    noise_scale: float = 0.5
    lower: np.ndarray = field(default_factory=lambda: np.array([10.0, 20.0]))
    upper: np.ndarray = field(default_factory=lambda: np.array([35.0, 90.0]))
    start: np.ndarray = field(default_factory=lambda: np.array([30.0, 70.0]))
    recurrence: RecurrenceSpec = field(
        default_factory=lambda: RecurrenceSpec(center=(22.0, 50.0), radius=0.5)
    )

    def __post_init__(self):
        self.segments = np.asarray(self.segments, dtype=np.float64)
        self.lower = np.asarray(self.lower, dtype=np.float64)
        self.upper = np.asarray(self.upper, dtype=np.float64)
        self.start = np.asarray(self.start, dtype=np.float64)
        if self.segments.ndim != 3 or self.segments.shape[1:] != (2, 2):
            raise ValueError("segments must have shape (n, 2, 2)")
        if not 0 < self.mixing_rate <= 1:
            raise ValueError("mixing_rate must lie in (0, 1]")
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be non-negative")
        if np.any(self.lower >= self.upper):
            raise ValueError("bounding rectangle is empty")
        if np.any(self.start < self.lower) or np.any(self.start > self.upper):
            raise ValueError("start state lies outside the bounding rectangle")
        if self.recurrence.is_finite or len(self.recurrence.center) != 2:
            raise ValueError("climate recurrence needs a 2-D center and radius")

    n_states = None
    reward_dim = 2

    @property
    def n_actions1(self) -> int:
        return self.segments.shape[0]

    def reset(self, seed: int) -> np.ndarray:
        return self.start.copy()

    def point(self, u1: int, u2: float) -> np.ndarray:
        a, b = self.segments[u1]
        return a + u2 * (b - a)

    def step(self, x, u1: int, u2: float, rng: np.random.Generator):
        if not 0 <= u1 < self.n_actions1:
            raise ValueError(f"invalid segment index {u1}")
        if not 0.0 <= u2 <= 1.0:
            raise ValueError(f"segment parameter {u2} outside [0, 1]")
        noise = self.noise_scale * (2.0 * rng.random(2) - 1.0)
        x_next = (1.0 - self.mixing_rate) * np.asarray(x) + self.mixing_rate * self.point(u1, u2) + noise
        x_next = np.clip(x_next, self.lower, self.upper)
        return x_next, x_next.copy()


def reset(game, seed: int):
    return game.reset(seed)


def step(game, x, u1, u2, rng):
    return game.step(x, u1, u2, rng)


# ----------------------------------------------------------------------------
# adversary


class SegmentAdversary:
    """Candidate points for the climate game: the two segment endpoints.

    The adversary objective is linear along a segment, so its minimum is
    attained at an endpoint.
    """

    def __init__(self, env: ClimateEnv):
        self.env = env

    def candidates(self, u1: int) -> np.ndarray:
        return self.env.segments[u1]

    def action(self, index: int) -> float:
        return float(index)


class TabularAdversary:
    """Candidate points ``eta(u1, u2)`` for a tabular game.

    ``eta(u1, u2)`` is the exact long-run average reward when both players
    repeat the pure actions ``u1`` and ``u2`` in every state.
    """

    def __init__(self, game: TabularGame):
        from .oracle import pure_action_averages

        self.table = pure_action_averages(game)

    def candidates(self, u1: int) -> np.ndarray:
        return self.table[u1]

    def action(self, index: int) -> int:
        return int(index)


def adversary_best_response(u1, proj, lam, model):
    """Player 2's reply minimizing ``<eta(u1, u2) - proj, lam>``.

    Ties (including ``lam == 0``) go to the lowest action index, or the first
    segment endpoint.
    """
    cands = np.asarray(model.candidates(u1), dtype=np.float64)
    if cands.shape[0] == 0:
        raise ValueError("adversary has no candidate actions")
    idx = worst_candidate(cands, np.asarray(proj, dtype=np.float64), np.asarray(lam, dtype=np.float64))
    return model.action(idx)


# ----------------------------------------------------------------------------
# built-in tabular fixtures


def verification_game() -> TabularGame:
    """The 3-state, 2x2-action, k=2 fixture used for end-to-end checks."""
    return load_tabular(_data_path("verification.game"), anchor=0, initial=[1.0, 0.0, 0.0])


def reducible_game() -> TabularGame:
    """Negative control: state 2 is absorbing, so the chain is reducible."""
    return load_tabular(_data_path("reducible.game"), anchor=0, initial=[1.0, 0.0, 0.0], check=False)


def _data_path(name: str) -> Path:
    return Path(__file__).parent / "data" / name
