"""Exact quantities for tabular games.

Everything here is computed by direct linear algebra or enumeration, so it
can serve as ground truth for the sampled learner: stationary
distributions, long-run average rewards, Poisson solutions, Q-values,
finite-difference policy gradients and Blackwell certificates.
"""
from __future__ import annotations

import itertools
from functools import lru_cache

import numpy as np

from . import learner
from ._jit import kernel
from .game import ErgodicityError, TabularGame, check_ergodic, inverse_cdf
from .geometry import TargetSet, project, steering_direction

ENUMERATION_CAP = 200_000


def _check_policy(pi: np.ndarray, n_states: int, n_actions: int, who: str) -> np.ndarray:
    pi = np.asarray(pi, dtype=np.float64)
    if pi.shape != (n_states, n_actions):
        raise ValueError(f"{who} policy must have shape ({n_states}, {n_actions}), got {pi.shape}")
    if np.any(pi < 0) or np.any(np.abs(pi.sum(axis=1) - 1.0) > 1e-12):
        raise ValueError(f"{who} policy rows must be probability distributions")
    return pi


def induced_chain(game: TabularGame, pi1, pi2):
    """Transition matrix and expected reward per state under ``(pi1, pi2)``."""
    pi1 = _check_policy(pi1, game.n_states, game.n_actions1, "player 1")
    pi2 = _check_policy(pi2, game.n_states, game.n_actions2, "player 2")
    joint = pi1[:, :, None] * pi2[:, None, :]
    P_pi = np.einsum("xab,xaby->xy", joint, game.P)
    R_pi = np.einsum("xab,xabk->xk", joint, game.R)
    return P_pi, R_pi


def stationary_distribution(P_pi) -> np.ndarray:
    """Unique ``d`` with ``d P = d`` and ``sum(d) = 1``."""
    P_pi = np.asarray(P_pi, dtype=np.float64)
    check_ergodic(P_pi)
    n = P_pi.shape[0]
    A = P_pi.T - np.eye(n)
    A[-1, :] = 1.0
    b = np.zeros(n)
    b[-1] = 1.0
    d = np.linalg.solve(A, b)
    d = np.clip(d, 0.0, None)
    return d / d.sum()


def exact_average_reward(d, R_pi) -> np.ndarray:
    return np.asarray(d) @ np.asarray(R_pi)


def expected_recurrence_time(d, anchor: int) -> float:
    if not d[anchor] > 0:
        raise ErgodicityError(f"state {anchor} has zero stationary mass and is not recurrent")
    return 1.0 / d[anchor]


def solve_poisson(P_pi, r_pi, anchor: int):
    """Solve ``V + g = r + P V`` with ``V[anchor] = 0``.

    Returns ``(V, g)``.
    """
    P_pi = np.asarray(P_pi, dtype=np.float64)
    r_pi = np.asarray(r_pi, dtype=np.float64)
    n = P_pi.shape[0]
    A = np.zeros((n + 1, n + 1))
    A[:n, :n] = np.eye(n) - P_pi
    A[:n, n] = 1.0
    A[n, anchor] = 1.0
    b = np.concatenate([r_pi, [0.0]])
    try:
        sol = np.linalg.solve(A, b)
    except np.linalg.LinAlgError:
        raise ErgodicityError("Poisson system is singular; chain has several recurrent classes") from None
    V, g = sol[:n], float(sol[n])
    resid = np.max(np.abs(V + g - r_pi - P_pi @ V))
    if not resid < 1e-8:
        raise ErgodicityError(f"Poisson system is ill-conditioned (residual {resid:.2e})")
    return V, g


def poisson_residual(P_pi, r_pi, V, g) -> float:
    return float(np.max(np.abs(V + g - r_pi - P_pi @ V)))


def exact_q_values(game: TabularGame, V, g: float, lam) -> np.ndarray:
    """``Q[x, u1, u2] = <R(x,u), lam> - g + sum_x' P(x'|x,u) V(x')``."""
    lam = np.asarray(lam, dtype=np.float64)
    return game.R @ lam - g + game.P @ V


def scalarized_average(game: TabularGame, pi1, pi2, lam) -> float:
    P_pi, R_pi = induced_chain(game, pi1, pi2)
    return float(exact_average_reward(stationary_distribution(P_pi), R_pi) @ lam)


def finite_difference_gradient(game: TabularGame, theta, lam, features, pi2, h: float = 1e-5) -> np.ndarray:
    """Central differences of the exact scalarized average reward in ``theta``."""
    if not h > 0:
        raise ValueError("step h must be positive")
    theta = np.asarray(theta, dtype=np.float64)
    grad = np.empty_like(theta)
    for i in range(theta.shape[0]):
        e = np.zeros_like(theta)
        e[i] = h
        up = scalarized_average(game, features.policy_table(theta + e), pi2, lam)
        down = scalarized_average(game, features.policy_table(theta - e), pi2, lam)
        grad[i] = (up - down) / (2 * h)
    return grad


def score_function_gradient(game: TabularGame, theta, lam, features, pi2) -> np.ndarray:
    """Average of the actor update direction under exact ``d`` and exact TD error.

    The expected TD error for ``(x, u1)`` uses the exact gain and differential
    values of the current joint policy, and the direction for each pair is
    taken from :func:`learner.actor_update` with unit step size.
    """
    lam = np.asarray(lam, dtype=np.float64)
    pi1 = features.policy_table(theta)
    pi2 = _check_policy(pi2, game.n_states, game.n_actions2, "player 2")
    P_pi, R_pi = induced_chain(game, pi1, pi2)
    d = stationary_distribution(P_pi)
    V, g = solve_poisson(P_pi, R_pi @ lam, game.anchor)
    # expected delta given (x, u1), averaged over player 2
    q = exact_q_values(game, V, g, lam) - V[:, None, None]
    delta = np.einsum("xab,xb->xa", q, pi2)
    actor = learner.ActorState(np.asarray(theta, dtype=np.float64))
    grad = np.zeros_like(actor.theta)
    for x in range(game.n_states):
        probs = pi1[x]
        for a in range(game.n_actions1):
            moved = learner.actor_update(actor, x, a, probs, delta[x, a], 1.0, features)
            grad += d[x] * probs[a] * (moved.theta - actor.theta)
    return grad


# ----------------------------------------------------------------------------
# pure-policy enumeration and the Blackwell certificate


def pure_action_averages(game: TabularGame) -> np.ndarray:
    """``eta[u1, u2]``: exact average reward when both players repeat one action."""
    table = np.empty((game.n_actions1, game.n_actions2, game.reward_dim))
    eye1, eye2 = np.eye(game.n_actions1), np.eye(game.n_actions2)
    for a in range(game.n_actions1):
        for b in range(game.n_actions2):
            pi1 = np.tile(eye1[a], (game.n_states, 1))
            pi2 = np.tile(eye2[b], (game.n_states, 1))
            P_pi, R_pi = induced_chain(game, pi1, pi2)
            table[a, b] = exact_average_reward(stationary_distribution(P_pi), R_pi)
    return table


def deterministic_policies(n_states: int, n_actions: int):
    """All deterministic stationary policies as ``(n, n_states)`` action indices."""
    return np.array(list(itertools.product(range(n_actions), repeat=n_states)), dtype=np.int64)


def pure_policy_averages(game: TabularGame) -> np.ndarray:
    """Exact average reward for every pair of deterministic stationary policies.

    Shape ``(n_policies_1, n_policies_2, k)``.
    """
    return _pure_policy_averages(_GameKey(game))


class _GameKey:
    # identity-hashed wrapper so results can be cached per game object
    def __init__(self, game):
        self.game = game

    def __hash__(self):
        return id(self.game)

    def __eq__(self, other):
        return self.game is other.game


@lru_cache(maxsize=16)
def _pure_policy_averages(key: _GameKey) -> np.ndarray:
    game = key.game
    n1 = game.n_actions1 ** game.n_states
    n2 = game.n_actions2 ** game.n_states
    if n1 * n2 > ENUMERATION_CAP:
        raise ValueError(
            f"certificate needs {n1 * n2} policy pairs (cap {ENUMERATION_CAP}); use a smaller game"
        )
    pols1 = deterministic_policies(game.n_states, game.n_actions1)
    pols2 = deterministic_policies(game.n_states, game.n_actions2)
    eye1, eye2 = np.eye(game.n_actions1), np.eye(game.n_actions2)
    out = np.empty((n1, n2, game.reward_dim))
    for i, p1 in enumerate(pols1):
        for j, p2 in enumerate(pols2):
            P_pi, R_pi = induced_chain(game, eye1[p1], eye2[p2])
            out[i, j] = exact_average_reward(stationary_distribution(P_pi), R_pi)
    return out


def blackwell_certificate(game: TabularGame, T: TargetSet, s, eps_proj: float = 1e-12):
    """Max-min of ``<rbar(pi1, pi2) - proj_T(s), lambda_s>`` over pure stationary policies.

    Returns ``(value, policy)`` where ``policy`` holds player 1's action per
    state.  A value >= 0 certifies the Blackwell condition at ``s``.  Points
    inside ``T`` are certified trivially with value 0.
    """
    s = np.asarray(s, dtype=np.float64)
    pols1 = deterministic_policies(game.n_states, game.n_actions1)
    lam = steering_direction(s, T, eps_proj)
    if not np.any(lam):
        return 0.0, pols1[0]
    proj = project(s, T)
    vals = (pure_policy_averages(game) - proj) @ lam
    worst = vals.min(axis=1)
    best = int(np.argmax(worst))
    return float(worst[best]), pols1[best]


# ----------------------------------------------------------------------------
# Monte Carlo cross-checks


@kernel
def _recurrence_times(P, anchor, n_cycles, uniforms):
    times = np.empty(n_cycles, dtype=np.int64)
    x = anchor
    pos = 0
    for c in range(n_cycles):
        steps = 0
        while True:
            u = uniforms[pos]
            pos += 1
            if pos == uniforms.shape[0]:
                return times[:c], pos
            x = inverse_cdf(P[x], u)
            steps += 1
            if x == anchor:
                break
        times[c] = steps
    return times, pos


def simulate_recurrence_times(P_pi, anchor: int, n_cycles: int, seed: int) -> np.ndarray:
    """Return times to ``anchor`` for ``n_cycles`` consecutive excursions."""
    P_pi = np.ascontiguousarray(P_pi, dtype=np.float64)
    rng = np.random.default_rng(seed)
    d = stationary_distribution(P_pi)
    budget = int(20 * n_cycles / d[anchor]) + 1000
    times, _ = _recurrence_times(P_pi, anchor, n_cycles, rng.random(budget))
    if times.shape[0] < n_cycles:
        raise RuntimeError("uniform budget exhausted before completing all cycles")
    return times


def cesaro_average(mu, P_pi, R_pi, t: int) -> np.ndarray:
    """``(1/t) sum_{n<t} mu P^n R`` computed by forward iteration."""
    dist = np.asarray(mu, dtype=np.float64).copy()
    acc = np.zeros(np.asarray(R_pi).shape[1])
    for _ in range(t):
        acc += dist @ R_pi
        dist = dist @ P_pi
    return acc / t


def empirical_transitions(game: TabularGame, pi1, pi2, x: int, n: int, seed: int) -> np.ndarray:
    """Next-state frequencies from ``x`` over ``n`` sampled joint moves."""
    rng = np.random.default_rng(seed)
    pi1 = _check_policy(pi1, game.n_states, game.n_actions1, "player 1")
    pi2 = _check_policy(pi2, game.n_states, game.n_actions2, "player 2")
    a = rng.choice(game.n_actions1, size=n, p=pi1[x])
    b = rng.choice(game.n_actions2, size=n, p=pi2[x])
    cdf = np.cumsum(game.P[x], axis=-1)[a, b]
    u = rng.random(n)[:, None]
    nxt = np.minimum((u >= cdf).sum(axis=1), game.n_states - 1)
    return np.bincount(nxt, minlength=game.n_states) / n
