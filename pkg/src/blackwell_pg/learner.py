"""Average-reward actor-critic on a scalarized reward.

The actor is a softmax policy over linear scores ``<theta, phi(x, u)>``; the
critic keeps linear differential values ``<rho, psi(x)>`` and a gain
estimate ``g_hat``.  Updates are functional: each returns a new state.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._jit import kernel
from .game import inverse_cdf


@kernel
def softmax(scores):
    m = scores.max()
    e = np.exp(scores - m)
    return e / e.sum()


# ----------------------------------------------------------------------------
# features


class TabularFeatures:
    """Feature tables ``phi[x, u] in R^l`` and ``psi[x] in R^m``.

    Value features depend on the state only: the TD error needs
    ``V(x')`` before the next action is drawn.
    """

    def __init__(self, phi, psi):
        self.phi_table = np.ascontiguousarray(phi, dtype=np.float64)
        self.psi_table = np.ascontiguousarray(psi, dtype=np.float64)
        if self.phi_table.ndim != 3 or self.psi_table.ndim != 2:
            raise ValueError("phi must be (X, U, l) and psi (X, m)")
        if self.phi_table.shape[0] != self.psi_table.shape[0]:
            raise ValueError("phi and psi disagree on the number of states")
        if not (np.all(np.isfinite(self.phi_table)) and np.all(np.isfinite(self.psi_table))):
            raise ValueError("features must be finite")

    @classmethod
    def one_hot(cls, n_states: int, n_actions: int) -> "TabularFeatures":
        phi = np.eye(n_states * n_actions).reshape(n_states, n_actions, -1)
        return cls(phi, np.eye(n_states))

    @property
    def n_policy(self) -> int:
        return self.phi_table.shape[2]

    @property
    def n_value(self) -> int:
        return self.psi_table.shape[1]

    def phi(self, x, u) -> np.ndarray:
        return self.phi_table[x, u]

    def policy_matrix(self, x) -> np.ndarray:
        return self.phi_table[x]

    def psi(self, x) -> np.ndarray:
        return self.psi_table[x]

    def policy_table(self, theta) -> np.ndarray:
        scores = self.phi_table @ np.asarray(theta, dtype=np.float64)
        scores -= scores.max(axis=1, keepdims=True)
        e = np.exp(scores)
        return e / e.sum(axis=1, keepdims=True)


class ClimateFeatures:
    """Features for a 2-D continuous state scaled to [-1, 1] by its bounds.

    ``phi(x, u) = e_u (x) (1, z1, z2)`` and ``psi(x) = (z1, z2)``.
    """

    def __init__(self, lower, upper, n_actions: int):
        self.lower = np.asarray(lower, dtype=np.float64)
        self.upper = np.asarray(upper, dtype=np.float64)
        self.n_actions = n_actions

    @property
    def n_policy(self) -> int:
        return 3 * self.n_actions

    @property
    def n_value(self) -> int:
        return 2

    def scaled(self, x) -> np.ndarray:
        mid = 0.5 * (self.lower + self.upper)
        half = 0.5 * (self.upper - self.lower)
        return (np.asarray(x, dtype=np.float64) - mid) / half

    def phi(self, x, u) -> np.ndarray:
        return self.policy_matrix(x)[u]

    def policy_matrix(self, x) -> np.ndarray:
        base = np.concatenate([[1.0], self.scaled(x)])
        return np.kron(np.eye(self.n_actions), base)

    def psi(self, x) -> np.ndarray:
        return self.scaled(x)


# ----------------------------------------------------------------------------
# parameters and schedules


@dataclass(frozen=True)
class ActorState:
    theta: np.ndarray


@dataclass(frozen=True)
class CriticState:
    rho: np.ndarray
    g_hat: float = 0.0


@dataclass(frozen=True)
class StepSchedule:
    """Polynomially decaying steps ``c / (1 + t/t0) ** p``.

    Exponents in (0.5, 1] make each sequence non-summable and square
    summable.  ``beta_g`` is a fixed fraction of ``beta``.
    """

    alpha0: float = 0.05
    beta0: float = 0.1
    gain_ratio: float = 0.1
    t0: float = 1000.0
    alpha_power: float = 0.8
    beta_power: float = 0.6

    def __post_init__(self):
        for name in ("alpha0", "beta0", "gain_ratio", "t0"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("alpha_power", "beta_power"):
            p = getattr(self, name)
            if not 0.5 < p <= 1.0:
                raise ValueError(f"{name}={p} violates the Robbins-Monro conditions (need 0.5 < p <= 1)")

    def alpha(self, t) -> float:
        return self.alpha0 / (1.0 + t / self.t0) ** self.alpha_power

    def beta(self, t) -> float:
        return self.beta0 / (1.0 + t / self.t0) ** self.beta_power

    def beta_g(self, t) -> float:
        return self.gain_ratio * self.beta(t)

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.alpha0, self.beta0, self.gain_ratio, self.t0, self.alpha_power, self.beta_power]
        )


# ----------------------------------------------------------------------------
# operations


def policy_probs(actor: ActorState, x, features) -> np.ndarray:
    return softmax(features.policy_matrix(x) @ actor.theta)


def sample_action(probs, u: float) -> int:
    """Inverse-CDF draw; ``u`` is the next uniform from the seed stream."""
    return int(inverse_cdf(np.asarray(probs, dtype=np.float64), u))


def td_error(r: float, critic: CriticState, psi_x, psi_x_next) -> float:
    return float(r - critic.g_hat + critic.rho @ psi_x_next - critic.rho @ psi_x)


def critic_update(critic: CriticState, delta: float, psi_x, beta: float, beta_g: float) -> CriticState:
    return CriticState(critic.rho + beta * delta * np.asarray(psi_x), critic.g_hat + beta_g * delta)


def score(x, u1: int, probs, features) -> np.ndarray:
    """Gradient of ``log pi(u1 | x)`` for the softmax policy."""
    m = features.policy_matrix(x)
    return m[u1] - probs @ m


def actor_update(actor: ActorState, x, u1: int, probs, delta: float, alpha: float, features) -> ActorState:
    return ActorState(actor.theta + alpha * delta * score(x, u1, probs, features))
