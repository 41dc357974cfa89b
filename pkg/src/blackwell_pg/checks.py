"""Oracle cross-checks run by ``blackwell-pg verify``.

Each check returns a :class:`Check` with the measured error and the
tolerance it was held to.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import oracle
from .game import ErgodicityError, TabularGame, check_ergodic
from .geometry import TargetSet, distance
from .learner import TabularFeatures

STATIONARY_TOL = 1e-10
KAC_TOL = 0.02
POISSON_TOL = 1e-10
Q_TOL = 1e-10
CESARO_TOL = 1e-3
GRADIENT_TOL = 1e-4


@dataclass
class Check:
    name: str
    passed: bool
    measured: float
    tolerance: float
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        text = f"{status} {self.name:<14} measured {self.measured:.3e}  tolerance {self.tolerance:.1e}"
        return text + (f"  ({self.detail})" if self.detail else "")


def random_policy(rng: np.random.Generator, n_states: int, n_actions: int) -> np.ndarray:
    return rng.dirichlet(np.ones(n_actions), size=n_states)


def random_direction(rng: np.random.Generator, k: int) -> np.ndarray:
    v = rng.normal(size=k)
    return v / np.linalg.norm(v)


def check_ergodicity(game: TabularGame) -> Check:
    """Irreducible and aperiodic under the uniform and every pure joint policy."""
    chains = [game.P.mean(axis=(1, 2))]
    n_pairs = game.n_actions1 ** game.n_states * game.n_actions2 ** game.n_states
    if n_pairs <= oracle.ENUMERATION_CAP:
        eye1, eye2 = np.eye(game.n_actions1), np.eye(game.n_actions2)
        for p1 in oracle.deterministic_policies(game.n_states, game.n_actions1):
            for p2 in oracle.deterministic_policies(game.n_states, game.n_actions2):
                chains.append(oracle.induced_chain(game, eye1[p1], eye2[p2])[0])
    bad, first = 0, ""
    for P in chains:
        try:
            check_ergodic(P)
        except ErgodicityError as exc:
            bad += 1
            first = first or str(exc)
    detail = f"{bad} of {len(chains)} chains violate ergodicity: {first}" if bad else f"{len(chains)} chains"
    return Check("ergodicity", bad == 0, float(bad), 0.0, detail)


def check_stationarity(game, pi1, pi2) -> Check:
    P, _ = oracle.induced_chain(game, pi1, pi2)
    d = oracle.stationary_distribution(P)
    err = float(np.max(np.abs(d @ P - d)))
    return Check("stationarity", err < STATIONARY_TOL, err, STATIONARY_TOL)


def check_kac(game, pi1, pi2, cycles: int, seed: int) -> Check:
    P, _ = oracle.induced_chain(game, pi1, pi2)
    d = oracle.stationary_distribution(P)
    expected = oracle.expected_recurrence_time(d, game.anchor)
    times = oracle.simulate_recurrence_times(P, game.anchor, cycles, seed)
    err = abs(times.mean() - expected) / expected
    return Check("kac", err < KAC_TOL, err, KAC_TOL, f"mean {times.mean():.4f} vs 1/d {expected:.4f}")


def check_poisson(game, rng: np.random.Generator, n_chains: int) -> Check:
    worst, worst_gain = 0.0, 0.0
    for _ in range(n_chains):
        pi1 = random_policy(rng, game.n_states, game.n_actions1)
        pi2 = random_policy(rng, game.n_states, game.n_actions2)
        lam = random_direction(rng, game.reward_dim)
        P, R = oracle.induced_chain(game, pi1, pi2)
        V, g = oracle.solve_poisson(P, R @ lam, game.anchor)
        worst = max(worst, oracle.poisson_residual(P, R @ lam, V, g))
        gain = oracle.exact_average_reward(oracle.stationary_distribution(P), R) @ lam
        worst_gain = max(worst_gain, abs(g - gain))
    err = max(worst, worst_gain)
    return Check(
        "poisson", err < POISSON_TOL, err, POISSON_TOL,
        f"residual {worst:.1e}, gain gap {worst_gain:.1e} over {n_chains} chains",
    )


def check_q_consistency(game, pi1, pi2, lam) -> Check:
    P, R = oracle.induced_chain(game, pi1, pi2)
    V, g = oracle.solve_poisson(P, R @ lam, game.anchor)
    Q = oracle.exact_q_values(game, V, g, lam)
    err = float(np.max(np.abs(np.einsum("xa,xb,xab->x", pi1, pi2, Q) - V)))
    return Check("q_values", err < Q_TOL, err, Q_TOL)


def check_cesaro(game, pi1, pi2, steps: int) -> Check:
    P, R = oracle.induced_chain(game, pi1, pi2)
    exact = oracle.exact_average_reward(oracle.stationary_distribution(P), R)
    err = float(np.max(np.abs(oracle.cesaro_average(game.initial, P, R, steps) - exact)))
    return Check("cesaro", err < CESARO_TOL, err, CESARO_TOL, f"t = {steps}")


def check_gradient(game, rng: np.random.Generator, n_points: int) -> Check:
    feats = TabularFeatures.one_hot(game.n_states, game.n_actions1)
    worst = 0.0
    for _ in range(n_points):
        theta = rng.normal(size=feats.n_policy)
        lam = random_direction(rng, game.reward_dim)
        pi2 = random_policy(rng, game.n_states, game.n_actions2)
        fd = oracle.finite_difference_gradient(game, theta, lam, feats, pi2)
        sf = oracle.score_function_gradient(game, theta, lam, feats, pi2)
        worst = max(worst, relative_error(sf, fd))
    return Check("gradient", worst < GRADIENT_TOL, worst, GRADIENT_TOL, f"{n_points} random parameters")


def relative_error(a, b) -> float:
    scale = max(float(np.linalg.norm(b)), 1e-12)
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b))) / scale


def outside_points(game: TabularGame, T: TargetSet, rng: np.random.Generator, n: int) -> np.ndarray:
    """Uniform points outside ``T`` in an inflated box around rewards and ``T``."""
    flat = game.R.reshape(-1, game.reward_dim)
    lo, hi = flat.min(axis=0), flat.max(axis=0)
    if T.is_box:
        lo, hi = np.minimum(lo, T.lower), np.maximum(hi, T.upper)
    pad = 0.5 * np.maximum(hi - lo, 1e-3)
    lo, hi = lo - pad, hi + pad
    out = []
    while len(out) < n:
        s = rng.uniform(lo, hi)
        if distance(s, T) > 1e-6:
            out.append(s)
    return np.array(out)


def check_certificate(game, T: TargetSet, rng: np.random.Generator, n_points: int) -> Check:
    worst, where = np.inf, None
    for s in outside_points(game, T, rng, n_points):
        value, _ = oracle.blackwell_certificate(game, T, s)
        if value < worst:
            worst, where = value, s
    detail = f"min over {n_points} outside points at {np.round(where, 4).tolist()}"
    # a non-negative value certifies; report the shortfall below zero
    return Check("certificate", worst >= 0.0, worst, 0.0, detail)


def run_all(game: TabularGame, T: TargetSet, params: dict) -> list[Check]:
    """All checks in a fixed order; model checks are skipped on a non-ergodic game."""
    rng = np.random.default_rng(params["seed"])
    erg = check_ergodicity(game)
    checks = [erg]
    names = ("stationarity", "kac", "poisson", "q_values", "cesaro", "gradient")
    if not erg.passed:
        checks += [Check(n, False, float("nan"), float("nan"), "skipped: chain is not ergodic") for n in names]
    else:
        pi1 = random_policy(rng, game.n_states, game.n_actions1)
        pi2 = random_policy(rng, game.n_states, game.n_actions2)
        lam = random_direction(rng, game.reward_dim)
        checks += [
            check_stationarity(game, pi1, pi2),
            check_kac(game, pi1, pi2, params["kac_cycles"], params["seed"]),
            check_poisson(game, rng, params["poisson_chains"]),
            check_q_consistency(game, pi1, pi2, lam),
            check_cesaro(game, pi1, pi2, params["cesaro_steps"]),
            check_gradient(game, rng, params["gradient_points"]),
        ]
    try:
        checks.append(check_certificate(game, T, rng, params["certificate_points"]))
    except ErgodicityError as exc:
        checks.append(Check("certificate", False, float("nan"), 0.0, f"skipped: {exc}"))
    return checks
