import numpy as np
import pytest
from helpers import random_game, random_policy, unit

from blackwell_pg import oracle
from blackwell_pg.game import ErgodicityError, TabularGame, reducible_game
from blackwell_pg.geometry import TargetSet
from blackwell_pg.learner import TabularFeatures

P_TWO = np.array([[0.5, 0.5], [1.0, 0.0]])


# --- induced chain ------------------------------------------------------------


def test_induced_chain_deterministic_policies(game):
    pi1 = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]])
    pi2 = np.array([[0.0, 1.0], [0.0, 1.0], [1.0, 0.0]])
    P, R = oracle.induced_chain(game, pi1, pi2)
    assert np.array_equal(P, np.stack([game.P[0, 0, 1], game.P[1, 1, 1], game.P[2, 0, 0]]))
    assert np.array_equal(R, np.stack([game.R[0, 0, 1], game.R[1, 1, 1], game.R[2, 0, 0]]))


def test_induced_chain_symmetric_game():
    P = np.zeros((2, 2, 2, 2))
    P[0, :, :] = [[[0.3, 0.7], [0.6, 0.4]], [[0.6, 0.4], [0.3, 0.7]]]
    P[1] = P[0][..., ::-1]
    g = TabularGame(P=P, R=np.zeros((2, 2, 2, 2)), initial=[0.5, 0.5])
    u = np.full((2, 2), 0.5)
    P_pi, _ = oracle.induced_chain(g, u, u)
    assert np.allclose(P_pi, P_pi.T)


def test_induced_chain_rejects_bad_policy(game):
    with pytest.raises(ValueError, match="player 1"):
        oracle.induced_chain(game, np.full((3, 2), 0.6), np.full((3, 2), 0.5))


def test_induced_chain_matches_sampling(game, rng):
    pi1, pi2 = random_policy(rng, 3, 2), random_policy(rng, 3, 2)
    P, _ = oracle.induced_chain(game, pi1, pi2)
    n = 100_000
    for x in range(3):
        freq = oracle.empirical_transitions(game, pi1, pi2, x, n, seed=x)
        sigma = np.sqrt(P[x] * (1 - P[x]) / n)
        assert np.all(np.abs(freq - P[x]) <= 3 * sigma + 1e-12)


# --- stationary distribution --------------------------------------------------


@pytest.mark.parametrize(
    "P, d",
    [
        ([[0.5, 0.5], [0.5, 0.5]], [0.5, 0.5]),
        ([[0.9, 0.1], [0.1, 0.9]], [0.5, 0.5]),
        (P_TWO, [2 / 3, 1 / 3]),
    ],
)
def test_stationary_examples(P, d):
    assert np.allclose(oracle.stationary_distribution(np.array(P)), d, atol=1e-12)


def test_stationary_invariants(rng):
    for _ in range(20):
        g = random_game(rng, n_states=5)
        P, _ = oracle.induced_chain(g, random_policy(rng, 5, 2), random_policy(rng, 5, 2))
        d = oracle.stationary_distribution(P)
        assert np.all(d >= 0) and abs(d.sum() - 1) <= 1e-12
        assert np.max(np.abs(d @ P - d)) <= 1e-10
        # power iteration cross-check
        mu = np.full(5, 0.2)
        for _ in range(2000):
            mu = mu @ P
        assert np.allclose(mu, d, atol=1e-10)


def test_stationary_rejects_reducible_and_periodic():
    with pytest.raises(ErgodicityError):
        oracle.stationary_distribution(np.array([[1.0, 0.0], [0.5, 0.5]]))
    with pytest.raises(ErgodicityError):
        oracle.stationary_distribution(np.array([[0.0, 1.0], [1.0, 0.0]]))


def test_reducible_fixture_fails():
    g = reducible_game()
    u = np.full((3, 2), 0.5)
    P, _ = oracle.induced_chain(g, u, u)
    with pytest.raises(ErgodicityError):
        oracle.stationary_distribution(P)


# --- average reward, Kac ------------------------------------------------------


def test_average_reward_examples():
    assert np.array_equal(oracle.exact_average_reward([1, 0], [[2, 3], [9, 9]]), [2, 3])
    assert np.allclose(oracle.exact_average_reward([0.3, 0.7], [[4, 5], [4, 5]]), [4, 5])
    assert np.allclose(oracle.exact_average_reward([2 / 3, 1 / 3], [[3, 0], [0, 3]]), [2, 1])


def test_cesaro_matches_exact(game, rng):
    assert np.allclose(oracle.cesaro_average([1, 0], P_TWO, np.array([[3, 0], [0, 3]]), 10_000), [2, 1], atol=1e-3)
    pi1, pi2 = random_policy(rng, 3, 2), random_policy(rng, 3, 2)
    P, R = oracle.induced_chain(game, pi1, pi2)
    exact = oracle.exact_average_reward(oracle.stationary_distribution(P), R)
    assert np.max(np.abs(oracle.cesaro_average(game.initial, P, R, 100_000) - exact)) < 1e-3


def test_recurrence_time_examples():
    assert oracle.expected_recurrence_time(np.array([0.5, 0.5]), 0) == 2.0
    assert oracle.expected_recurrence_time(np.array([2 / 3, 1 / 3]), 1) == pytest.approx(3.0)
    with pytest.raises(ErgodicityError):
        oracle.expected_recurrence_time(np.array([1.0, 0.0]), 1)


def test_kac_simulation(game, rng):
    pi1, pi2 = random_policy(rng, 3, 2), random_policy(rng, 3, 2)
    P, _ = oracle.induced_chain(game, pi1, pi2)
    d = oracle.stationary_distribution(P)
    expected = oracle.expected_recurrence_time(d, 0)
    assert expected * d[0] == pytest.approx(1.0, abs=1e-15)
    times = oracle.simulate_recurrence_times(P, 0, 10_000, seed=1)
    assert times.shape == (10_000,) and times.min() >= 1
    assert abs(times.mean() - expected) / expected < 0.02


# --- Poisson, Q ---------------------------------------------------------------


def test_poisson_constant_reward(rng):
    P = rng.dirichlet(np.ones(4), size=4)
    V, g = oracle.solve_poisson(P, np.full(4, 2.5), 0)
    assert g == pytest.approx(2.5, abs=1e-12) and np.allclose(V, 0, atol=1e-12)


def test_poisson_one_state():
    V, g = oracle.solve_poisson(np.ones((1, 1)), np.array([5.0]), 0)
    assert g == 5.0 and V[0] == 0.0


def test_poisson_two_state():
    V, g = oracle.solve_poisson(P_TWO, np.array([1.0, 0.0]), 0)
    assert g == pytest.approx(2 / 3, abs=1e-12)
    # V(1) + g = 0 + V(0) with V(0) = 0
    assert np.allclose(V, [0.0, -2 / 3], atol=1e-12)
    assert oracle.poisson_residual(P_TWO, np.array([1.0, 0.0]), V, g) < 1e-10


def test_poisson_random_chains(rng):
    for _ in range(20):
        g = random_game(rng, n_states=int(rng.integers(2, 7)), k=3)
        n = g.n_states
        pi1, pi2 = random_policy(rng, n, 2), random_policy(rng, n, 2)
        lam = unit(rng, 3)
        P, R = oracle.induced_chain(g, pi1, pi2)
        V, gain = oracle.solve_poisson(P, R @ lam, 0)
        assert V[0] == 0.0
        assert oracle.poisson_residual(P, R @ lam, V, gain) < 1e-10
        assert abs(gain - oracle.exact_average_reward(oracle.stationary_distribution(P), R) @ lam) < 1e-10


def test_poisson_rejects_two_classes():
    P = np.array([[1.0, 0.0], [0.0, 1.0]])
    with pytest.raises(ErgodicityError):
        oracle.solve_poisson(P, np.array([1.0, 0.0]), 0)


def test_q_values_single_action():
    P = np.full((2, 1, 1, 2), 0.5)
    R = np.array([[[[1.0, 0.0]]], [[[0.0, 2.0]]]])
    g = TabularGame(P=P, R=R, initial=[1.0, 0.0])
    one = np.ones((2, 1))
    P_pi, R_pi = oracle.induced_chain(g, one, one)
    lam = np.array([0.6, 0.8])
    V, gain = oracle.solve_poisson(P_pi, R_pi @ lam, 0)
    Q = oracle.exact_q_values(g, V, gain, lam)
    assert np.allclose(Q[:, 0, 0], V, atol=1e-12)


def test_q_values_constant_reward(game):
    g = TabularGame(P=game.P, R=np.ones_like(game.R), initial=game.initial)
    u = np.full((3, 2), 0.5)
    P, R = oracle.induced_chain(g, u, u)
    lam = np.array([1.0, 0.0])
    V, gain = oracle.solve_poisson(P, R @ lam, 0)
    assert gain == pytest.approx(1.0) and np.allclose(oracle.exact_q_values(g, V, gain, lam), 0.0, atol=1e-12)


def test_q_value_consistency(rng):
    for _ in range(20):
        g = random_game(rng, n_states=4, n1=3, n2=2)
        pi1, pi2 = random_policy(rng, 4, 3), random_policy(rng, 4, 2)
        lam = unit(rng, 2)
        P, R = oracle.induced_chain(g, pi1, pi2)
        V, gain = oracle.solve_poisson(P, R @ lam, 0)
        Q = oracle.exact_q_values(g, V, gain, lam)
        assert np.max(np.abs(np.einsum("xa,xb,xab->x", pi1, pi2, Q) - V)) < 1e-10


# --- gradients ----------------------------------------------------------------


def test_gradient_zero_for_constant_reward(game):
    g = TabularGame(P=game.P, R=np.full_like(game.R, 0.4), initial=game.initial)
    f = TabularFeatures.one_hot(3, 2)
    fd = oracle.finite_difference_gradient(g, np.zeros(6), np.array([1.0, 0.0]), f, np.full((3, 2), 0.5))
    assert np.allclose(fd, 0.0, atol=1e-9)


def test_gradient_symmetric_opposite_rewards():
    P = np.ones((1, 2, 1, 1))
    R = np.array([[[[1.0, 0.0]], [[-1.0, 0.0]]]])
    g = TabularGame(P=P, R=R, initial=[1.0])
    f = TabularFeatures.one_hot(1, 2)
    grad = oracle.finite_difference_gradient(g, np.zeros(2), np.array([1.0, 0.0]), f, np.ones((1, 1)))
    assert grad[0] == pytest.approx(-grad[1], abs=1e-9) and grad[0] > 0


def test_gradient_rejects_bad_step(game):
    with pytest.raises(ValueError):
        oracle.finite_difference_gradient(
            game, np.zeros(6), np.array([1.0, 0.0]), TabularFeatures.one_hot(3, 2), np.full((3, 2), 0.5), h=0.0
        )


def test_gradient_check_random_games(rng):
    for _ in range(10):
        g = random_game(rng, n_states=int(rng.integers(2, 5)), n1=3, n2=2)
        f = TabularFeatures(rng.normal(size=(g.n_states, 3, 4)), np.eye(g.n_states))
        theta = rng.normal(size=4)
        lam = unit(rng, 2)
        pi2 = random_policy(rng, g.n_states, 2)
        fd = oracle.finite_difference_gradient(g, theta, lam, f, pi2)
        sf = oracle.score_function_gradient(g, theta, lam, f, pi2)
        assert np.linalg.norm(sf - fd) / np.linalg.norm(fd) < 1e-4


# --- certificate --------------------------------------------------------------


def test_certificate_containing_target(game):
    flat = game.R.reshape(-1, 2)
    T = TargetSet.box(flat.min(axis=0) - 0.1, flat.max(axis=0) + 0.1)
    for s in ([-1.0, -1.0], [3.0, 0.5], [0.5, 4.0]):
        value, policy = oracle.blackwell_certificate(game, T, s)
        assert value >= 0 and policy.shape == (3,)


def test_certificate_inside_point_is_trivial(game, box):
    value, _ = oracle.blackwell_certificate(game, box, [0.5, 0.5])
    assert value == 0.0


def test_certificate_fixture_is_approachable(game, box, rng):
    found = 0
    while found < 100:
        s = rng.uniform(-0.5, 1.5, size=2)
        if box.contains(s):
            continue
        value, policy = oracle.blackwell_certificate(game, box, s)
        assert value >= 0
        found += 1
    # the certifying policy plays safe everywhere
    assert np.array_equal(policy, [0, 0, 0])


def test_certificate_negative_for_unreachable_target(game):
    T = TargetSet.box([0.9, 0.9], [1.0, 1.0])
    value, _ = oracle.blackwell_certificate(game, T, [0.5, 0.5])
    assert value < 0


def test_certificate_enumeration_cap(rng):
    g = random_game(rng, n_states=9, n1=3, n2=2)
    with pytest.raises(ValueError, match="smaller game"):
        oracle.pure_policy_averages(g)


def test_pure_action_averages_match_chain(game):
    table = oracle.pure_action_averages(game)
    for a in range(2):
        for b in range(2):
            pi1 = np.tile(np.eye(2)[a], (3, 1))
            pi2 = np.tile(np.eye(2)[b], (3, 1))
            P, R = oracle.induced_chain(game, pi1, pi2)
            assert np.allclose(table[a, b], oracle.cesaro_average(game.initial, P, R, 20_000), atol=1e-3)
