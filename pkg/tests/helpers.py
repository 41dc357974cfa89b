import numpy as np

from blackwell_pg.game import TabularGame


def random_game(rng, n_states=3, n1=2, n2=2, k=2, anchor=0):
    """Game with strictly positive transition rows, hence ergodic under every policy."""
    from blackwell_pg.game import RecurrenceSpec

    P = rng.dirichlet(np.ones(n_states), size=(n_states, n1, n2))
    R = rng.normal(size=(n_states, n1, n2, k))
    return TabularGame(
        P=P, R=R, initial=np.full(n_states, 1.0 / n_states), recurrence=RecurrenceSpec(anchor_state=anchor)
    )


def random_policy(rng, n_states, n_actions):
    return rng.dirichlet(np.ones(n_actions), size=n_states)


def unit(rng, k):
    v = rng.normal(size=k)
    return v / np.linalg.norm(v)
