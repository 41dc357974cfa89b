"""End-to-end acceptance checks; each prints one PASS/FAIL line."""
import csv
import time
from pathlib import Path

import numpy as np
import pytest
from helpers import random_game, random_policy, unit

from blackwell_pg import oracle
from blackwell_pg.cli import main
from blackwell_pg.driver import RunConfig, run, running_means
from blackwell_pg.game import ErgodicityError, TabularGame, reducible_game, verification_game
from blackwell_pg.geometry import TargetSet, distance, distances, project
from blackwell_pg.learner import TabularFeatures

ROOT = Path(__file__).resolve().parents[1]
SEEDS = range(10)


def report(capsys, label, passed, detail):
    with capsys.disabled():
        print(f"\n{label}: {'PASS' if passed else 'FAIL'} ({detail})")


@pytest.fixture(scope="module")
def tabular_runs():
    game = verification_game()
    T = TargetSet.box([0.35, 0.35], [0.7, 0.7])
    start = time.perf_counter()
    runs = [run(RunConfig(game, T, seed=s, max_total_steps=200_000, log_steps=True)) for s in SEEDS]
    return game, T, runs, time.perf_counter() - start


def test_tabular_approachability(tabular_runs, capsys):
    game, T, runs, wall = tabular_runs
    rng = np.random.default_rng(2024)
    certs = []
    while len(certs) < 100:
        s = rng.uniform(-0.5, 1.5, size=2)
        if distance(s, T) > 0:
            certs.append(oracle.blackwell_certificate(game, T, s)[0])
    ok = 0
    for tr in runs:
        D = distances(running_means(tr.steps["r"]), T)
        tail = D[int(0.9 * len(D)) :]
        ok += bool(D[-1] < 0.05 and np.all(tail < 0.05))
    passed = min(certs) >= 0 and ok >= 9 and wall < 60
    report(
        capsys, "A1 tabular approachability", passed,
        f"certificate min {min(certs):.4f}, {ok}/10 seeds below 0.05 over the last 10%, {wall:.1f} s",
    )
    assert passed


def test_kac_recurrence_time(capsys):
    start = time.perf_counter()
    game = verification_game()
    rng = np.random.default_rng(7)
    P, _ = oracle.induced_chain(game, random_policy(rng, 3, 2), random_policy(rng, 3, 2))
    expected = oracle.expected_recurrence_time(oracle.stationary_distribution(P), game.anchor)
    times = oracle.simulate_recurrence_times(P, game.anchor, 10_000, seed=7)
    err = abs(times.mean() - expected) / expected
    wall = time.perf_counter() - start
    passed = err < 0.02 and wall < 5
    report(capsys, "A2 Kac recurrence time", passed, f"relative error {err:.4f}, {wall:.2f} s")
    assert passed


def test_policy_gradient(capsys):
    start = time.perf_counter()
    game = verification_game()
    rng = np.random.default_rng(3)
    feats = TabularFeatures.one_hot(3, 2)
    worst = 0.0
    for _ in range(10):
        theta = rng.normal(size=feats.n_policy)
        lam = unit(rng, 2)
        pi2 = random_policy(rng, 3, 2)
        fd = oracle.finite_difference_gradient(game, theta, lam, feats, pi2, h=1e-5)
        sf = oracle.score_function_gradient(game, theta, lam, feats, pi2)
        worst = max(worst, np.linalg.norm(sf - fd) / np.linalg.norm(fd))
    wall = time.perf_counter() - start
    passed = worst < 1e-4 and wall < 5
    report(capsys, "A3 policy gradient", passed, f"max relative error {worst:.2e}, {wall:.2f} s")
    assert passed


def test_poisson_equation(capsys):
    rng = np.random.default_rng(5)
    worst_res, worst_gain = 0.0, 0.0
    for _ in range(20):
        g = random_game(rng, n_states=int(rng.integers(2, 8)), k=2)
        pi1, pi2 = random_policy(rng, g.n_states, 2), random_policy(rng, g.n_states, 2)
        lam = unit(rng, 2)
        P, R = oracle.induced_chain(g, pi1, pi2)
        V, gain = oracle.solve_poisson(P, R @ lam, g.anchor)
        worst_res = max(worst_res, oracle.poisson_residual(P, R @ lam, V, gain))
        exact = oracle.exact_average_reward(oracle.stationary_distribution(P), R) @ lam
        worst_gain = max(worst_gain, abs(gain - exact))
    passed = worst_res < 1e-10 and worst_gain < 1e-10
    report(capsys, "A4 Poisson equation", passed, f"residual {worst_res:.1e}, gain gap {worst_gain:.1e}")
    assert passed


def _random_set(rng):
    if rng.random() < 0.3:
        lo = rng.uniform(-2, 1, size=2)
        return TargetSet.box(lo, lo + rng.uniform(0.1, 2, size=2))
    normals = rng.normal(size=(5, 2))
    offsets = rng.uniform(0.2, 1.5, size=5) * np.linalg.norm(normals, axis=1)
    a = np.vstack([normals, np.eye(2), -np.eye(2)])
    return TargetSet.polytope(a, np.concatenate([offsets, np.full(4, 2.0)]))


def _inside(T, rng, n):
    pts = []
    while len(pts) < n:
        y = rng.uniform(-3, 3, size=2)
        if T.contains(y, tol=0.0):
            pts.append(y)
    return np.array(pts)


def test_projection_geometry(capsys):
    rng = np.random.default_rng(11)
    idem = nonexp = vi = 0.0
    for _ in range(1000):
        T = _random_set(rng)
        a, b = rng.uniform(-5, 5, size=(2, 2))
        pa, pb = project(a, T), project(b, T)
        idem = max(idem, np.max(np.abs(project(pa, T) - pa)))
        nonexp = max(nonexp, np.linalg.norm(pa - pb) - np.linalg.norm(a - b))
        ys = _inside(T, rng, 20)
        vi = max(vi, np.max((ys - pa) @ (a - pa)))
    # grid agreement: argmin near the set, distance and tie set far from it;
    # the grid covers every set _random_set can produce
    h = 0.01
    g = np.arange(-3.5, 3.5 + h / 2, h)
    grid = np.stack(np.meshgrid(g, g), axis=-1).reshape(-1, 2)
    grid_err = 0.0
    for _ in range(10):
        T = _random_set(rng)
        inside = grid[np.all(grid @ T.normals.T <= T.offsets + 1e-12, axis=1)]
        for y in _inside(T, rng, 10):
            s = y + rng.normal(size=2) * h
            if distance(s, T) <= h:
                best = inside[np.argmin(np.linalg.norm(inside - s, axis=1))]
                grid_err = max(grid_err, np.linalg.norm(project(s, T) - best) / h)
        for s in rng.uniform(-5, 5, size=(10, 2)):
            d = np.linalg.norm(inside - s, axis=1)
            p = project(s, T)
            near = inside[d <= d.min() + h * np.sqrt(2)]
            grid_err = max(grid_err, abs(d.min() - distance(s, T)) / h, np.min(np.linalg.norm(near - p, axis=1)) / h)
    passed = idem <= 1e-9 and nonexp <= 1e-9 and vi <= 1e-9 and grid_err <= 2
    report(
        capsys, "A5 projection geometry", passed,
        f"idempotence {idem:.1e}, nonexpansive excess {nonexp:.1e}, variational {vi:.1e}, grid {grid_err:.2f} pitches",
    )
    assert passed


def test_blackwell_condition_monitoring(tabular_runs, capsys):
    _, _, runs, _ = tabular_runs
    fractions = []
    for tr in runs:
        late = tr.end_step > 0.2 * tr.total_steps
        fractions.append(np.mean(tr.blackwell_inner[late] >= -0.05))
    passed = min(fractions) >= 0.9
    report(capsys, "A6 Blackwell condition monitoring", passed, f"min fraction over seeds {min(fractions):.4f}")
    assert passed


def test_climate_reproduction(tmp_path, capsys):
    out = tmp_path / "climate"
    code = main(["run", str(ROOT / "configs" / "climate.config"), "--out", str(out)])
    ok = 0
    for s in SEEDS:
        path = out / f"steps_seed{s}.csv"
        with open(path) as fh:
            header = next(csv.reader(fh))
        D = np.loadtxt(path, delimiter=",", skiprows=1, usecols=header.index("dist"))
        ok += bool(D[99_999] < 0.2 * D[999] and D[-1] <= 1e-3)
    passed = code == 0 and ok >= 8
    report(capsys, "A7 climate reproduction", passed, f"{ok}/10 seeds, figure CSVs in steps_seed*.csv")
    assert passed


def test_negative_controls(capsys):
    game = verification_game()
    T = TargetSet.box([0.35, 0.35], [0.7, 0.7])
    base = run(RunConfig(game, T, seed=0, max_total_steps=200_000))
    idle = np.flatnonzero(~np.any(base.lam, axis=1))
    n = int(idle[idle > 100][0])
    before = run(RunConfig(game, T, seed=0, max_total_steps=200_000, max_outer=n))
    after = run(RunConfig(game, T, seed=0, max_total_steps=200_000, max_outer=n + 1))
    frozen = (
        after.total_steps > before.total_steps
        and np.array_equal(before.theta, after.theta)
        and np.array_equal(before.rho, after.rho)
        and before.g_hat == after.g_hat
    )
    red = reducible_game()
    try:
        TabularGame(P=red.P, R=red.R, initial=red.initial)
        reducible_flagged = False
    except ErgodicityError:
        reducible_flagged = True
    value, _ = oracle.blackwell_certificate(game, TargetSet.box([0.9, 0.9], [1.0, 1.0]), [0.5, 0.5])
    passed = frozen and reducible_flagged and value < 0
    report(
        capsys, "A8 negative controls", passed,
        f"freeze {frozen}, reducible flagged {reducible_flagged}, unapproachable certificate {value:.4f}",
    )
    assert passed
