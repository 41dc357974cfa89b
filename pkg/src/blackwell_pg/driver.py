"""Outer loop: steer the running average reward toward the target set.

Each outer iteration projects the running average onto the target, fixes the
steering vector for one excursion between anchor visits, and lets the
compiled inner kernel simulate and learn on the scalarized reward.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .game import ClimateEnv, TabularAdversary, TabularGame
from .geometry import DEFAULT_EPS_PROJ, ProjectionError, TargetSet, distance, distances
from .learner import ClimateFeatures, StepSchedule, TabularFeatures

log = logging.getLogger(__name__)

UNIFORM_CHUNK = 1 << 17
MAX_LOGGED_STEPS = 50_000_000


class NonFiniteError(RuntimeError):
    """Learner parameters stopped being finite; the run was aborted."""

    def __init__(self, episode: int, trace: "RunTrace"):
        super().__init__(f"non-finite learner parameters in episode {episode}")
        self.episode = episode
        self.trace = trace


@dataclass
class RunConfig:
    game: TabularGame | ClimateEnv
    target: TargetSet
    features: TabularFeatures | ClimateFeatures | None = None
    schedule: StepSchedule = field(default_factory=StepSchedule)
    eps_proj: float = DEFAULT_EPS_PROJ
    max_outer: int = 10**9
    max_total_steps: int = 200_000
    episode_step_cap: int = 10**6
    seed: int = 0
    log_steps: bool = False
    # "raw" scalarizes <r, lam>; "centered" uses <r - proj, lam>, which only
    # shifts the gain by a per-episode constant
    scalarization: str = "raw"

    def __post_init__(self):
        if not self.eps_proj > 0:
            raise ValueError("eps_proj must be positive")
        for name in ("max_outer", "max_total_steps", "episode_step_cap"):
            if not getattr(self, name) >= 1:
                raise ValueError(f"{name} must be a positive integer")
        if self.scalarization not in ("raw", "centered"):
            raise ValueError("scalarization must be 'raw' or 'centered'")
        if self.target.dim != self.game.reward_dim:
            raise ValueError(
                f"target set lives in R^{self.target.dim} but rewards are in R^{self.game.reward_dim}"
            )
        if self.features is None:
            if isinstance(self.game, TabularGame):
                self.features = TabularFeatures.one_hot(self.game.n_states, self.game.n_actions1)
            else:
                self.features = ClimateFeatures(self.game.lower, self.game.upper, self.game.n_actions1)
        if self.log_steps and self.max_total_steps > MAX_LOGGED_STEPS:
            raise ValueError(f"step logging is limited to {MAX_LOGGED_STEPS} steps")


@dataclass
class RunningAverage:
    mean: np.ndarray
    count: int = 0

    @classmethod
    def empty(cls, k: int) -> "RunningAverage":
        return cls(np.zeros(k), 0)


def update_running_average(avg: RunningAverage, r) -> RunningAverage:
    r = np.asarray(r, dtype=np.float64)
    if r.shape != avg.mean.shape:
        raise ValueError(f"reward of shape {r.shape} does not match average of shape {avg.mean.shape}")
    n = avg.count + 1
    return RunningAverage(avg.mean + (r - avg.mean) / n, n)


def close_episode(G_vec, tau: int) -> np.ndarray:
    if tau < 1:
        raise ValueError("recurrence time must be at least one step")
    return np.asarray(G_vec, dtype=np.float64) / tau


@dataclass
class EpisodeStats:
    """One excursion between anchor visits."""

    n: int
    tau: int
    G_vec: np.ndarray
    eta: np.ndarray
    lam: np.ndarray
    proj: np.ndarray
    distance_at_start: float
    rbar: np.ndarray
    dist: float
    blackwell_inner: float
    end_step: int
    end_state: object
    capped: bool = False

    @property
    def warmup(self) -> bool:
        # the first excursion starts from the initial distribution, not the anchor
        return self.n == 1


@dataclass
class RunTrace:
    """Episode records as columns, plus the optional per-step log.

    ``proj``/``lam`` are the values fixed at the start of each excursion;
    ``rbar``/``dist`` are measured at its end; ``blackwell_inner`` is
    ``<eta_n - proj_n, lam_n>``.
    """

    k: int
    n: np.ndarray
    tau: np.ndarray
    end_step: np.ndarray
    capped: np.ndarray
    eta: np.ndarray
    lam: np.ndarray
    proj: np.ndarray
    rbar_end: np.ndarray
    dist: np.ndarray
    distance_at_start: np.ndarray
    blackwell_inner: np.ndarray
    end_state: np.ndarray
    steps: dict[str, np.ndarray] | None = None
    total_steps: int = 0
    rbar: np.ndarray | None = None
    theta: np.ndarray | None = None
    rho: np.ndarray | None = None
    g_hat: float = 0.0
    final_dist: float = float("nan")

    def __len__(self) -> int:
        return self.n.shape[0]

    @property
    def capped_episodes(self) -> list[int]:
        return [int(n) for n in self.n[self.capped]]

    def episode(self, i: int) -> EpisodeStats:
        end_state = self.end_state[i] if self.end_state.shape[1] > 1 else int(self.end_state[i, 0])
        return EpisodeStats(
            n=int(self.n[i]),
            tau=int(self.tau[i]),
            G_vec=self.eta[i] * self.tau[i],
            eta=self.eta[i],
            lam=self.lam[i],
            proj=self.proj[i],
            distance_at_start=float(self.distance_at_start[i]),
            rbar=self.rbar_end[i],
            dist=float(self.dist[i]),
            blackwell_inner=float(self.blackwell_inner[i]),
            end_step=int(self.end_step[i]),
            end_state=end_state,
            capped=bool(self.capped[i]),
        )

    @property
    def episodes(self) -> list[EpisodeStats]:
        return [self.episode(i) for i in range(len(self))]

    def episode_header(self) -> list[str]:
        k = range(1, self.k + 1)
        return (
            ["n", "tau"]
            + [f"eta_{i}" for i in k]
            + [f"lambda_{i}" for i in k]
            + [f"rbar_{i}" for i in k]
            + ["dist", "blackwell_inner"]
        )

    def write_episode_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.episode_header())
            for i in range(len(self)):
                row = [
                    str(int(self.n[i])),
                    str(int(self.tau[i])),
                    *map(_fmt, self.eta[i]),
                    *map(_fmt, self.lam[i]),
                    *map(_fmt, self.rbar_end[i]),
                    _fmt(self.dist[i]),
                    _fmt(self.blackwell_inner[i]),
                ]
                w.writerow(row)

    def write_step_csv(self, path, target: TargetSet | None = None) -> None:
        """Per-step log with the running average and, given ``target``, its distance."""
        if self.steps is None:
            raise ValueError("run was made without step logging")
        s = self.steps
        dx = s["x"].shape[1]
        k = range(1, self.k + 1)
        rbar = running_means(s["r"])
        dist = distances(rbar, target) if target is not None else None
        header = (
            ["t"]
            + (["x"] if dx == 1 else [f"x_{i}" for i in range(1, dx + 1)])
            + ["u1", "u2"]
            + [f"r_{i}" for i in k]
            + ["delta", "g_hat"]
            + [f"rbar_{i}" for i in k]
            + (["dist"] if dist is not None else [])
        )
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for t in range(s["r"].shape[0]):
                xs = [str(int(s["x"][t, 0]))] if dx == 1 else [_fmt(v) for v in s["x"][t]]
                u2 = str(int(s["u2"][t])) if dx == 1 else _fmt(s["u2"][t])
                row = [str(t + 1), *xs, str(int(s["u1"][t])), u2, *map(_fmt, s["r"][t]),
                       _fmt(s["delta"][t]), _fmt(s["g_hat"][t]), *map(_fmt, rbar[t])]
                if dist is not None:
                    row.append(_fmt(dist[t]))
                w.writerow(row)


def _fmt(v) -> str:
    return repr(float(v))


def _target_args(T: TargetSet):
    k = T.dim
    lower = T.lower if T.is_box else np.zeros(k)
    upper = T.upper if T.is_box else np.zeros(k)
    return (
        np.ascontiguousarray(T.normals),
        np.ascontiguousarray(T.offsets),
        np.array(lower, dtype=np.float64),
        np.array(upper, dtype=np.float64),
        T.is_box,
    )


def _game_args(config: RunConfig):
    """Kernel, game-specific leading arguments, uniforms per step, state width."""
    game = config.game
    feats = config.features
    if isinstance(game, TabularGame):
        if not isinstance(feats, TabularFeatures):
            raise TypeError("tabular games need TabularFeatures")
        if feats.phi_table.shape[:2] != (game.n_states, game.n_actions1):
            raise ValueError("policy features do not match the game's states and actions")
        if feats.psi_table.shape[0] != game.n_states:
            raise ValueError("value features do not match the game's states")
        args = (
            np.ascontiguousarray(game.P),
            np.ascontiguousarray(game.R),
            feats.phi_table,
            feats.psi_table,
            np.ascontiguousarray(TabularAdversary(game).table),
            game.anchor,
        )
        return kernels.tabular_run, args, 2, 1
    if isinstance(game, ClimateEnv):
        if not isinstance(feats, ClimateFeatures):
            raise TypeError("the climate environment needs ClimateFeatures")
        if feats.n_actions != game.n_actions1:
            raise ValueError("policy features do not match the number of segments")
        args = (
            np.ascontiguousarray(game.segments),
            float(game.mixing_rate),
            float(game.noise_scale),
            game.lower.copy(),
            game.upper.copy(),
            np.asarray(game.recurrence.center, dtype=np.float64),
            float(game.recurrence.radius),
        )
        return kernels.climate_run, args, 3, 2
    raise TypeError(f"unsupported game type {type(game).__name__}")


def run(config: RunConfig) -> RunTrace:
    """Run the two-loop algorithm and return its trace.

    Stops after ``max_outer`` completed excursions or ``max_total_steps``
    steps, whichever comes first.  An excursion cut short by the total step
    budget still feeds the running average but is not recorded.  Raises
    :class:`NonFiniteError` if the learner diverges.
    """
    game, T = config.game, config.target
    k = game.reward_dim
    run_fn, game_args, draws, dx = _game_args(config)
    tgt = _target_args(T)
    rng = np.random.default_rng(config.seed)

    x0 = game.reset(config.seed)
    tabular = dx == 1
    x = int(x0) if tabular else np.array(x0, dtype=np.float64)
    theta = np.zeros(config.features.n_policy)
    rho = np.zeros(config.features.n_value)
    gain = np.zeros(1)
    mean = np.zeros(k)
    ep = np.zeros(3 * k + 2)
    ic = np.zeros(kernels.N_INT_STATE, dtype=np.int64)
    ic[kernels.N] = 1
    sched = config.schedule.as_array()
    limits = np.array([config.max_total_steps, config.max_outer, config.episode_step_cap], dtype=np.int64)
    uniforms = rng.random(UNIFORM_CHUNK * draws)

    cap = int(min(config.max_outer, max(1024, config.max_total_steps // 4)))
    rec = _alloc_records(cap, k, dx)
    n_log = config.max_total_steps if config.log_steps else 0
    logs = {
        "x": np.zeros((n_log, dx)),
        "u1": np.zeros(n_log, dtype=np.int64),
        "u2": np.zeros(n_log),
        "r": np.zeros((n_log, k)),
        "delta": np.zeros(n_log),
        "g_hat": np.zeros(n_log),
    }

    while True:
        out = run_fn(
            x, *game_args, *tgt, float(config.eps_proj), config.scalarization == "centered",
            sched, limits, theta, rho, gain, mean, ep, ic, uniforms,
            *rec,
            config.log_steps, logs["x"], logs["u1"], logs["u2"], logs["r"], logs["delta"], logs["g_hat"],
        )
        if tabular:
            x, code = out
        else:
            code = out
        if code == kernels.NEED_UNIFORMS:
            uniforms = rng.random(UNIFORM_CHUNK * draws)
            ic[kernels.UPOS] = 0
        elif code == kernels.RECORDS_FULL:
            rec = _grow_records(rec)
        elif code == kernels.DONE:
            break
        elif code == kernels.NONFINITE:
            raise NonFiniteError(int(ic[kernels.N]), _make_trace(config, rec, ic, logs, mean, theta, rho, gain))
        elif code == kernels.PROJECTION_FAILED:
            raise ProjectionError(10_000, float("nan"))
        else:  # pragma: no cover
            raise RuntimeError(f"unexpected kernel exit code {code}")
    trace = _make_trace(config, rec, ic, logs, mean, theta, rho, gain)
    capped = trace.capped_episodes
    if capped:
        log.warning(
            "%d episode(s) hit the step cap (%d) without recurring, first: %d",
            len(capped), config.episode_step_cap, capped[0],
        )
    if not (np.all(np.isfinite(theta)) and np.all(np.isfinite(rho)) and np.isfinite(gain[0])):
        raise NonFiniteError(int(ic[kernels.N]), trace)
    return trace


def _alloc_records(m: int, k: int, dx: int):
    return (
        np.zeros((m, 4), dtype=np.int64),
        np.zeros((m, 3)),
        np.zeros((m, k)),
        np.zeros((m, k)),
        np.zeros((m, k)),
        np.zeros((m, k)),
        np.zeros((m, dx)),
    )


def _grow_records(rec):
    return tuple(np.concatenate([a, np.zeros_like(a)]) for a in rec)


def _make_trace(config, rec, ic, logs, mean, theta, rho, gain) -> RunTrace:
    m = int(ic[kernels.NREC])
    rec_i, rec_f, rec_eta, rec_lam, rec_proj, rec_rbar, rec_x = (a[:m].copy() for a in rec)
    total = int(ic[kernels.TOTAL])
    trace = RunTrace(
        k=config.game.reward_dim,
        n=rec_i[:, 0],
        tau=rec_i[:, 1],
        end_step=rec_i[:, 2],
        capped=rec_i[:, 3].astype(bool),
        eta=rec_eta,
        lam=rec_lam,
        proj=rec_proj,
        rbar_end=rec_rbar,
        dist=rec_f[:, 0],
        distance_at_start=rec_f[:, 1],
        blackwell_inner=rec_f[:, 2],
        end_state=rec_x,
        steps={key: val[:total].copy() for key, val in logs.items()} if config.log_steps else None,
        total_steps=total,
        rbar=mean.copy(),
        theta=theta.copy(),
        rho=rho.copy(),
        g_hat=float(gain[0]),
    )
    if total:
        trace.final_dist = distance(trace.rbar, config.target)
    return trace


def running_means(rewards: np.ndarray) -> np.ndarray:
    """``rbar_t`` for every ``t`` from a step log of reward vectors."""
    t = np.arange(1, rewards.shape[0] + 1)[:, None]
    return np.cumsum(rewards, axis=0) / t


def check_recurrence(trace: RunTrace, game) -> bool:
    """Every uncapped excursion ended on the anchor."""
    rec = game.recurrence
    if rec.is_finite:
        hit = trace.end_state[:, 0] == rec.anchor_state
    else:
        hit = np.linalg.norm(trace.end_state - np.asarray(rec.center), axis=1) <= rec.radius
    return bool(np.all(hit | trace.capped))
