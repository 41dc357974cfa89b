"""Experiment configuration files.

INI syntax with one section per concern.  Every key has a default, so an
empty file is a valid configuration (the tabular verification run).
Vectors are whitespace- or comma-separated numbers; matrices separate rows
with ``;``.  Errors carry ``path:line`` positions.
"""
from __future__ import annotations

import configparser
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

import numpy as np

from .driver import RunConfig
from .game import ClimateEnv, RecurrenceSpec, TabularGame, load_tabular, _data_path
from .geometry import TargetSet
from .learner import StepSchedule

BUILTIN_PREFIX = "builtin:"
BUILTIN_GAMES = ("verification", "reducible")


class ConfigError(ValueError):
    def __init__(self, message: str, path=None, line: int | None = None):
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line else f"{path}: "
        super().__init__(where + message)
        self.path = path
        self.line = line


# ----------------------------------------------------------------------------
# value parsers


def _int(lo=None):
    def parse(text):
        v = int(text)
        if lo is not None and v < lo:
            raise ValueError(f"must be an integer >= {lo}")
        return v

    return parse


def _positive(text):
    v = float(text)
    if not v > 0 or not np.isfinite(v):
        raise ValueError("must be a finite number > 0")
    return v


def _nonneg(text):
    v = float(text)
    if not v >= 0 or not np.isfinite(v):
        raise ValueError("must be a finite number >= 0")
    return v


def _power(text):
    v = float(text)
    if not 0.5 < v <= 1.0:
        raise ValueError("must lie in (0.5, 1]")
    return v


def _choice(*options):
    def parse(text):
        if text not in options:
            raise ValueError(f"must be one of {', '.join(options)}")
        return text

    return parse


def _vector(text):
    parts = [p for p in re.split(r"[,\s]+", text.strip()) if p]
    v = np.array([float(p) for p in parts], dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise ValueError("entries must be finite")
    return v


def _matrix(text):
    rows = [r for r in text.split(";") if r.strip()]
    if not rows:
        return np.zeros((0, 0))
    vecs = [_vector(r) for r in rows]
    if len({v.shape[0] for v in vecs}) != 1:
        raise ValueError("matrix rows must have equal length")
    return np.array(vecs)


def _initial(text):
    return None if text.strip() == "uniform" else _vector(text)


def _text(text):
    return text.strip()


# section -> key -> (default text, parser, description)
SCHEMA: dict[str, dict[str, tuple[str, Callable[[str], Any], str]]] = {
    "experiment": {
        "environment": ("tabular", _choice("tabular", "climate"), "tabular | climate"),
        "seed": ("0", _int(0), "first seed; seeds run as seed, seed+1, ..."),
        "seeds": ("1", _int(1), "number of seeds"),
        "workers": ("1", _int(1), "seeds run concurrently up to this many threads"),
        "out": ("runs", _text, "output directory for traces and summary.csv"),
        "granularity": (
            "episode",
            _choice("episode", "step"),
            "episode | step; step also writes steps_seed<N>.csv",
        ),
    },
    "tabular": {
        "game": (
            "builtin:verification",
            _text,
            "tensor file (relative to this config) or builtin:verification / builtin:reducible",
        ),
        "anchor": ("0", _int(0), "recurrence state"),
        "initial": ("1 0 0", _initial, "initial distribution over states, or uniform"),
    },
    "climate": {
        "segments": (
            "22 34 22 58; 21 57 30 50; 15 58 23 46",
            _matrix,
            "one segment per player-1 action: x1 y1 x2 y2; rows separated by ;",
        ),
        "mixing_rate": ("0.3", _positive, "weight of the adversary point in the moving average, in (0, 1]"),
        "noise_scale": ("0.5", _nonneg, "half-width of the uniform state noise"),
        "lower": ("10 20", _vector, "state clipping rectangle, lower corner"),
        "upper": ("35 90", _vector, "state clipping rectangle, upper corner"),
        "start": ("30 70", _vector, "initial state"),
        "anchor_center": ("22 50", _vector, "center of the recurrence ball"),
        "anchor_radius": ("0.5", _positive, "radius of the recurrence ball"),
    },
    "target": {
        "type": ("box", _choice("box", "polytope"), "box | polytope"),
        "lower": ("0.35 0.35", _vector, "box lower corner"),
        "upper": ("0.7 0.7", _vector, "box upper corner"),
        "normals": ("", _matrix, "polytope only: one normal per row, rows separated by ;"),
        "offsets": ("", _vector, "polytope only: <normal_i, s> <= offset_i"),
    },
    "learner": {
        "alpha0": ("0.05", _positive, "actor step alpha0 / (1 + t/t0)^alpha_power"),
        "beta0": ("0.1", _positive, "critic step beta0 / (1 + t/t0)^beta_power"),
        "gain_ratio": ("0.1", _positive, "gain step as a fraction of the critic step"),
        "t0": ("1000", _positive, "step-size time scale (global steps)"),
        "alpha_power": ("0.8", _power, "in (0.5, 1]"),
        "beta_power": ("0.6", _power, "in (0.5, 1]"),
        "scalarization": (
            "raw",
            _choice("raw", "centered"),
            "raw: <r, lambda>; centered: <r - projection, lambda>",
        ),
    },
    "driver": {
        "eps_proj": ("0.001", _positive, "distances at or below this count as inside the target"),
        "max_outer": ("1000000000", _int(1), "maximum number of excursions"),
        "max_total_steps": ("200000", _int(1), "total environment steps"),
        "episode_step_cap": ("1000000", _int(1), "force-close an excursion after this many steps"),
    },
    "verify": {
        "seed": ("0", _int(0), "seed for random policies, directions and points"),
        "kac_cycles": ("10000", _int(1), "recurrence cycles simulated for the return-time check"),
        "gradient_points": ("10", _int(1), "random parameter vectors for the gradient check"),
        "certificate_points": ("100", _int(1), "random points outside the target to certify"),
        "cesaro_steps": ("100000", _int(1), "horizon of the time-average check"),
        "poisson_chains": ("20", _int(1), "random chains for the Poisson check"),
    },
}


@dataclass
class ExperimentConfig:
    """Resolved configuration: built objects plus run-level settings."""

    source: Path | None
    values: dict[str, dict[str, Any]]
    game: TabularGame | ClimateEnv
    target: TargetSet
    schedule: StepSchedule

    @property
    def environment(self) -> str:
        return self.values["experiment"]["environment"]

    @property
    def seeds(self) -> list[int]:
        e = self.values["experiment"]
        return list(range(e["seed"], e["seed"] + e["seeds"]))

    @property
    def workers(self) -> int:
        return self.values["experiment"]["workers"]

    @property
    def out(self) -> Path:
        return Path(self.values["experiment"]["out"])

    @property
    def granularity(self) -> str:
        return self.values["experiment"]["granularity"]

    @property
    def verify(self) -> dict[str, int]:
        return self.values["verify"]

    def run_config(self, seed: int) -> RunConfig:
        d = self.values["driver"]
        return RunConfig(
            game=self.game,
            target=self.target,
            schedule=self.schedule,
            eps_proj=d["eps_proj"],
            max_outer=d["max_outer"],
            max_total_steps=d["max_total_steps"],
            episode_step_cap=d["episode_step_cap"],
            seed=seed,
            log_steps=self.granularity == "step",
            scalarization=self.values["learner"]["scalarization"],
        )


def _key_lines(text: str) -> dict[tuple[str | None, str | None], int]:
    """Line number of every section header and key."""
    lines: dict[tuple[str | None, str | None], int] = {}
    section = None
    for i, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.strip()
        if not stripped or stripped[0] in "#;" or raw[0].isspace():
            continue
        m = re.match(r"\[([^\]]+)\]", stripped)
        if m:
            section = m.group(1).strip()
            lines.setdefault((section, None), i)
            continue
        m = re.match(r"([^=:]+?)\s*[=:]", stripped)
        if m:
            lines.setdefault((section, m.group(1).strip().lower()), i)
    return lines


def default_text() -> str:
    """All keys at their defaults, with descriptions as comments."""
    out = []
    for section, keys in SCHEMA.items():
        out.append(f"[{section}]")
        for key, (default, _, doc) in keys.items():
            out.append(f"# {doc}")
            out.append(f"{key} = {default}".rstrip())
        out.append("")
    return "\n".join(out)


def render(values: dict[str, dict[str, Any]]) -> str:
    """Resolved values in config syntax."""
    out = []
    for section, keys in SCHEMA.items():
        out.append(f"[{section}]")
        for key in keys:
            out.append(f"{key} = {_unparse(values[section][key])}".rstrip())
        out.append("")
    return "\n".join(out)


def _unparse(v) -> str:
    if v is None:
        return "uniform"
    if isinstance(v, np.ndarray):
        if v.ndim == 2:
            return "; ".join(" ".join(repr(float(x)) for x in row) for row in v)
        return " ".join(repr(float(x)) for x in v)
    return str(v)


def parse_text(text: str, path=None, base_dir: Path | None = None) -> ExperimentConfig:
    """Parse config text; ``path`` is only used in diagnostics."""
    label = path if path is not None else "<config>"
    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"), inline_comment_prefixes=("#",))
    try:
        parser.read_string(text, source=str(label))
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        msg = exc.message if hasattr(exc, "message") else str(exc)
        raise ConfigError(msg.splitlines()[0], label, line) from None
    lines = _key_lines(text)

    values: dict[str, dict[str, Any]] = {}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]", label, lines.get((section, None)))
        for key in parser[section]:
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key '{key}' in [{section}]", label, lines.get((section, key)))
    for section, keys in SCHEMA.items():
        values[section] = {}
        for key, (default, conv, _) in keys.items():
            given = parser.has_option(section, key)
            raw = parser.get(section, key) if given else default
            try:
                values[section][key] = conv(raw)
            except ValueError as exc:
                raise ConfigError(
                    f"[{section}] {key} = {raw!r}: {exc}", label, lines.get((section, key))
                ) from None

    def fail(section, key, message):
        line = lines.get((section, key)) or lines.get((section, None))
        return ConfigError(f"[{section}] {message}", label, line)

    base = base_dir if base_dir is not None else Path.cwd()
    env = values["experiment"]["environment"]
    if env == "tabular":
        game = _build_tabular(values["tabular"], base, fail)
    else:
        game = _build_climate(values["climate"], fail)
    target = _build_target(values["target"], game.reward_dim, fail)
    lr = values["learner"]
    schedule = StepSchedule(
        alpha0=lr["alpha0"],
        beta0=lr["beta0"],
        gain_ratio=lr["gain_ratio"],
        t0=lr["t0"],
        alpha_power=lr["alpha_power"],
        beta_power=lr["beta_power"],
    )
    return ExperimentConfig(source=path, values=values, game=game, target=target, schedule=schedule)


def load(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", path) from None
    return parse_text(text, path, path.parent)


def _build_tabular(v, base: Path, fail) -> TabularGame:
    name = v["game"]
    if name.startswith(BUILTIN_PREFIX):
        stem = name[len(BUILTIN_PREFIX):]
        if stem not in BUILTIN_GAMES:
            raise fail("tabular", "game", f"unknown built-in game '{stem}' (have {', '.join(BUILTIN_GAMES)})")
        file = _data_path(f"{stem}.game")
    else:
        file = (base / name) if not Path(name).is_absolute() else Path(name)
        if not file.is_file():
            raise fail("tabular", "game", f"game file '{file}' does not exist")
    try:
        # ergodicity is reported by `verify` and checked before `run`
        game = load_tabular(file, anchor=v["anchor"], initial=v["initial"], check=False)
    except ValueError as exc:
        raise fail("tabular", "game", str(exc)) from None
    return game


def _build_climate(v, fail) -> ClimateEnv:
    seg = v["segments"]
    if seg.ndim != 2 or seg.shape[0] < 1 or seg.shape[1] != 4:
        raise fail("climate", "segments", "segments need four numbers per row")
    for key in ("lower", "upper", "start", "anchor_center"):
        if v[key].shape != (2,):
            raise fail("climate", key, f"{key} must have two components")
    if v["mixing_rate"] > 1:
        raise fail("climate", "mixing_rate", "mixing_rate must lie in (0, 1]")
    try:
        return ClimateEnv(
            segments=seg.reshape(-1, 2, 2),
            mixing_rate=v["mixing_rate"],
            noise_scale=v["noise_scale"],
            lower=v["lower"],
            upper=v["upper"],
            start=v["start"],
            recurrence=RecurrenceSpec(center=tuple(v["anchor_center"]), radius=v["anchor_radius"]),
        )
    except ValueError as exc:
        raise fail("climate", None, str(exc)) from None


def _build_target(v, k: int, fail) -> TargetSet:
    try:
        if v["type"] == "box":
            if v["lower"].shape != (k,) or v["upper"].shape != (k,):
                raise fail("target", "lower", f"box corners must have {k} components")
            return TargetSet.box(v["lower"], v["upper"])
        normals, offsets = v["normals"], v["offsets"]
        if normals.ndim != 2 or normals.shape[0] == 0 or normals.shape[1] != k:
            raise fail("target", "normals", f"polytope needs at least one normal with {k} components")
        if offsets.shape != (normals.shape[0],):
            raise fail("target", "offsets", "need one offset per normal")
        return TargetSet.polytope(normals, offsets)
    except ConfigError:
        raise
    except ValueError as exc:
        raise fail("target", "type", str(exc)) from None
