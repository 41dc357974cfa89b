"""Command-line front end: ``run``, ``verify`` and ``show-config``.

Exit codes: 0 success, 1 runtime failure (diverged learner, capped
excursion, failed check), 2 bad configuration or usage.
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from . import checks
from .config import ConfigError, ExperimentConfig, default_text, load, render
from .driver import NonFiniteError, RunTrace, run
from .game import ErgodicityError, TabularGame, check_ergodic
from .geometry import ProjectionError

LOG_ENV = "BLACKWELL_PG_LOG"
EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2

log = logging.getLogger("blackwell_pg")


@dataclass
class SeedResult:
    seed: int
    trace: RunTrace | None
    wall: float
    error: str = ""

    @property
    def failed(self) -> bool:
        return bool(self.error) or (self.trace is not None and bool(self.trace.capped.any()))


def trace_path(out: Path, seed: int) -> Path:
    return out / f"trace_seed{seed}.csv"


def steps_path(out: Path, seed: int) -> Path:
    return out / f"steps_seed{seed}.csv"


def _run_seed(cfg: ExperimentConfig, seed: int, out: Path) -> SeedResult:
    start = time.perf_counter()
    try:
        trace = run(cfg.run_config(seed))
    except NonFiniteError as exc:
        exc.trace.write_episode_csv(trace_path(out, seed))
        return SeedResult(seed, exc.trace, time.perf_counter() - start, str(exc))
    except ProjectionError as exc:
        return SeedResult(seed, None, time.perf_counter() - start, str(exc))
    wall = time.perf_counter() - start
    trace.write_episode_csv(trace_path(out, seed))
    if cfg.granularity == "step":
        trace.write_step_csv(steps_path(out, seed), cfg.target)
    return SeedResult(seed, trace, wall)


def write_summary(path: Path, results: list[SeedResult]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["seed", "final_dist", "episodes", "steps", "capped_episodes", "wall_time_s", "status"])
        for r in results:
            tr = r.trace
            if tr is None:
                w.writerow([r.seed, "nan", 0, 0, 0, f"{r.wall:.3f}", "aborted"])
                continue
            status = "aborted" if r.error else ("capped" if tr.capped.any() else "ok")
            w.writerow(
                [r.seed, repr(float(tr.final_dist)), len(tr), tr.total_steps,
                 int(tr.capped.sum()), f"{r.wall:.3f}", status]
            )


def cmd_run(args) -> int:
    cfg = load(args.config)
    e = cfg.values["experiment"]
    if args.seed is not None:
        e["seed"] = args.seed
    if args.seeds is not None:
        if args.seeds < 1:
            raise ConfigError("--seeds must be at least 1")
        e["seeds"] = args.seeds
    if args.out is not None:
        e["out"] = args.out
    if isinstance(cfg.game, TabularGame):
        try:
            check_ergodic(cfg.game.P.mean(axis=(1, 2)))
        except ErgodicityError as exc:
            print(f"error: run aborted before start: {exc}", file=sys.stderr)
            return EXIT_RUNTIME
    out = cfg.out
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"output directory '{out}' is not writable: {exc.strerror}") from None
    if not os.access(out, os.W_OK):
        raise ConfigError(f"output directory '{out}' is not writable")

    seeds = cfg.seeds
    with ThreadPoolExecutor(max_workers=min(cfg.workers, len(seeds))) as pool:
        results = list(pool.map(lambda s: _run_seed(cfg, s, out), seeds))
    write_summary(out / "summary.csv", results)

    code = EXIT_OK
    for r in results:
        if r.error:
            print(f"error: seed {r.seed}: {r.error}", file=sys.stderr)
            code = EXIT_RUNTIME
        elif r.trace.capped.any():
            capped = r.trace.capped_episodes
            eps = ", ".join(map(str, capped[:10])) + (f" and {len(capped) - 10} more" if len(capped) > 10 else "")
            print(
                f"error: seed {r.seed}: episode(s) {eps} hit the step cap without recurring",
                file=sys.stderr,
            )
            code = EXIT_RUNTIME
        else:
            log.info("seed %d: %d episodes, final distance %.3g", r.seed, len(r.trace), r.trace.final_dist)
    print(f"wrote {len(results)} trace(s) and summary.csv to {out}")
    return code


def cmd_verify(args) -> int:
    cfg = load(args.config)
    if not isinstance(cfg.game, TabularGame):
        print("error: verification requires a tabular game", file=sys.stderr)
        return EXIT_CONFIG
    results = checks.run_all(cfg.game, cfg.target, cfg.verify)
    for c in results:
        print(c.line())
    ok = all(c.passed for c in results)
    print("all checks passed" if ok else f"{sum(not c.passed for c in results)} check(s) failed")
    return EXIT_OK if ok else EXIT_RUNTIME


def cmd_show_config(args) -> int:
    if args.config is None:
        sys.stdout.write(default_text())
    else:
        sys.stdout.write(render(load(args.config).values))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="blackwell-pg", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one or more seeds and write CSV traces")
    r.add_argument("config")
    r.add_argument("--seed", type=int, help="first seed (overrides the config)")
    r.add_argument("--seeds", type=int, help="number of seeds (overrides the config)")
    r.add_argument("--out", help="output directory (overrides the config)")
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("verify", help="run the exact-model checks on a tabular game")
    v.add_argument("config")
    v.set_defaults(func=cmd_verify)

    s = sub.add_parser("show-config", help="print defaults, or the resolved values of a config")
    s.add_argument("config", nargs="?")
    s.set_defaults(func=cmd_show_config)
    return p


def _setup_logging() -> None:
    level = os.environ.get(LOG_ENV, "WARNING").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
    )


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
