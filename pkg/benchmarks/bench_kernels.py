"""Time the compiled kernels against their pure-numpy fallback.

Each backend runs in its own interpreter because the choice is fixed at
import time by ``BLACKWELL_PG_NUMBA``.  Compilation happens in a warm-up
call that is excluded from the timings.

    python3 benchmarks/bench_kernels.py [--steps N] [--repeat R]
"""
import argparse
import json
import os
import subprocess
import sys
from pathlib import Path

CLIMATE = Path(__file__).resolve().parents[1] / "configs" / "climate.config"

WORKER = r"""
import json, sys, time
import numpy as np
from blackwell_pg._jit import backend
from blackwell_pg.driver import RunConfig, run
from dataclasses import replace
from blackwell_pg.config import load
from blackwell_pg.game import verification_game
from blackwell_pg.geometry import MAX_CYCLES, MOVE_TOL, TargetSet, dykstra_halfspaces

steps, repeat, climate_config = int(sys.argv[1]), int(sys.argv[2]), sys.argv[3]
box = TargetSet.box([0.35, 0.35], [0.7, 0.7])
poly = TargetSet.polytope([[-1, 0], [0, -1], [1, 1]], [-0.35, -0.35, 1.3])
climate = load(climate_config).run_config(0)
cases = {
    "tabular run": lambda n: RunConfig(verification_game(), box, seed=0, max_total_steps=n),
    "climate run": lambda n: replace(climate, max_total_steps=n, log_steps=False),
}

def best(fn):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)

result = {"backend": backend()}
for name, make in cases.items():
    run(make(200))
    result[name] = best(lambda: run(make(steps)))
    result[name + " checksum"] = float(run(make(steps)).final_dist)
pts = np.random.default_rng(0).uniform(-2, 3, size=(2000, 2))
dykstra_halfspaces(pts[0], poly.normals, poly.offsets, MAX_CYCLES, MOVE_TOL)
result["polytope projection x2000"] = best(
    lambda: [dykstra_halfspaces(p, poly.normals, poly.offsets, MAX_CYCLES, MOVE_TOL) for p in pts]
)
print(json.dumps(result))
"""


def measure(flag: str, steps: int, repeat: int) -> dict:
    env = dict(os.environ, BLACKWELL_PG_NUMBA=flag)
    out = subprocess.run(
        [sys.executable, "-c", WORKER, str(steps), str(repeat), str(CLIMATE)],
        env=env, capture_output=True, text=True, check=True,
    )
    return json.loads(out.stdout)


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--steps", type=int, default=20_000)
    p.add_argument("--repeat", type=int, default=3)
    args = p.parse_args(argv)
    fast = measure("1", args.steps, args.repeat)
    slow = measure("0", args.steps, args.repeat)
    print(f"{'case':<28}{fast['backend']:>10}{slow['backend']:>10}{'speedup':>10}")
    for key in fast:
        if key == "backend" or key.endswith("checksum"):
            continue
        print(f"{key:<28}{fast[key]:>9.3f}s{slow[key]:>9.3f}s{slow[key] / fast[key]:>9.1f}x")
    for key in (k for k in fast if k.endswith("checksum")):
        same = "identical" if fast[key] == slow[key] else f"differ: {fast[key]!r} vs {slow[key]!r}"
        print(f"{key.replace(' checksum', '')} final distance: {same}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
