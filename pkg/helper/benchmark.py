import argparse
import hashlib
import statistics
import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from fluorsqueeze.scenario import load_scenario  # noqa: E402
from fluorsqueeze.trajectories import SmeConfig, simulate_ensemble  # noqa: E402

DEFAULT_SCENARIO = Path("data/scenarios/fig1-line1.yaml")
DEFAULT_THREADS = [1, 2, 4, 8]


def digest(records) -> str:
    """sha256 over all states and increments, in trajectory order."""
    h = hashlib.sha256()
    for r in records:
        h.update(np.ascontiguousarray(r.states).tobytes())
        h.update(np.ascontiguousarray(r.dy).tobytes())
    return h.hexdigest()


def time_run(p, cfg, threads, block):
    start = time.perf_counter()
    records = simulate_ensemble(p, cfg, workers=threads, block_size=block)
    return time.perf_counter() - start, digest(records)


def print_report(rows, cfg, args):
    steps = cfg.n_traj * cfg.n_steps

    print("\n" + "=" * 60)
    print("TRAJECTORY THROUGHPUT REPORT")
    print("=" * 60)
    print("Configuration:")
    print(f"  Scenario:      {args.scenario}")
    print(f"  Trajectories:  {cfg.n_traj}")
    print(f"  Steps each:    {cfg.n_steps} (dt={cfg.dt})")
    print(f"  Block size:    {args.block}")
    print(f"  Repeats:       {args.repeats}")
    print("-" * 60)
    print(f"{'Threads':<8} {'Min(s)':<10} {'Avg(s)':<10} {'Msteps/s':<10} {'Speedup':<8}")
    base = rows[0][1]
    for threads, best, avg, _ in rows:
        print(f"{threads:<8} {best:<10.3f} {avg:<10.3f} {steps / best / 1e6:<10.2f} {base / best:<8.2f}")
    print("-" * 60)

    digests = {d for *_, ds in rows for d in ds}
    if len(digests) == 1:
        print(f"Determinism:   identical output for every thread count ({next(iter(digests))[:16]}...)")
    else:
        print(f"Determinism:   FAILED, {len(digests)} distinct outputs")
    print("=" * 60)
    return len(digests) == 1


def main():
    parser = argparse.ArgumentParser(description="Trajectory throughput across thread counts")
    parser.add_argument("--scenario", type=Path, default=DEFAULT_SCENARIO)
    parser.add_argument("-n", "--trajectories", type=int, default=256)
    parser.add_argument("--t-final", type=float, default=20.0)
    parser.add_argument("--threads", type=int, nargs="+", default=DEFAULT_THREADS)
    parser.add_argument("--block", type=int, default=32, help="Trajectories per vectorised block")
    parser.add_argument("-r", "--repeats", type=int, default=3)
    args = parser.parse_args()

    scenario = load_scenario(args.scenario)
    base = scenario.sme or SmeConfig()
    cfg = SmeConfig(
        dt=base.dt, t_final=args.t_final, seed=base.seed, n_traj=args.trajectories, initial=base.initial
    ).validate()

    print(f"Benchmarking {cfg.n_traj} trajectories on {args.threads} threads ...")
    rows = []
    for threads in args.threads:
        durations, digests = [], []
        for _ in range(args.repeats):
            seconds, d = time_run(scenario.params, cfg, threads, args.block)
            durations.append(seconds)
            digests.append(d)
        rows.append((threads, min(durations), statistics.mean(durations), digests))
        print(f"  {threads} threads: {min(durations):.3f}s")

    if not print_report(rows, cfg, args):
        sys.exit(1)


if __name__ == "__main__":
    try:
        main()
    except KeyboardInterrupt:
        print("\nInterrupted.")
        sys.exit(130)
