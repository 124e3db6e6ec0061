import argparse
import dataclasses
import sys
from pathlib import Path

import numpy as np
import pandas as pd

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from fluorsqueeze.scenario import load_scenario  # noqa: E402
from fluorsqueeze.spectrum import spectrum_value  # noqa: E402
from fluorsqueeze.trajectories import ensemble_spectrum  # noqa: E402

SCENARIO_DIR = Path("data/scenarios")
DEFAULT_FIXTURES = ["fig1-line1", "fig1-line2"]
MU_RANGE = (-3.0, 3.0)
POINTS = 41
SIGMAS = 3.0
REQUIRED_SHARE = 0.95
OUT_DIR = Path("data/estimates")


def compare(name: str, channel: int | None, trajectories: int | None) -> tuple[pd.DataFrame, float]:
    sc = load_scenario(SCENARIO_DIR / f"{name}.yaml")
    if sc.sme is None:
        raise SystemExit(f"{name}: scenario has no sme section")
    ch = channel or (sc.control.channel if sc.control else 1)
    cfg = sc.sme if trajectories is None else dataclasses.replace(sc.sme, n_traj=trajectories)

    mus = np.linspace(*MU_RANGE, POINTS)
    est = ensemble_spectrum(sc.params, cfg, ch, mus)
    exact = spectrum_value(sc.params, ch, mus)

    df = pd.DataFrame({"mu": mus, "S": exact, "S_hat": est.S, "stderr": est.stderr})
    df["z"] = (df["S_hat"] - df["S"]) / df["stderr"]
    share = float((df["z"].abs() <= SIGMAS).mean())
    return df, share


def main():
    parser = argparse.ArgumentParser(description="Monte Carlo spectrum against the analytic one")
    parser.add_argument("fixtures", nargs="*", default=DEFAULT_FIXTURES)
    parser.add_argument("--channel", type=int, choices=(1, 2), default=None)
    parser.add_argument("-n", "--trajectories", type=int, default=None, help="Override sme.n_traj")
    parser.add_argument("--save", action="store_true", help=f"Write per-fixture tables to {OUT_DIR}/")
    args = parser.parse_args()

    failed = 0
    print("=" * 60)
    print(f"{'Fixture':<14} {'min S':<10} {'min S_hat':<10} {'max |z|':<8} {'within':<8}")
    for name in args.fixtures:
        print(f"Simulating {name} ...", file=sys.stderr)
        df, share = compare(name, args.channel, args.trajectories)
        ok = share >= REQUIRED_SHARE
        failed += not ok
        print(
            f"{name:<14} {df['S'].min():<10.5f} {df['S_hat'].min():<10.5f} "
            f"{df['z'].abs().max():<8.2f} {share * 100:<6.1f}% {'' if ok else ' <-- FAIL'}"
        )
        if args.save:
            OUT_DIR.mkdir(parents=True, exist_ok=True)
            df.to_csv(OUT_DIR / f"{name}.csv", sep=";", index=False, float_format="%.17g")
    print("=" * 60)
    if failed:
        print(f"{failed} fixture(s) below {REQUIRED_SHARE:.0%} within {SIGMAS:g} standard errors")
        sys.exit(1)


if __name__ == "__main__":
    try:
        main()
    except KeyboardInterrupt:
        print("\nInterrupted.")
        sys.exit(130)
