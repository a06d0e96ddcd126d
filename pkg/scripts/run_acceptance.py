#!/usr/bin/env python3
"""
Run the seeded synthetic acceptance scenarios and print one line per check.

Writes the fingers4 result/frontier CSVs to --out-dir so two runs (for
example with different --jobs) can be compared byte for byte.

    python scripts/run_acceptance.py --jobs 4 --out-dir runs/acceptance
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from src.acceptance import (  # noqa: E402
    ACCEPTANCE_SEED,
    TRIALS_PER_CLASS,
    indistinguishable_classes,
    posture_transfer,
    separable_fingers,
)
from src.config import configure_logging  # noqa: E402


def check(name: str, passed: bool, detail: str) -> bool:
    print(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
    return passed


def main() -> int:
    parser = argparse.ArgumentParser(description="Seeded synthetic acceptance scenarios")
    parser.add_argument("--seed", type=int, default=ACCEPTANCE_SEED, help="master seed")
    parser.add_argument("--trials", type=int, default=TRIALS_PER_CLASS, help="trials per class")
    parser.add_argument("--jobs", type=int, default=1, help="worker processes")
    parser.add_argument("--out-dir", type=Path, default=Path("runs/acceptance"), help="CSV output directory")
    parser.add_argument("--log-level", default="WARNING")
    args = parser.parse_args()

    configure_logging(args.log_level)

    fingers = separable_fingers(args.seed, args.trials, args.jobs, args.out_dir)
    chance = indistinguishable_classes(args.seed, args.trials, jobs=args.jobs)
    posture = posture_transfer(args.seed, jobs=args.jobs)

    outcomes = [
        check(
            "separable fingers",
            fingers.best.accuracy >= 0.95,
            f"best subset {list(fingers.best.subset)} accuracy {fingers.best.accuracy:.3f} (>= 0.95)",
        ),
        check(
            "notch ablation",
            fingers.ablation_drop >= 0.10,
            f"accuracy drops {fingers.ablation_drop:.3f} without the notch (>= 0.10)",
        ),
        check(
            "frontier plateau",
            fingers.plateau_spread(4) <= 0.03,
            f"k=5,6 within {fingers.plateau_spread(4):.3f} of k=4 (<= 0.03)",
        ),
        check(
            "identical classes",
            0.35 <= chance.accuracy <= 0.65,
            f"accuracy {chance.accuracy:.3f} (0.35 .. 0.65)",
        ),
        check(
            "posture ordering",
            posture[0] >= posture[90] >= posture[180],
            " >= ".join(f"{angle} deg {acc:.3f}" for angle, acc in posture.items()),
        ),
    ]
    print(f"{sum(outcomes)}/{len(outcomes)} checks passed; CSVs in {args.out_dir}")
    return 0 if all(outcomes) else 1


if __name__ == "__main__":
    raise SystemExit(main())
