"""Run the evaluation sweep for each model kind and print the aggregate tables side by side."""

import argparse
import logging
from pathlib import Path

from depthattr.harness import SweepConfig, run_sweep
from depthattr.metrics import aggregates_to_csv


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", type=Path, default=Path(__file__).parent.parent / "configs" / "sweep_default.json")
    ap.add_argument("--out", type=Path, default=Path("runs"))
    ap.add_argument("--kinds", nargs="+", default=["attention", "conv"])
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")

    for kind in args.kinds:
        cfg = SweepConfig.from_file(args.config, {"model_kind": kind, "output_dir": str(args.out / kind)})
        result = run_sweep(cfg)
        print(f"# {kind}: {len(result.records)} records, {len(result.failures)} failures")
        for note in result.skipped:
            print(f"# {note}")
        print(aggregates_to_csv(result.cells))


if __name__ == "__main__":
    main()
