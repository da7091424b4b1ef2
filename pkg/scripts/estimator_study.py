"""Greedy estimator study on the building; prints the decay slopes of each error against the primal estimate."""
import argparse
import sys
from pathlib import Path

from trrb import cli


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--resolution", type=int, nargs=2, default=[20, 10], metavar=("NX", "NY"))
    parser.add_argument("--max-extensions", type=int, default=10)
    parser.add_argument("--output", type=Path, default=Path("results/estimator_study"))
    args = parser.parse_args()
    rc = cli.main(["estimator-study", "--problem", "building", "--resolution", *map(str, args.resolution),
                   "--tau-j", "1e-12", "--tau-grad", "1e-12", "--max-extensions", str(args.max_extensions),
                   "--output", str(args.output)])
    if rc != cli.EXIT_OK:
        return rc
    for row in cli.read_csv(args.output / "estimator_study_slopes.csv"):
        print(f"{row['quantity']:>20} {row['slope_vs_est_pr']}")
    return cli.EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
