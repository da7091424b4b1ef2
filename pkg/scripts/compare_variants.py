"""Reference optimum plus every optimizer variant on the building, then one summary table."""
import argparse
import sys
from pathlib import Path

from trrb import cli

METHODS = (("standard", "lagrangian"), ("standard", "single"), ("semi-ncd", "lagrangian"),
           ("ncd", "lagrangian"), ("qian", "lagrangian"), ("fom-bfgs", "lagrangian"))


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--resolution", type=int, nargs=2, default=[40, 20], metavar=("NX", "NY"))
    parser.add_argument("--seeds", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--tau-foc", default="1e-6")
    parser.add_argument("--output", type=Path, default=Path("results/variants"))
    args = parser.parse_args()
    common = ["--problem", "building", "--resolution", *map(str, args.resolution), "--output", str(args.output)]
    rc = cli.main(["reference", *common])
    if rc != cli.EXIT_OK:
        return rc
    for variant, enrichment in METHODS:
        rc = cli.main(["run", *common, "--variant", variant, "--enrichment", enrichment, "--seeds",
                       str(args.seeds), "--seed", str(args.seed), "--tau-foc", args.tau_foc])
        if rc != cli.EXIT_OK:
            return rc
    shown = ("method", "converged", "iterations_avg", "fom_solves_avg", "rel_error_max", "foc_max", "runtime_avg")
    print(" ".join(f"{c:>20}" for c in shown))
    for path in sorted(args.output.glob("summary_*.csv")):
        for row in cli.read_csv(path):
            print(" ".join(f"{row[c]:>20}" for c in shown))
    return cli.EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
