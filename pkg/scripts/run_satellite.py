"""Satellite temperature run through the command-line pipeline.

The competition dataset is not bundled.  Supply it as a ``lon,lat,value``
CSV in row-major grid order (empty value = missing) plus a grid file holding
the held-out test pixels:

    python3 scripts/run_satellite.py data.csv 300 500 test.grid --out sat

Defaults follow the large-scale configuration: seq filter of radius 2, five
layers, linear trend on (constant, longitude, latitude), normalization to
maximum magnitude 1 and 100k iterations.  Use ``--iterations`` for shorter
trial runs.
"""
import argparse
import os
import sys

from dgmrf.cli import main as cli


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    p.add_argument("csv")
    p.add_argument("height", type=int)
    p.add_argument("width", type=int)
    p.add_argument("test")
    p.add_argument("--out", default="satellite")
    p.add_argument("--iterations", type=int, default=100_000)
    p.add_argument("--layers", type=int, default=5)
    p.add_argument("--seeds", type=int, nargs="+", default=[0])
    args = p.parse_args(argv)

    data = os.path.join(args.out, "data")
    steps = [["convert", f"csv={args.csv}", f"height={args.height}", f"width={args.width}", f"out={data}"]]
    preds = []
    for seed in args.seeds:
        run = os.path.join(args.out, f"run{seed}")
        summary = os.path.join(args.out, f"summary{seed}")
        steps.append(["train", f"data={data}/obs.grid", f"covariates={data}/covariates.grid", "trend=1",
                      "filter=seq", "radius=2", f"layers={args.layers}", f"iterations={args.iterations}",
                      "normalize=1", f"seed={seed}", f"out={run}"])
        steps.append(["infer", f"checkpoint={run}/checkpoint.txt", f"data={data}/obs.grid",
                      f"covariates={data}/covariates.grid", f"seed={seed}", f"out={summary}"])
        preds.append(summary)
    steps.append(["eval", f"test={args.test}", "pred=" + ",".join(preds), f"out={args.out}/scores.csv",
                  f"model=dgmrf-seq5x5-L{args.layers}"])

    for argv_ in steps:
        print("dgmrf", " ".join(argv_), flush=True)
        code = cli(argv_)
        if code:
            return code
    print(open(os.path.join(args.out, "scores.csv")).read())
    return 0


if __name__ == "__main__":
    sys.exit(main())
