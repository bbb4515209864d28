"""Variance changepoints in a series: sd 1, then 2.5, then 1, with time as the covariate.

Uses the command-line runner and reads back its outputs.  Takes a few
minutes at the default chain length.

Run: python3 demos/changepoint_series.py [outdir]
"""

import json
import sys
import tempfile
from pathlib import Path

import numpy as np

from lgpcde.cli import main as cli_main


def main():
    out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp()) / "series"
    code = cli_main(["--scenario", "changepoint_series", "--n", "1500", "--seed", "4", "--out", str(out)])
    if code != 0:
        raise SystemExit(code)
    summary = json.loads((out / "summary.json").read_text())
    print("results in", out)
    print("selected M:", summary["selected"]["M"], " changepoints:", summary["changepoints"], "(truth 500, 1000)")
    order = np.argsort([c[0] for c in summary["selected"]["centers"]])
    for k in order:
        arr = np.loadtxt(out / f"density_region_{k}.csv", delimiter=",", skiprows=1)
        y, mean = arr[:, 0], arr[:, 1]
        dz = y[1] - y[0]
        m1 = np.sum(y * mean) * dz
        sd = np.sqrt(np.sum((y - m1) ** 2 * mean) * dz)
        print(f"region {k}: n={summary['selected']['region_sizes'][k]}, density sd ~ {sd:.2f}")


if __name__ == "__main__":
    main()
