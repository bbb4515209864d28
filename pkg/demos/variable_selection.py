"""Piecewise regression with an irrelevant covariate.

The response is flat for x1 < 2.5 and quadratic above; x2 is noise.  The
sampler should place its boundary near x1 = 2.5 and drive the weight on x2
towards zero.  Above 2.5 the mean rises steeply relative to the noise, so
the sampler slices that part finely (often up to the maximum number of
regions) while the flat part stays a single region.  A shortened chain keeps the demo to a couple of minutes.

Run: python3 demos/variable_selection.py
"""

import numpy as np

from lgpcde import McmcConfig, assign_regions, run_chain, select_best, simulate, weight_report
from lgpcde.posterior import axis_changepoints


def main():
    data = simulate("piecewise", 1000, seed=3)
    chain = run_chain(data, McmcConfig(n_iters=2500, burn_in=500, seed=3))
    print("posterior of M:", {m: round(p, 3) for m, p in chain.M_distribution().items()})
    print("acceptance rates:", {k: round(v, 3) for k, v in chain.acceptance_rates.items()})
    tess, fits = select_best(chain, data)
    print(f"selected M={tess.M}, weights (x1, x2) = {np.round(tess.w, 4).tolist()}")
    print("boundaries along x1:", np.round(axis_changepoints(tess, data, axis=0), 2).tolist())
    print("posterior mean weights:", np.round(weight_report(chain)["traces"].mean(axis=0), 4).tolist())
    labels = assign_regions(data, tess).labels
    x1 = data.original_x()[:, 0]
    for k in range(tess.M):
        sel = labels == k
        print(f"region {k}: n={sel.sum():4d}, x1 in [{x1[sel].min():.2f}, {x1[sel].max():.2f}]")


if __name__ == "__main__":
    main()
