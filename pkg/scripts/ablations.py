"""Full CAGED against its w/o-TS, w/o-UC and w/o-MU variants, averaged over seeds."""
import argparse
from collections import defaultdict

import numpy as np

from caged.experiments import DESK_SEEDS, desk_seed

VARIANTS = ("caged", "wo-ts", "wo-uc", "wo-mu")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, nargs="+", default=list(DESK_SEEDS))
    args = ap.parse_args()

    scores = defaultdict(list)
    for seed in args.seeds:
        o = desk_seed(seed, VARIANTS)
        for v in VARIANTS:
            rep = o.reports[v]
            scores[v].append((np.nan, np.nan) if rep is None else
                             (rep.recall["all"], rep.recall["niche"]))
    print("variant  all-R@20  niche-R@20  diverged")
    for v in VARIANTS:
        arr = np.array(scores[v])
        print(f"{v:8s} {np.nanmean(arr[:, 0]):.4f}    {np.nanmean(arr[:, 1]):.4f}      "
              f"{int(np.isnan(arr[:, 0]).sum())}")


if __name__ == "__main__":
    main()
