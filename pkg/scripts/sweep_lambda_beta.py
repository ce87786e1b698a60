"""Grid over the ELBO weights lambda and beta on one desk seed.

Reports niche and all-items Recall@20 for each (lambda, beta) cell next to the
vanilla backbone trained with the same budget.
"""
import argparse
import itertools
from dataclasses import replace

import numpy as np

from caged.experiments import DESK_CONFIG, desk_dataset, run_variant


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--grid", type=float, nargs="+",
                    default=[round(x, 1) for x in np.arange(0, 1.41, 0.2)])
    ap.add_argument("--max-epochs", type=int, default=DESK_CONFIG.max_epochs)
    args = ap.parse_args()

    ds = desk_dataset(args.seed)
    base = replace(DESK_CONFIG, seed=args.seed, max_epochs=args.max_epochs)
    v = run_variant(base, ds, "vanilla").test_report
    print(f"vanilla niche {v.recall['niche']:.4f} all {v.recall['all']:.4f}")
    print("lambda beta niche all updates")
    for lam, beta in itertools.product(args.grid, args.grid):
        res = run_variant(replace(base, lam=lam, beta=beta), ds, "caged")
        r = res.test_report
        print(f"{lam:.1f} {beta:.1f} {r.recall['niche']:.4f} {r.recall['all']:.4f} "
              f"{len(res.state.update_log)}", flush=True)


if __name__ == "__main__":
    main()
