"""Held-out RMSE of SLOMA as the number of local models q grows.

    python3 scripts/vary_local_models.py --qs 1,2,5,10,20,30 --connector hub --hops 3
"""

import argparse

import numpy as np

from sloma.experiment import ModelSpec, run_experiment
from sloma.ingest import SplitSpec, SyntheticSpec, generate_synthetic
from sloma.social_local import SlomaConfig, build_social_submatrices, coverage


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--qs", default="1,2,5,10,20,30")
    p.add_argument("--connector", default="hub")
    p.add_argument("--hops", type=int, default=3)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--social-reg", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()

    ratings, graph, _ = generate_synthetic(SyntheticSpec())
    split_spec = SplitSpec(0.8, seed=args.seed, repeats=args.repeats)
    name = "sloma++" if args.social_reg else "sloma"
    print("q\tmodels\tuser_coverage\trating_coverage\tRMSE\tRMSE_sd")
    for q in (int(x) for x in args.qs.split(",")):
        cfg = SlomaConfig(q=q, hops=args.hops, connector=args.connector)
        skel = build_social_submatrices(ratings, graph, cfg)
        cov = coverage(skel, ratings, ratings.num_users)
        rmse = [m.rmse for m in run_experiment(ratings, graph, ModelSpec(name, sloma=cfg),
                                               split_spec)]
        print(f"{q}\t{len(skel)}\t{cov.user_coverage:.4f}\t{cov.rating_coverage:.4f}\t"
              f"{np.mean(rmse):.4f}\t{np.std(rmse, ddof=1) if len(rmse) > 1 else float('nan'):.4f}")


if __name__ == "__main__":
    main()
