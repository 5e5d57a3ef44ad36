"""Compare every model on the planted-group benchmark and print the TSV table.

    python3 scripts/run_benchmark.py --repeats 5 --q 5 --connector greedy --hops 2
"""

import argparse
import sys
import time
from dataclasses import replace

from sloma.experiment import MODELS, PIPELINE_TRAIN, ModelSpec, compare
from sloma.ingest import SplitSpec, SyntheticSpec, generate_synthetic
from sloma.llorma import LlormaConfig
from sloma.social_local import SlomaConfig


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--models", default="mean,regsvd,socreg,llorma,sloma,sloma++")
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--k", type=int, default=PIPELINE_TRAIN.rank)
    p.add_argument("--q", type=int, default=5)
    p.add_argument("--hops", type=int, default=2)
    p.add_argument("--connector", default="greedy")
    p.add_argument("--llorma-q", type=int, default=50)
    p.add_argument("--data-seed", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    args = p.parse_args()

    ratings, graph, _ = generate_synthetic(SyntheticSpec(seed=args.data_seed))
    train = PIPELINE_TRAIN.with_(rank=args.k)
    local = SlomaConfig(q=args.q, hops=args.hops, connector=args.connector)
    names = [x for x in args.models.split(",") if x]
    for name in names:
        if name not in MODELS:
            p.error(f"unknown model {name!r}")
    specs = [ModelSpec(n, train=train, sloma=local, llorma=LlormaConfig(q=args.llorma_q))
             for n in names]
    t0 = time.perf_counter()
    table = compare(specs, ratings, graph, SplitSpec(0.8, seed=args.seed, repeats=args.repeats),
                    threads=args.threads)
    sys.stdout.write(table.to_tsv())
    for spec, rows in zip(table.specs, table.results):
        print(f"# {spec.display}: " + " ".join(f"{m.rmse:.4f}" for m in rows), file=sys.stderr)
    print(f"# {time.perf_counter() - t0:.1f}s", file=sys.stderr)


if __name__ == "__main__":
    main()
