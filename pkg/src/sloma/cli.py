"""Command-line entry point: generate, split, train, evaluate, compare, coverage.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 training divergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, fields, replace
from pathlib import Path
from typing import Optional

import tomli

from .data import DataError, RatingMatrix, SocialGraph
from .ensemble import THREADS_ENV, default_threads
from .experiment import (BETA_GRID, MODELS, PIPELINE_TRAIN, ModelSpec, compare, evaluate,
                         fit_model, load_fitted, repeats_tsv, save_fitted)
from .factorization import TrainingDiverged
from .ingest import (SplitSpec, SyntheticSpec, filter_cold_start, generate_synthetic,
                     load_edges, load_ratings, load_test, split, write_edges, write_ratings,
                     write_test)
from .llorma import LlormaConfig
from .metrics import score
from .social_local import (COMMUNITY_FILE, HEURISTIC, COMMUNITY, SlomaConfig,
                           build_social_submatrices, coverage)
from .graph import CONNECTOR_VARIANTS

EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 1, 2, 3

log = logging.getLogger("sloma")


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _construction(value: str) -> tuple[str, Optional[str]]:
    if value in (HEURISTIC, COMMUNITY):
        return value, None
    if value.startswith(COMMUNITY_FILE + "="):
        return COMMUNITY_FILE, value.split("=", 1)[1]
    raise argparse.ArgumentTypeError("expected heuristic, community or community-file=PATH")


def _floats(value: str) -> tuple:
    try:
        return tuple(float(x) for x in value.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {value!r}")


def _ints(value: str) -> tuple:
    try:
        return tuple(int(x) for x in value.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of integers: {value!r}")


def _data_flags(p: argparse.ArgumentParser, graph: bool = True) -> None:
    p.add_argument("--data", help="synthetic dataset description (TOML)")
    p.add_argument("--ratings", help="rating file: user<TAB>item<TAB>rating")
    if graph:
        p.add_argument("--edges", help="social edge file: user<TAB>user")
        p.add_argument("--filter-cold-start", action="store_true",
                       help="drop users without friends or with fewer than 5 ratings")


def _model_flags(p: argparse.ArgumentParser) -> None:
    d = PIPELINE_TRAIN
    p.add_argument("--lam", type=float, default=d.lam)
    p.add_argument("--beta", type=float, default=None,
                   help="fixed beta for socreg / sloma++ (disables tuning)")
    p.add_argument("--beta-grid", type=_floats, default=BETA_GRID,
                   help="comma-separated beta values tuned on a validation split")
    p.add_argument("--lr", type=float, default=d.learning_rate)
    p.add_argument("--lr-decay", type=float, default=d.lr_decay)
    p.add_argument("--epochs", type=int, default=d.max_epochs)
    p.add_argument("--tol", type=float, default=d.convergence_tol)
    p.add_argument("--init-scale", type=float, default=None)
    p.add_argument("--no-center", action="store_true",
                   help="fit raw ratings instead of ratings minus their mean")
    p.add_argument("--d1", type=float, default=0.8)
    p.add_argument("--d2", type=float, default=0.8)
    p.add_argument("--bandwidth", type=float, default=0.8)
    p.add_argument("--clamp", action="store_true", help="clip predictions into [1, 5]")
    _social_flags(p)


def _social_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--q", type=int, default=50, help="number of local models / communities")
    p.add_argument("--hops", type=int, default=3)
    p.add_argument("--unsafe-hops", action="store_true", help="allow hops outside [1, 6]")
    p.add_argument("--connector", choices=CONNECTOR_VARIANTS, default="hub")
    p.add_argument("--pool-size", type=int, default=1000)
    p.add_argument("--construction", type=_construction, default=(HEURISTIC, None),
                   help="heuristic, community or community-file=PATH")
    p.add_argument("--social-reg", action="store_true",
                   help="with --model sloma: socially regularize the local models (sloma++)")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=None,
                   help=f"worker threads for local models (default ${THREADS_ENV} or 1)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> Parser:
    parser = Parser(prog="sloma", description="Social local low-rank recommenders and baselines.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=Parser)

    g = sub.add_parser("generate", help="write a synthetic planted-group dataset")
    g.add_argument("--data", help="TOML with synthetic settings (optional)")
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--seed", type=int, default=None, help="overrides the TOML seed")
    g.add_argument("-v", "--verbose", action="store_true")

    s = sub.add_parser("split", help="seeded train/test split of a rating file")
    _data_flags(s, graph=False)
    s.add_argument("--edges", help="also write the edges among users left in train.tsv")
    s.add_argument("--train-fraction", type=float, default=0.8)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("-v", "--verbose", action="store_true")

    t = sub.add_parser("train", help="train one model and save it")
    t.add_argument("--model", required=True, choices=MODELS)
    t.add_argument("--k", type=int, default=PIPELINE_TRAIN.rank)
    _data_flags(t)
    _model_flags(t)
    _common(t)
    t.add_argument("--out", required=True, help="model directory")

    e = sub.add_parser("evaluate", help="score a saved model on a test file")
    e.add_argument("--model-dir", required=True)
    e.add_argument("--ratings", required=True, help="the training ratings the model was fit on")
    e.add_argument("--test", required=True)
    e.add_argument("-v", "--verbose", action="store_true")

    c = sub.add_parser("compare", help="repeated-split comparison table")
    c.add_argument("--models", required=True, help="comma-separated, e.g. regsvd,sloma,sloma++")
    c.add_argument("--k", type=_ints, default=(PIPELINE_TRAIN.rank,),
                   help="rank, or comma-separated ranks")
    c.add_argument("--repeats", type=int, default=5)
    c.add_argument("--train-fraction", type=float, default=0.8)
    c.add_argument("--designated", default=None,
                   help="model whose RMSE reduction is reported (default: last)")
    c.add_argument("--out-dir", default=None, help="also write per-model and combined TSVs here")
    _data_flags(c)
    _model_flags(c)
    _common(c)

    v = sub.add_parser("coverage", help="user and rating coverage of social submatrices")
    _data_flags(v)
    _social_flags(v)
    _common(v)
    return parser


# -- data loading -------------------------------------------------------------

def _read_toml(path) -> dict:
    with open(path, "rb") as fh:
        return tomli.load(fh)


def synthetic_spec(doc: dict, seed: Optional[int] = None) -> SyntheticSpec:
    body = doc.get("synthetic", {k: v for k, v in doc.items() if not isinstance(v, dict)})
    known = {f.name for f in fields(SyntheticSpec)}
    extra = set(body) - known
    if extra:
        raise ValueError(f"unknown synthetic setting(s): {', '.join(sorted(extra))}")
    spec = SyntheticSpec(**body)
    return replace(spec, seed=seed) if seed is not None else spec


def load_data(args, need_graph: bool) -> tuple[RatingMatrix, Optional[SocialGraph], dict]:
    """Ratings and graph from --data (synthetic TOML) or --ratings/--edges."""
    if args.data and getattr(args, "ratings", None):
        raise UsageError("give either --data or --ratings, not both")
    source: dict
    if args.data:
        doc = _read_toml(args.data)
        spec = synthetic_spec(doc)
        ratings, graph, _ = generate_synthetic(spec)
        source = {"synthetic": asdict(spec)}
    elif args.ratings:
        ratings = load_ratings(args.ratings)
        graph = None
        edges = getattr(args, "edges", None)
        if edges:
            graph = load_edges(edges, ratings)
        elif need_graph:
            raise UsageError("this model needs --edges")
        source = {"ratings": args.ratings, "edges": edges}
    else:
        raise UsageError("give --data or --ratings")
    if getattr(args, "filter_cold_start", False):
        if graph is None:
            raise UsageError("--filter-cold-start needs a social graph")
        ratings, graph = filter_cold_start(ratings, graph)
        source["filter_cold_start"] = True
    return ratings, graph, source


# -- spec assembly ------------------------------------------------------------

def model_spec(args, name: str, rank: int) -> ModelSpec:
    if name == "sloma" and getattr(args, "social_reg", False):
        name = "sloma++"
    train_cfg = PIPELINE_TRAIN.with_(rank=rank, lam=args.lam, learning_rate=args.lr,
                                     lr_decay=args.lr_decay, max_epochs=args.epochs,
                                     convergence_tol=args.tol, init_scale=args.init_scale,
                                     center=not args.no_center,
                                     beta=args.beta if args.beta is not None else 0.0)
    kind, path = args.construction
    sloma = SlomaConfig(q=args.q, hops=args.hops, connector=args.connector,
                        pool_size=args.pool_size, construction=kind, community_path=path,
                        social_reg=name == "sloma++", local=train_cfg, seed=args.seed,
                        unsafe_hops=args.unsafe_hops)
    llorma = LlormaConfig(q=args.q, d1=args.d1, d2=args.d2, bandwidth=args.bandwidth,
                          pretrain=train_cfg, local=train_cfg, seed=args.seed)
    grid = () if args.beta is not None else tuple(args.beta_grid)
    label = f"{name}@K{rank}" if getattr(args, "multi_k", False) else name
    return ModelSpec(name, train=train_cfg, sloma=sloma, llorma=llorma, beta_grid=grid,
                     clamp=args.clamp, label=label)


def _threads(args) -> int:
    return args.threads if args.threads is not None else default_threads()


def _echo(config: dict, out_dir: Optional[Path] = None) -> None:
    text = json.dumps(config, indent=1, sort_keys=True, default=str)
    print(text, file=sys.stderr)
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "config.json").write_text(text + "\n")


# -- subcommands --------------------------------------------------------------

def cmd_generate(args) -> int:
    doc = _read_toml(args.data) if args.data else {}
    spec = synthetic_spec(doc, args.seed)
    out = Path(args.out)
    _echo({"command": "generate", "synthetic": asdict(spec)}, out)
    ratings, graph, truth = generate_synthetic(spec)
    write_ratings(out / "ratings.tsv", ratings)
    write_edges(out / "edges.tsv", graph, ratings.user_ids)
    truth.write(out / "groups.tsv", ratings.user_ids)
    print(f"users\t{ratings.num_users}\nitems\t{ratings.num_items}\nratings\t{len(ratings)}\n"
          f"edges\t{graph.num_edges}\nclip_fraction\t{truth.clip_fraction:.6f}")
    return 0


def cmd_split(args) -> int:
    ratings, _, source = load_data(args, need_graph=False)
    spec = SplitSpec(args.train_fraction, seed=args.seed, repeats=1)
    out = Path(args.out)
    _echo({"command": "split", "source": source, "split": asdict(spec)}, out)
    train_part, test = split(ratings, spec)
    write_ratings(out / "train.tsv", train_part)
    write_test(out / "test.tsv", test, ratings.user_ids, ratings.item_ids)
    print(f"train\t{len(train_part)}\ntest\t{len(test)}")
    if args.edges:
        # users whose ratings all went to test vanish from train.tsv, so drop their edges
        graph = load_edges(args.edges, ratings)
        keep = train_part.user_counts() > 0
        e = graph.edges
        e = e[keep[e[:, 0]] & keep[e[:, 1]]] if len(e) else e
        write_edges(out / "edges.tsv", SocialGraph(ratings.num_users, e), ratings.user_ids)
        print(f"edges\t{len(e)}")
    return 0


def cmd_train(args) -> int:
    spec = model_spec(args, args.model, args.k)
    needs_graph = spec.name in ("socreg", "sloma", "sloma++")
    ratings, graph, source = load_data(args, need_graph=needs_graph)
    out = Path(args.out)
    threads = _threads(args)
    _echo({"command": "train", "source": source, "model": spec.to_dict(), "seed": args.seed,
           "threads": threads}, out)
    fitted = fit_model(spec, ratings, graph, seed=args.seed, threads=threads)
    save_fitted(out, fitted)
    pred, fb = fitted.predict(ratings.users, ratings.items)
    m = score(ratings.values, pred, fb)
    print(f"model\t{spec.display}\ntrain_MAE\t{m.mae:.6f}\ntrain_RMSE\t{m.rmse:.6f}")
    if fitted.chosen_beta is not None:
        print(f"beta\t{fitted.chosen_beta:g}")
    return 0


def cmd_evaluate(args) -> int:
    ratings = load_ratings(args.ratings)
    fitted = load_fitted(args.model_dir, ratings)
    test = load_test(args.test, ratings)
    if not test:
        raise DataError(f"{args.test}: no test ratings")
    _echo({"command": "evaluate", "model_dir": args.model_dir, "ratings": args.ratings,
           "test": args.test})
    m = evaluate(fitted, test)
    print("model\tMAE\tRMSE\tn_test\tfallback_fraction")
    print(f"{fitted.spec.display}\t{m.mae:.6f}\t{m.rmse:.6f}\t{m.n_test}\t"
          f"{m.fallback_fraction:.6f}")
    return 0


def cmd_compare(args) -> int:
    names = [x.strip() for x in args.models.split(",") if x.strip()]
    bad = [x for x in names if x not in MODELS]
    if bad:
        raise UsageError(f"unknown model(s): {', '.join(bad)}; choose from {', '.join(MODELS)}")
    args.multi_k = len(args.k) > 1
    specs = [model_spec(args, name, k) for k in args.k for name in names]
    needs_graph = any(s.name in ("socreg", "sloma", "sloma++") for s in specs)
    ratings, graph, source = load_data(args, need_graph=needs_graph)
    split_spec = SplitSpec(args.train_fraction, seed=args.seed, repeats=args.repeats)
    out = Path(args.out_dir) if args.out_dir else None
    # threads are left out of the echo on purpose: they never change results
    _echo({"command": "compare", "source": source, "split": asdict(split_spec),
           "models": [s.to_dict() for s in specs], "designated": args.designated}, out)
    table = compare(specs, ratings, graph, split_spec, args.designated, threads=_threads(args))
    tsv = table.to_tsv()
    sys.stdout.write(tsv)
    if out is not None:
        for spec, rows in zip(table.specs, table.results):
            (out / f"{spec.display}.tsv").write_text(repeats_tsv(rows))
        (out / "comparison.tsv").write_text(tsv)
    return 0


def cmd_coverage(args) -> int:
    ratings, graph, source = load_data(args, need_graph=True)
    kind, path = args.construction
    cfg = SlomaConfig(q=args.q, hops=args.hops, connector=args.connector,
                      pool_size=args.pool_size, construction=kind, community_path=path,
                      seed=args.seed, unsafe_hops=args.unsafe_hops)
    _echo({"command": "coverage", "source": source, "sloma": asdict(cfg)})
    skeletons = build_social_submatrices(ratings, graph, cfg)
    sys.stdout.write(coverage(skeletons, ratings, ratings.num_users).to_tsv())
    return 0


COMMANDS = {"generate": cmd_generate, "split": cmd_split, "train": cmd_train,
            "evaluate": cmd_evaluate, "compare": cmd_compare, "coverage": cmd_coverage}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        if "usage:" not in str(exc):
            parser.print_usage(sys.stderr)
        return EXIT_USAGE
    except TrainingDiverged as exc:
        print(f"sloma: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (DataError, FileNotFoundError, tomli.TOMLDecodeError) as exc:
        print(f"sloma: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        # configuration values rejected by the dataclasses (for example hops out of range)
        print(f"sloma: invalid configuration: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
