"""Command-line umbrella: gen | train | cluster | recommend | evaluate | serve.

Every subcommand is a thin client over the library; `--config FILE` loads
JSON overrides for the defaults (print them with `--dump-config`).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from . import cluster as cluster_mod
from . import corpus as corpus_mod
from . import datagen as datagen_mod
from . import embedding as embedding_mod
from . import evaluation as eval_mod
from . import recommend as rec_mod
from .config import AppConfig, dump_config, load_config
from .corpus import GLOBAL_COHORT, SECONDS_PER_DAY, CohortKey
from .serve import (
    PopularityStore,
    PredictionStore,
    ProfileStore,
    RecommendEngine,
    build_popularity_table,
    build_prediction_table,
    refresh_popularity,
    refresh_predictions,
)
from .serve.app import create_app, parse_date


def _read_lines(path: str) -> list[str]:
    with open(path, "r", encoding="utf-8") as fh:
        return fh.readlines()


def _load_corpus(args, cfg: AppConfig):
    receipts = _read_lines(args.input)
    cohort_lines = _read_lines(args.cohorts) if getattr(args, "cohorts", None) else None
    raw, cohorts = corpus_mod.parse_logs(receipts, cohort_lines)
    vocab = corpus_mod.build_vocabulary(raw, cfg.corpus.min_count, cfg.corpus.min_price)
    return corpus_mod.apply_vocabulary(raw, vocab), cohorts


def _parse_range(text: str) -> tuple[int, int]:
    lo, _, hi = text.partition(":")
    return (int(lo), int(hi or lo))


def cmd_gen(args, cfg: AppConfig) -> int:
    d = cfg.datagen
    gen_cfg = datagen_mod.GenConfig(
        num_users=args.users if args.users is not None else d.num_users,
        num_products=args.products if args.products is not None else d.num_products,
        num_groups=args.groups if args.groups is not None else d.num_groups,
        receipts_per_user=_parse_range(args.receipts) if args.receipts else (d.receipts_lo, d.receipts_hi),
        items_per_receipt=_parse_range(args.items) if args.items else (d.items_lo, d.items_hi),
        within_group_prob=args.within_group_prob if args.within_group_prob is not None else d.within_group_prob,
        cohort_boost=args.cohort_boost if args.cohort_boost is not None else d.cohort_boost,
        within_group_skew=args.skew if args.skew is not None else d.within_group_skew,
        popularity_drift_days=args.drift_days if args.drift_days is not None else d.popularity_drift_days,
        start_day=d.start_day,
        seed=args.seed if args.seed is not None else d.seed,
    )
    result = datagen_mod.generate(gen_cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "receipts.tsv").write_text("\n".join(result.receipt_lines) + "\n", encoding="utf-8")
    (out / "cohorts.tsv").write_text("\n".join(result.cohort_lines) + "\n", encoding="utf-8")
    with open(out / "truth_groups.tsv", "w", encoding="utf-8") as groups_fh, open(
        out / "truth_transitions.tsv", "w", encoding="utf-8"
    ) as trans_fh:
        datagen_mod.write_truth(result.truth, groups_fh, trans_fh)
    print(f"wrote {len(result.receipt_lines)} receipts for {gen_cfg.num_users} users to {out}")
    return 0


def _train_config(args, cfg: AppConfig) -> embedding_mod.TrainConfig:
    t = cfg.train
    overrides = {
        name: getattr(args, name)
        for name in (
            "dim", "context", "bag_context", "negatives", "epochs",
            "initial_lr", "final_lr", "subsample_t", "workers", "seed",
        )
        if getattr(args, name, None) is not None
    }
    if args.directed != "auto":
        overrides["directed"] = args.directed == "true"
    return dataclasses.replace(t, **overrides)


def cmd_train(args, cfg: AppConfig) -> int:
    corpus, _ = _load_corpus(args, cfg)
    train_cfg = _train_config(args, cfg)
    if args.method == "copurchase":
        model = rec_mod.copurchase_train(corpus, train_cfg.seed)
        with open(args.model_out, "w", encoding="utf-8") as fh:
            for (a, b), c in sorted(model.counts.items()):
                fh.write(f"{corpus.vocab.tokens[a]}\t{corpus.vocab.tokens[b]}\t{c}\n")
    elif args.method == "user":
        user_model = embedding_mod.train_user_embeddings(corpus, train_cfg)
        embedding_mod.save_user_model(user_model, args.model_out)
    else:
        train = (
            embedding_mod.train_bagged_embeddings
            if args.method == "bagged"
            else embedding_mod.train_product_embeddings
        )
        init = embedding_mod.load_model(args.init_model, train_cfg) if args.init_model else None
        model = train(corpus, train_cfg, init=init)
        embedding_mod.save_model(model, args.model_out)
    if args.vocab_out:
        with open(args.vocab_out, "w", encoding="utf-8") as fh:
            corpus_mod.write_vocabulary(corpus.vocab, fh)
    print(f"trained {args.method} model on {corpus.num_purchases()} purchases -> {args.model_out}")
    return 0


def cmd_cluster(args, cfg: AppConfig) -> int:
    corpus, _ = _load_corpus(args, cfg)
    model = embedding_mod.load_model(args.model)
    if model.vocab.tokens != corpus.vocab.tokens:
        raise SystemExit("model vocabulary does not match the corpus")
    clusters = cluster_mod.kmeans_cosine(
        model,
        args.clusters if args.clusters is not None else cfg.cluster.num_clusters,
        max_iters=cfg.cluster.max_iters,
        seed=args.seed if args.seed is not None else cfg.cluster.seed,
    )
    transitions = cluster_mod.estimate_transitions(corpus, clusters, cfg.train.seed)
    with open(args.out, "w", encoding="utf-8") as fh:
        cluster_mod.write_clusters(clusters, corpus.vocab.tokens, fh)
    with open(args.transitions_out, "w", encoding="utf-8") as fh:
        cluster_mod.write_transitions(transitions, fh)
    print(f"{clusters.num_clusters} clusters -> {args.out}; transitions -> {args.transitions_out}")
    return 0


def _print_items(items) -> None:
    for rank, sp in enumerate(items, start=1):
        src = "" if sp.source is None else str(sp.source)
        print(f"{rank}\t{sp.product}\t{sp.score:.6f}\t{src}")


def _tokens_to_items(items, tokens):
    for sp in items:
        sp.product = tokens[sp.product]
        if isinstance(sp.source, int):
            sp.source = tokens[sp.source]
    return items


def cmd_recommend(args, cfg: AppConfig) -> int:
    k = args.k if args.k is not None else cfg.recommend.k
    alpha = args.alpha if args.alpha is not None else cfg.recommend.alpha
    top_clusters = args.top_clusters if args.top_clusters is not None else cfg.recommend.top_clusters

    if args.method == "popular":
        corpus, cohorts = _load_corpus(args, cfg)
        day = parse_date(args.date) if args.date else corpus_mod.day_of(corpus.time_range()[1]) + 1
        lookback = args.lookback if args.lookback is not None else cfg.evaluate.lookback_days
        model = rec_mod.popular_train(corpus, cohorts, day, lookback)
        cohort = GLOBAL_COHORT
        if args.user:
            cohort = cohorts.get(corpus.users.index.get(args.user, -1), GLOBAL_COHORT)
        items = rec_mod.popular_recommend(model, cohort, k)
        _print_items(_tokens_to_items(items, corpus.vocab.tokens))
        return 0

    if args.method == "user":
        user_model = embedding_mod.load_user_model(args.model)
        if args.user not in user_model.users.index:
            raise SystemExit(f"user {args.user!r} has no trained vector")
        items = rec_mod.user_recommend(user_model, user_model.users.id_of(args.user), k)
        _print_items(_tokens_to_items(items, user_model.products.vocab.tokens))
        return 0

    if args.method == "copurchase":
        corpus, _ = _load_corpus(args, cfg)
        model = rec_mod.copurchase_train(corpus, cfg.train.seed)
        base = lambda pid, n: rec_mod.copurchase_recommend(model, pid, n)
        vocab = corpus.vocab
    else:
        emb = embedding_mod.load_model(args.model)
        vocab = emb.vocab
        if args.method == "cluster":
            with open(args.clusters_file, "r", encoding="utf-8") as fh:
                assignment = cluster_mod.read_clusters(fh, vocab.index)
            with open(args.transitions, "r", encoding="utf-8") as fh:
                transitions = cluster_mod.read_transitions(fh)
            clusters = cluster_mod.ClusterModel(assignment, None, [])
            base = lambda pid, n: rec_mod.cluster_recommend(
                emb, clusters, transitions, pid, n, top_clusters
            )[0]
        else:
            base = lambda pid, n: rec_mod.topk_similar(emb, pid, n)

    if args.product:
        if args.product not in vocab.index:
            raise SystemExit(f"product {args.product!r} not in vocabulary")
        items = base(vocab.id_of(args.product), k)
        _print_items(_tokens_to_items(items, vocab.tokens))
        return 0

    if not args.user or not args.date:
        raise SystemExit("need --product, or --user with --date")
    corpus, _ = _load_corpus(args, cfg)
    day = parse_date(args.date)
    uid = corpus.users.index.get(args.user)
    if uid is None:
        raise SystemExit(f"user {args.user!r} not in the receipt log")
    history = [
        (pid, r.timestamp)
        for log in corpus.logs
        if log.user == uid
        for r in log.receipts
        if corpus_mod.day_of(r.timestamp) < day
        for pid in r.products
    ]
    if not history:
        raise SystemExit(f"user {args.user!r} has no purchases before {args.date}")
    rec = rec_mod.decayed_daily(history, base, day, alpha, k, cfg.recommend.exclude_purchased)
    _print_items(_tokens_to_items(rec.items, vocab.tokens))
    return 0


def _eval_recommender(args, cfg: AppConfig, train_corpus, method: str):
    if method == "topk":
        return eval_mod.ItemSimilarityDaily(embedding_mod.load_model(args.model))
    if method == "cluster":
        emb = embedding_mod.load_model(args.model)
        with open(args.clusters_file, "r", encoding="utf-8") as fh:
            assignment = cluster_mod.read_clusters(fh, emb.vocab.index)
        with open(args.transitions, "r", encoding="utf-8") as fh:
            transitions = cluster_mod.read_transitions(fh)
        clusters = cluster_mod.ClusterModel(assignment, None, [])
        return eval_mod.ClusterTransitionDaily(
            emb, clusters, transitions, cfg.recommend.top_clusters
        )
    if method == "user":
        return eval_mod.UserVectorDaily(embedding_mod.load_user_model(args.model))
    if method == "copurchase":
        return eval_mod.CoPurchaseDaily(cfg.train.seed)
    if method == "popular":
        return eval_mod.PopularityDaily()
    if method == "random":
        return eval_mod.UniformRandomDaily(cfg.evaluate.seed)
    raise SystemExit(f"unknown method {method!r}")


def cmd_evaluate(args, cfg: AppConfig) -> int:
    receipts = _read_lines(args.input)
    cohort_lines = _read_lines(args.cohorts) if args.cohorts else None
    raw, cohorts = corpus_mod.parse_logs(receipts, cohort_lines)
    cutoff = parse_date(args.cutoff) * SECONDS_PER_DAY
    train_raw, test_raw = corpus_mod.split_by_time(raw, cutoff)
    vocab = corpus_mod.build_vocabulary(train_raw, cfg.corpus.min_count, cfg.corpus.min_price)
    train = corpus_mod.apply_vocabulary(train_raw, vocab)
    test = corpus_mod.apply_vocabulary(test_raw, vocab)
    extra = corpus_mod.dropped_purchases_by_day(test_raw, vocab)

    eval_cfg = cfg.evaluate
    if args.k is not None:
        eval_cfg = dataclasses.replace(eval_cfg, k=args.k)
    if args.alpha is not None:
        eval_cfg = dataclasses.replace(eval_cfg, alpha=args.alpha)

    if args.sweep:
        param, _, values_str = args.sweep.partition("=")
        if param not in {"alpha", "lookback_days", "refresh_days"}:
            raise SystemExit("--sweep supports alpha, lookback_days, refresh_days")
        cast = float if param == "alpha" else int
        values = [cast(v) for v in values_str.split(",")]
        results = eval_mod.sweep(
            lambda c: _eval_recommender(args, cfg, train, args.method),
            param,
            values,
            train,
            test,
            cohorts,
            eval_cfg,
            extra,
        )
        print(f"{param}\tday\taccuracy\thits\ttotal")
        for value, report in results:
            for d in report.days:
                print(f"{value}\t{d.rel_day}\t{d.accuracy:.6f}\t{d.hits}\t{d.total}")
        return 0

    report = eval_mod.evaluate(
        _eval_recommender(args, cfg, train, args.method), train, test, cohorts, eval_cfg, extra
    )
    with open(args.report, "w", encoding="utf-8") as fh:
        eval_mod.write_report(report, fh)
    summary = eval_mod.report_summary(report)
    if args.summary:
        with open(args.summary, "w", encoding="utf-8") as fh:
            json.dump(summary, fh, indent=2)
    print(json.dumps({k: v for k, v in summary.items() if k != "days"}, indent=2))
    return 0


def cmd_serve(args, cfg: AppConfig) -> int:
    from .serve import ManualClock, StoreClock

    data_dir = Path(args.data_dir)
    corpus = cohorts = None
    if args.input:
        corpus, cohorts = _load_corpus(args, cfg)

    # Profiles loaded from a historical log only make sense against corpus
    # time, so pin the TTL clock there unless told otherwise.
    if args.clock_day is not None:
        clock: StoreClock = ManualClock(parse_date(args.clock_day) * SECONDS_PER_DAY)
    elif corpus is not None:
        clock = ManualClock((corpus_mod.day_of(corpus.time_range()[1]) + 1) * SECONDS_PER_DAY)
    else:
        clock = StoreClock()

    profiles = ProfileStore(data_dir / "profiles", clock=clock, ttl_days=cfg.serve.ttl_days)
    predictions = PredictionStore(data_dir / "predictions")
    popularity = PopularityStore(data_dir / "popularity")

    cohorts_by_token: dict[str, CohortKey] = {}
    if corpus is not None:
        cohorts_by_token = {
            corpus.users.tokens[uid]: key for uid, key in cohorts.items()
        }
        if args.model:
            emb = embedding_mod.load_model(args.model)
            clusters = transitions = None
            if args.clusters_file and args.transitions:
                with open(args.clusters_file, "r", encoding="utf-8") as fh:
                    assignment = cluster_mod.read_clusters(fh, emb.vocab.index)
                with open(args.transitions, "r", encoding="utf-8") as fh:
                    transitions = cluster_mod.read_transitions(fh)
                clusters = cluster_mod.ClusterModel(assignment, None, [])
            table = build_prediction_table(
                emb, cfg.serve.prediction_fanout, clusters, transitions, cfg.recommend.top_clusters
            )
            refresh_predictions(predictions, table)
        computed_at = corpus_mod.day_of(corpus.time_range()[1]) + 1
        refresh_popularity(
            popularity,
            build_popularity_table(
                corpus, cohorts, computed_at, cfg.serve.popularity_lookback_days,
                cfg.serve.popularity_per_cohort,
            ),
        )
        for log in corpus.logs:
            profiles.put(
                corpus.users.tokens[log.user],
                [
                    (corpus.vocab.tokens[pid], r.timestamp)
                    for r in log.receipts
                    for pid in r.products
                ],
            )

    engine = RecommendEngine(
        profiles, predictions, popularity, cohorts_by_token,
        k=cfg.recommend.k, alpha=cfg.recommend.alpha,
    )
    app = create_app(engine)
    import uvicorn

    host = args.host if args.host else cfg.serve.host
    port = args.port if args.port is not None else cfg.serve.port
    uvicorn.run(app, host=host, port=port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="prodrec")
    parser.add_argument("--config", metavar="FILE", help="JSON config overriding defaults")
    parser.add_argument("--dump-config", action="store_true", help="print the defaults and exit")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("gen", help="generate a synthetic receipt corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--users", type=int)
    p.add_argument("--products", type=int)
    p.add_argument("--groups", type=int)
    p.add_argument("--receipts", metavar="LO:HI")
    p.add_argument("--items", metavar="LO:HI")
    p.add_argument("--within-group-prob", type=float)
    p.add_argument("--cohort-boost", type=float)
    p.add_argument("--skew", type=float)
    p.add_argument("--drift-days", type=int)
    p.add_argument("--seed", type=int)

    p = sub.add_parser("train", help="train an embedding or co-purchase model")
    p.add_argument("--input", required=True)
    p.add_argument("--cohorts")
    p.add_argument("--method", choices=["sequence", "bagged", "user", "copurchase"], default="bagged")
    p.add_argument("--model-out", required=True)
    p.add_argument("--vocab-out")
    p.add_argument("--init-model")
    p.add_argument("--dim", type=int)
    p.add_argument("--context", type=int)
    p.add_argument("--bag-context", type=int)
    p.add_argument("--negatives", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--initial-lr", type=float)
    p.add_argument("--final-lr", type=float)
    p.add_argument("--subsample-t", type=float)
    p.add_argument("--directed", choices=["auto", "true", "false"], default="auto")
    p.add_argument("--workers", type=int)
    p.add_argument("--seed", type=int)

    p = sub.add_parser("cluster", help="cluster a model and estimate transitions")
    p.add_argument("--input", required=True)
    p.add_argument("--cohorts")
    p.add_argument("--model", required=True)
    p.add_argument("--clusters", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--transitions-out", required=True)
    p.add_argument("--seed", type=int)

    p = sub.add_parser("recommend", help="print a TSV of ranked recommendations")
    p.add_argument("--method", choices=["topk", "cluster", "user", "copurchase", "popular"], required=True)
    p.add_argument("--model")
    p.add_argument("--clusters", dest="clusters_file")
    p.add_argument("--transitions")
    p.add_argument("--input")
    p.add_argument("--cohorts")
    p.add_argument("--k", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--top-clusters", type=int)
    p.add_argument("--lookback", type=int)
    p.add_argument("--user")
    p.add_argument("--product")
    p.add_argument("--date")

    p = sub.add_parser("evaluate", help="offline per-day accuracy over a held-out period")
    p.add_argument("--input", required=True)
    p.add_argument("--cohorts")
    p.add_argument("--cutoff", required=True, help="first test day (ISO date or epoch day)")
    p.add_argument("--method", choices=["topk", "cluster", "user", "copurchase", "popular", "random"], required=True)
    p.add_argument("--model")
    p.add_argument("--clusters", dest="clusters_file")
    p.add_argument("--transitions")
    p.add_argument("--k", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--report", required=True)
    p.add_argument("--summary")
    p.add_argument("--sweep", metavar="PARAM=V1,V2,...")

    p = sub.add_parser("serve", help="run the HTTP recommendation service")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--clock-day", help="pin the TTL clock to this day (for historical data)")
    p.add_argument("--input")
    p.add_argument("--cohorts")
    p.add_argument("--model")
    p.add_argument("--clusters", dest="clusters_file")
    p.add_argument("--transitions")
    p.add_argument("--host")
    p.add_argument("--port", type=int)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.dump_config:
        print(dump_config())
        return 0
    if not args.command:
        parser.print_help()
        return 2
    cfg = load_config(args.config)
    handler = {
        "gen": cmd_gen,
        "train": cmd_train,
        "cluster": cmd_cluster,
        "recommend": cmd_recommend,
        "evaluate": cmd_evaluate,
        "serve": cmd_serve,
    }[args.command]
    try:
        return handler(args, cfg)
    except (corpus_mod.LogParseError, corpus_mod.EmptyVocabularyError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
