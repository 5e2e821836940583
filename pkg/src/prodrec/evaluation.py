"""Offline next-purchase evaluation under a daily recommendation budget.

For every test day, each purchasing user gets at most K recommended products
built only from purchases strictly before that day (training data plus
earlier test days); a purchase is a hit iff its product is in that set.
Users with no prior history are served cohort-popularity back-fill, counted
in the denominator, and reported separately as the back-fill fraction.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, replace
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .cluster import ClusterModel, TransitionMatrix
from .corpus import GLOBAL_COHORT, CohortKey, Corpus, day_of
from .embedding import EmbeddingModel, UserEmbeddingModel
from .recommend import (
    PopularityModel,
    ScoredProduct,
    build_popularity,
    cluster_recommend,
    copurchase_recommend,
    copurchase_train,
    decayed_daily,
    popular_recommend,
    topk_similar,
    user_recommend,
)


@dataclass
class EvalConfig:
    k: int = 20
    horizon_days: tuple[int, ...] = (1, 3, 7, 15, 30)
    alpha: float = 0.9
    refresh_days: int = 3
    lookback_days: int = 5
    exclude_purchased: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if list(self.horizon_days) != sorted(self.horizon_days):
            raise ValueError("horizon_days must ascend")


@dataclass
class DayResult:
    day: int        # absolute epoch day
    rel_day: int    # 1-based index into the test period
    hits: int
    total: int
    backfilled: int

    @property
    def accuracy(self) -> float:
        return self.hits / self.total if self.total else 0.0


@dataclass
class EvalReport:
    days: list[DayResult]
    horizons: dict[int, float]
    total_hits: int
    total_purchases: int
    backfill_fraction: float

    def day_accuracy(self, rel_day: int) -> float:
        for d in self.days:
            if d.rel_day == rel_day:
                return d.accuracy
        raise KeyError(f"no test purchases on relative day {rel_day}")


class DayRecommender:
    """Recommendation strategy evaluated by `evaluate`.

    `recommend` sees the user's purchase history strictly before `day` and
    must return at most k distinct product ids."""

    def prepare(self, train: Corpus, cohorts: Mapping[int, CohortKey], config: EvalConfig) -> None:
        pass

    def refresh(self, day: int, purchases: Sequence[tuple[int, CohortKey, int]]) -> None:
        """Called once per test day with every purchase observed so far."""

    def recommend(self, user: int, history: Sequence[tuple[int, int]], day: int, k: int) -> Sequence[int]:
        raise NotImplementedError


class _DecayedBase(DayRecommender):
    """Shared consensus logic: per-source base recommendations, decayed."""

    def __init__(self, alpha: float | None = None, exclude_purchased: bool | None = None):
        self._alpha_override = alpha
        self._exclude_override = exclude_purchased
        self._cache: dict[int, list[ScoredProduct]] = {}
        self._k = 0

    def prepare(self, train, cohorts, config):
        self.alpha = self._alpha_override if self._alpha_override is not None else config.alpha
        self.exclude = (
            self._exclude_override
            if self._exclude_override is not None
            else config.exclude_purchased
        )
        self._cache.clear()

    def base(self, query: int, k: int) -> list[ScoredProduct]:
        if k != self._k:
            self._cache.clear()
            self._k = k
        got = self._cache.get(query)
        if got is None:
            got = self._cache[query] = self._base_uncached(query, k)
        return got

    def _base_uncached(self, query: int, k: int) -> list[ScoredProduct]:
        raise NotImplementedError

    def recommend(self, user, history, day, k):
        rec = decayed_daily(history, self.base, day, self.alpha, k, self.exclude)
        return [sp.product for sp in rec.items]


class ItemSimilarityDaily(_DecayedBase):
    """Decayed consensus over nearest-neighbor product recommendations."""

    def __init__(self, model: EmbeddingModel, **kwargs):
        super().__init__(**kwargs)
        self.model = model

    def _base_uncached(self, query, k):
        return topk_similar(self.model, query, k)


class ClusterTransitionDaily(_DecayedBase):
    """Decayed consensus over cluster-diversified recommendations."""

    def __init__(
        self,
        model: EmbeddingModel,
        clusters: ClusterModel,
        transitions: TransitionMatrix,
        top_clusters: int = 3,
        **kwargs,
    ):
        super().__init__(**kwargs)
        self.model = model
        self.clusters = clusters
        self.transitions = transitions
        self.top_clusters = top_clusters

    def _base_uncached(self, query, k):
        items, _ = cluster_recommend(
            self.model, self.clusters, self.transitions, query, k, self.top_clusters
        )
        return items


class CoPurchaseDaily(_DecayedBase):
    """Decayed consensus over next-purchase frequency recommendations."""

    def __init__(self, train_seed: int, **kwargs):
        super().__init__(**kwargs)
        self.train_seed = train_seed
        self.model = None

    def prepare(self, train, cohorts, config):
        super().prepare(train, cohorts, config)
        self.model = copurchase_train(train, self.train_seed)

    def _base_uncached(self, query, k):
        return copurchase_recommend(self.model, query, k)


class UserVectorDaily(DayRecommender):
    """Static per-user list: nearest products to the user vector."""

    def __init__(self, user_model: UserEmbeddingModel):
        self.user_model = user_model
        self._cache: dict[tuple[int, int], list[int]] = {}

    def recommend(self, user, history, day, k):
        got = self._cache.get((user, k))
        if got is None:
            got = [sp.product for sp in user_recommend(self.user_model, user, k)]
            self._cache[(user, k)] = got
        return got


class PopularityDaily(DayRecommender):
    """Cohort popularity with rolling recomputation every refresh_days."""

    def __init__(self, lookback_days: int | None = None, refresh_days: int | None = None):
        self._lookback_override = lookback_days
        self._refresh_override = refresh_days
        self.model: PopularityModel | None = None
        self._last_built: int | None = None

    def prepare(self, train, cohorts, config):
        self.cohorts = cohorts
        self.vocab_size = len(train.vocab)
        self.lookback = (
            self._lookback_override if self._lookback_override is not None else config.lookback_days
        )
        self.cadence = (
            self._refresh_override if self._refresh_override is not None else config.refresh_days
        )
        self.model = None
        self._last_built = None

    def refresh(self, day, purchases):
        if self._last_built is None or day - self._last_built >= self.cadence:
            self.model = build_popularity(purchases, day, self.lookback, self.vocab_size)
            self._last_built = day

    def recommend(self, user, history, day, k):
        cohort = self.cohorts.get(user, GLOBAL_COHORT)
        return [sp.product for sp in popular_recommend(self.model, cohort, k)]


class UniformRandomDaily(DayRecommender):
    """k distinct products uniformly at random per (user, day); the K/P
    calibration floor."""

    def __init__(self, seed: int = 0):
        self.seed = seed

    def prepare(self, train, cohorts, config):
        self.vocab_size = len(train.vocab)

    def recommend(self, user, history, day, k):
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, user, day]))
        return rng.choice(self.vocab_size, size=min(k, self.vocab_size), replace=False).tolist()


class OracleDaily(DayRecommender):
    """Returns the user's actual purchases for the day (calibration ceiling)."""

    def __init__(self, test: Corpus):
        table: dict[tuple[int, int], list[int]] = defaultdict(list)
        for log in test.logs:
            for receipt in log.receipts:
                day = day_of(receipt.timestamp)
                for pid in receipt.products:
                    if pid not in table[(log.user, day)]:
                        table[(log.user, day)].append(pid)
        self.table = dict(table)

    def recommend(self, user, history, day, k):
        return self.table.get((user, day), [])[:k]


def evaluate(
    recommender: DayRecommender,
    train: Corpus,
    test: Corpus,
    cohorts: Mapping[int, CohortKey],
    config: EvalConfig,
    extra_misses_by_day: Mapping[int, int] | None = None,
) -> EvalReport:
    """Per-day accuracy of `recommender` over the test period.

    `extra_misses_by_day` adds purchases that were dropped from the test
    corpus (out-of-vocabulary products) back into the denominators."""
    if train.logs and test.logs:
        train_end = day_of(train.time_range()[1])
        test_start = day_of(test.time_range()[0])
        if test_start <= train_end:
            raise ValueError("train and test time ranges overlap at day granularity")

    histories: dict[int, list[tuple[int, int]]] = defaultdict(list)
    rolling: list[tuple[int, CohortKey, int]] = []
    for log in train.logs:
        cohort = cohorts.get(log.user, GLOBAL_COHORT)
        for receipt in log.receipts:
            day = day_of(receipt.timestamp)
            for pid in receipt.products:
                histories[log.user].append((pid, receipt.timestamp))
                rolling.append((day, cohort, pid))

    by_day: dict[int, list[tuple[int, Sequence[int]]]] = defaultdict(list)
    for log in test.logs:
        for receipt in log.receipts:
            by_day[day_of(receipt.timestamp)].append((log.user, receipt))

    extra = dict(extra_misses_by_day or {})
    all_days = sorted(set(by_day) | set(extra))
    if not all_days:
        raise ValueError("test corpus has no receipts")
    first_day = all_days[0]

    recommender.prepare(train, cohorts, config)
    backfill_model: PopularityModel | None = None
    backfill_built: int | None = None

    days: list[DayResult] = []
    total_hits = total_purchases = total_backfilled = 0
    for day in all_days:
        entries = by_day.get(day, [])
        if entries:
            if backfill_built is None or day - backfill_built >= config.refresh_days:
                backfill_model = build_popularity(rolling, day, config.lookback_days, len(train.vocab))
                backfill_built = day
            recommender.refresh(day, rolling)

        hits = total = backfilled = 0
        recs_by_user: dict[int, set[int]] = {}
        for user, receipt in sorted(entries, key=lambda ur: (ur[0], ur[1].timestamp)):
            history = histories.get(user, [])
            recs = recs_by_user.get(user)
            if recs is None:
                if history:
                    recs = set(list(recommender.recommend(user, history, day, config.k))[: config.k])
                else:
                    cohort = cohorts.get(user, GLOBAL_COHORT)
                    recs = {
                        sp.product
                        for sp in popular_recommend(backfill_model, cohort, config.k)
                    }
                recs_by_user[user] = recs
            if not history:
                backfilled += len(receipt.products)
            hits += sum(1 for pid in receipt.products if pid in recs)
            total += len(receipt.products)

        total += extra.get(day, 0)
        for user, receipt in entries:
            cohort = cohorts.get(user, GLOBAL_COHORT)
            for pid in receipt.products:
                histories[user].append((pid, receipt.timestamp))
                rolling.append((day, cohort, pid))

        days.append(DayResult(day, day - first_day + 1, hits, total, backfilled))
        total_hits += hits
        total_purchases += total
        total_backfilled += backfilled

    horizons: dict[int, float] = {}
    for h in config.horizon_days:
        in_h = [d for d in days if d.rel_day <= h]
        purchases = sum(d.total for d in in_h)
        if purchases:
            horizons[h] = sum(d.hits for d in in_h) / purchases

    return EvalReport(
        days=days,
        horizons=horizons,
        total_hits=total_hits,
        total_purchases=total_purchases,
        backfill_fraction=total_backfilled / total_purchases if total_purchases else 0.0,
    )


def sweep(
    make_recommender: Callable[[EvalConfig], DayRecommender],
    param: str,
    values: Iterable,
    train: Corpus,
    test: Corpus,
    cohorts: Mapping[int, CohortKey],
    config: EvalConfig,
    extra_misses_by_day: Mapping[int, int] | None = None,
) -> list[tuple[object, EvalReport]]:
    """One evaluate run per grid value of an EvalConfig parameter."""
    out = []
    for value in values:
        cfg = replace(config, **{param: value})
        report = evaluate(make_recommender(cfg), train, test, cohorts, cfg, extra_misses_by_day)
        out.append((value, report))
    return out


def write_report(report: EvalReport, stream) -> None:
    for d in report.days:
        stream.write(f"{d.rel_day}\t{d.accuracy:.6f}\t{d.hits}\t{d.total}\n")


def report_summary(report: EvalReport) -> dict:
    return {
        "total_purchases": report.total_purchases,
        "total_hits": report.total_hits,
        "accuracy": report.total_hits / report.total_purchases if report.total_purchases else 0.0,
        "backfill_fraction": report.backfill_fraction,
        "horizons": {str(h): acc for h, acc in report.horizons.items()},
        "days": [
            {"day": d.rel_day, "accuracy": d.accuracy, "hits": d.hits, "total": d.total}
            for d in report.days
        ],
    }
