"""Ranked product recommendations under a daily budget.

Similarity recommenders (product-to-product, cluster-diversified,
user-to-product), the co-purchase and popularity baselines, and the
time-decayed consensus that merges per-source recommendations into one
daily top-K list. All outputs are deterministic: descending score, ties
broken by ascending product id.
"""

from __future__ import annotations

import random
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Hashable, Iterable, Mapping, Sequence

import numpy as np

from .cluster import ClusterModel, TransitionMatrix
from .corpus import (
    GLOBAL_COHORT,
    CohortKey,
    Corpus,
    day_of,
    flat_products,
)
from .embedding import EmbeddingModel, UserEmbeddingModel

POPULARITY_LIST_SIZE = 100


@dataclass
class ScoredProduct:
    product: Hashable           # product id (or token at the serving layer)
    score: float
    source: Hashable | None = None
    source_time: int | None = None


@dataclass
class DailyRecommendation:
    day: int
    items: list[ScoredProduct]  # <= K, descending score, ties by ascending product


def _ranked(ids: np.ndarray, scores: np.ndarray, k: int) -> list[ScoredProduct]:
    order = np.lexsort((ids, -scores))[:k]
    return [ScoredProduct(int(ids[i]), float(scores[i])) for i in order]


def _unit(matrix: np.ndarray) -> np.ndarray:
    out = matrix.astype(np.float64)
    norms = np.linalg.norm(out, axis=1)
    nz = norms > 0
    out[nz] /= norms[nz, None]
    return out


def _cosine_to(model: EmbeddingModel, query_vec: np.ndarray) -> np.ndarray:
    q = query_vec.astype(np.float64)
    norm = np.linalg.norm(q)
    if norm == 0:
        raise ValueError("query vector has zero norm; cosine undefined")
    return _unit(model.input_vectors) @ (q / norm)


def topk_similar(model: EmbeddingModel, query: int, k: int) -> list[ScoredProduct]:
    """Top-k products by input-vector cosine to `query`, query excluded."""
    if not 0 <= query < len(model.vocab):
        raise KeyError(f"product id {query} not in vocabulary")
    sims = _cosine_to(model, model.input_vectors[query])
    ids = np.arange(len(model.vocab))
    mask = ids != query
    out = _ranked(ids[mask], sims[mask], k)
    for sp in out:
        sp.source = query
    return out


def user_recommend(user_model: UserEmbeddingModel, user: int, k: int) -> list[ScoredProduct]:
    """Top-k products by cosine between the user vector and product vectors."""
    if not 0 <= user < len(user_model.users):
        raise KeyError(f"user id {user} unknown")
    sims = _cosine_to(user_model.products, user_model.user_input[user])
    ids = np.arange(len(user_model.products.vocab))
    out = _ranked(ids, sims, k)
    for sp in out:
        sp.source = user
    return out


def largest_remainder_split(weights: Sequence[float], total: int) -> list[int]:
    """Proportional integer split of `total` by `weights`; largest fractional
    remainders get the leftover units; every positive-weight slot gets >= 1
    (taken from the largest allocations)."""
    w = np.asarray(weights, dtype=np.float64)
    if np.any(w < 0) or w.sum() <= 0:
        raise ValueError("weights must be non-negative with positive sum")
    quota = total * w / w.sum()
    alloc = np.floor(quota).astype(int)
    remainder = quota - alloc
    for i in np.lexsort((np.arange(len(w)), -remainder))[: total - alloc.sum()]:
        alloc[i] += 1
    if total >= len(w):
        while np.any(alloc == 0):
            alloc[int(np.argmax(alloc == 0))] += 1
            alloc[int(np.argmax(alloc))] -= 1
    return alloc.tolist()


def cluster_recommend(
    model: EmbeddingModel,
    clusters: ClusterModel,
    transitions: TransitionMatrix,
    query: int,
    k: int,
    top_clusters: int = 3,
) -> tuple[list[ScoredProduct], bool]:
    """Diversified recommendations: pick the most probable next clusters for
    the query's cluster, split the budget proportionally to their transition
    probabilities, rank within each cluster by cosine to the query.

    Returns (items, fallback) where fallback is True when the query's cluster
    has no transition support and plain top-k similarity was used."""
    if not 0 <= query < len(model.vocab):
        raise KeyError(f"product id {query} not in vocabulary")
    ci = int(clusters.assignment[query])
    if transitions.support_counts[ci] == 0:
        return topk_similar(model, query, k), True

    row = transitions.theta[ci]
    ranked = np.lexsort((np.arange(len(row)), -row))
    selected = [int(c) for c in ranked[:top_clusters] if row[c] > 0]
    budgets = largest_remainder_split([row[c] for c in selected], k)

    sims = _cosine_to(model, model.input_vectors[query])
    ids = np.arange(len(model.vocab))
    picked: list[ScoredProduct] = []
    shortfall = 0
    for c, budget in zip(selected, budgets):
        budget += shortfall
        mask = (clusters.assignment == c) & (ids != query)
        got = _ranked(ids[mask], sims[mask], budget)
        shortfall = budget - len(got)
        picked.extend(got)

    picked.sort(key=lambda sp: (-sp.score, sp.product))
    for sp in picked:
        sp.source = query
    return picked[:k], False


@dataclass
class CoPurchaseModel:
    """F[(p_i, p_j)] = how often p_j was purchased immediately after p_i."""

    counts: dict[tuple[int, int], int]
    total_pairs: int
    seed: int
    _successors: dict[int, list[tuple[int, int]]] = field(default_factory=dict, repr=False)

    def successors(self, query: int) -> list[tuple[int, int]]:
        if not self._successors and self.counts:
            per: dict[int, list[tuple[int, int]]] = defaultdict(list)
            for (a, b), c in self.counts.items():
                per[a].append((b, c))
            for lst in per.values():
                lst.sort(key=lambda pc: (-pc[1], pc[0]))
            self._successors = dict(per)
        return self._successors.get(query, [])


def copurchase_train(corpus: Corpus, seed: int) -> CoPurchaseModel:
    counts: dict[tuple[int, int], int] = defaultdict(int)
    total = 0
    for log in corpus.logs:
        seq = flat_products(log, seed)
        for a, b in zip(seq, seq[1:]):
            counts[(a, b)] += 1
            total += 1
    return CoPurchaseModel(dict(counts), total, seed)


def copurchase_recommend(model: CoPurchaseModel, query: int, k: int) -> list[ScoredProduct]:
    """Top-k by next-purchase frequency; empty when the query has no successors."""
    return [ScoredProduct(p, float(c), source=query) for p, c in model.successors(query)[:k]]


@dataclass
class PopularityModel:
    """Windowed purchase counts at four cohort granularities.

    Each level maps a (partially unknown) CohortKey to a ranked list of
    (product, count), capped at POPULARITY_LIST_SIZE."""

    computed_at: int            # epoch day
    lookback_days: int
    levels: dict[CohortKey, list[tuple[int, int]]]
    vocab_size: int


def popular_train(
    corpus: Corpus,
    cohorts: Mapping[int, CohortKey],
    computed_at: int,
    lookback_days: int,
) -> PopularityModel:
    purchases = (
        (day_of(r.timestamp), cohorts.get(log.user, GLOBAL_COHORT), pid)
        for log in corpus.logs
        for r in log.receipts
        for pid in r.products
    )
    return build_popularity(purchases, computed_at, lookback_days, len(corpus.vocab))


def build_popularity(
    purchases: Iterable[tuple[int, CohortKey, int]],
    computed_at: int,
    lookback_days: int,
    vocab_size: int,
) -> PopularityModel:
    """Popularity model from (day, cohort, product) purchase records restricted
    to the window [computed_at - lookback_days, computed_at)."""
    counts: dict[CohortKey, dict[int, int]] = defaultdict(lambda: defaultdict(int))
    lo = computed_at - lookback_days
    for day, cohort, pid in purchases:
        if not lo <= day < computed_at:
            continue
        for level in cohort.levels():
            counts[level][pid] += 1
    levels = {
        key: sorted(per.items(), key=lambda pc: (-pc[1], pc[0]))[:POPULARITY_LIST_SIZE]
        for key, per in counts.items()
    }
    levels.setdefault(GLOBAL_COHORT, [])
    return PopularityModel(computed_at, lookback_days, levels, vocab_size)


def popular_recommend(
    model: PopularityModel,
    cohort: CohortKey,
    k: int,
    shuffle: random.Random | None = None,
) -> list[ScoredProduct]:
    """Top-k popular products for the cohort, cascading to coarser cohorts
    whenever a level holds fewer than k products, then padding from the
    vocabulary (id-ascending) so exactly min(k, vocab) items come back.
    Pass `shuffle` to randomize the order of the selected items (serving)."""
    chosen: list[tuple[int, int]] | None = None
    for level in cohort.levels():
        candidate = model.levels.get(level, [])
        if len(candidate) >= k:
            chosen = candidate
            break
    if chosen is None:
        chosen = model.levels.get(GLOBAL_COHORT, [])
    items = [ScoredProduct(pid, float(c), source=cohort) for pid, c in chosen[:k]]
    if len(items) < min(k, model.vocab_size):
        have = {sp.product for sp in items}
        for pid in range(model.vocab_size):
            if pid not in have:
                items.append(ScoredProduct(pid, 0.0, source=cohort))
                if len(items) == min(k, model.vocab_size):
                    break
    if shuffle is not None:
        shuffle.shuffle(items)
    return items


BaseRecommender = Callable[[Hashable, int], Sequence[ScoredProduct]]


def decayed_daily(
    history: Sequence[tuple[Hashable, int]],
    base: BaseRecommender,
    day: int,
    alpha: float,
    k: int,
    exclude_purchased: bool = True,
) -> DailyRecommendation:
    """Merge per-source recommendations into one daily list.

    Every history product (purchased at epoch-seconds t_i, strictly before
    `day`) contributes its top-k base recommendations, each discounted by
    alpha ** (whole days between day and t_i); duplicates keep the maximum
    decayed score. Products already purchased are excluded unless disabled."""
    if not history:
        raise ValueError("empty purchase history; back-fill with popularity")
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must be in (0, 1]")
    best: dict[Hashable, ScoredProduct] = {}
    purchased = {p for p, _ in history}
    for source, t_i in history:
        age = day - day_of(t_i)
        if age <= 0:
            raise ValueError(f"history item at day {day_of(t_i)} is not before day {day}")
        decay = alpha**age
        for rec in base(source, k):
            if exclude_purchased and rec.product in purchased:
                continue
            score = rec.score * decay
            cur = best.get(rec.product)
            if cur is None or score > cur.score:
                best[rec.product] = ScoredProduct(rec.product, score, source, t_i)
    items = sorted(best.values(), key=lambda sp: (-sp.score, sp.product))[:k]
    return DailyRecommendation(day, items)
