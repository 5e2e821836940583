"""Batch refresh jobs that rebuild the serving tables from model artifacts.

Each job computes a complete new table and swaps it into its store; readers
are never exposed to a partially refreshed table, and a corrupt artifact
aborts the refresh with the previous version retained.
"""

from __future__ import annotations

from typing import Mapping

from ..cluster import ClusterModel, TransitionMatrix
from ..corpus import CohortKey, Corpus
from ..embedding import EmbeddingModel
from ..recommend import (
    POPULARITY_LIST_SIZE,
    cluster_recommend,
    popular_train,
    topk_similar,
)
from .store import PopularityStore, PredictionStore


def build_prediction_table(
    model: EmbeddingModel,
    fanout: int,
    clusters: ClusterModel | None = None,
    transitions: TransitionMatrix | None = None,
    top_clusters: int = 3,
) -> dict[str, list[tuple[str, float]]]:
    """Per-product top-`fanout` predictions, cluster-diversified when a
    cluster model is supplied."""
    tokens = model.vocab.tokens
    table: dict[str, list[tuple[str, float]]] = {}
    for pid, token in enumerate(tokens):
        if clusters is not None and transitions is not None:
            items, _ = cluster_recommend(model, clusters, transitions, pid, fanout, top_clusters)
        else:
            items = topk_similar(model, pid, fanout)
        table[token] = [(tokens[sp.product], sp.score) for sp in items]
    return table


def refresh_predictions(
    store: PredictionStore,
    source: Mapping[str, list[tuple[str, float]]] | str,
) -> int:
    """Swap a new prediction table in, from an in-memory table or an artifact
    file path; returns the new version."""
    if isinstance(source, str):
        return store.refresh_from_file(source)
    return store.swap_in(dict(source))


def build_popularity_table(
    corpus: Corpus,
    cohorts: Mapping[int, CohortKey],
    computed_at: int,
    lookback_days: int,
    per_cohort: int = POPULARITY_LIST_SIZE,
) -> dict[CohortKey, list[tuple[str, int]]]:
    model = popular_train(corpus, cohorts, computed_at, lookback_days)
    tokens = corpus.vocab.tokens
    return {
        key: [(tokens[pid], count) for pid, count in ranked[:per_cohort]]
        for key, ranked in model.levels.items()
    }


def refresh_popularity(
    store: PopularityStore,
    source: Mapping[CohortKey, list[tuple[str, int]]] | str,
) -> int:
    if isinstance(source, str):
        return store.refresh_from_file(source)
    return store.swap_in(dict(source))
