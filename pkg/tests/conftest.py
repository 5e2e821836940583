"""Shared fixtures: planted-structure corpora and models trained on them.

The heavyweight fixtures are session-scoped so training cost is paid once;
tests that need to measure training time read the recorded duration instead
of retraining.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import pytest

from prodrec.cluster import ClusterModel, TransitionMatrix, estimate_transitions, kmeans_cosine
from prodrec.corpus import Corpus, CohortKey
from prodrec.datagen import GenConfig, GroundTruth, generate
from prodrec.embedding import (
    EmbeddingModel,
    TrainConfig,
    train_bagged_embeddings,
    train_product_embeddings,
)


@dataclass
class PlantedData:
    corpus: Corpus
    cohorts: dict[int, CohortKey]
    truth: GroundTruth
    gen_config: GenConfig


@dataclass
class TimedModel:
    model: EmbeddingModel
    train_seconds: float
    config: TrainConfig


def make_planted(**overrides) -> PlantedData:
    params = dict(
        num_users=1000,
        num_products=200,
        num_groups=10,
        receipts_per_user=(8, 10),
        items_per_receipt=(2, 3),
        within_group_prob=0.9,
        seed=42,
    )
    params.update(overrides)
    cfg = GenConfig(**params)
    result = generate(cfg)
    corpus, cohorts = result.corpus()
    return PlantedData(corpus, cohorts, result.truth, cfg)


@pytest.fixture(scope="session")
def planted() -> PlantedData:
    """1000 users / 200 products / 10 groups, stay-probability 0.9, seed 42."""
    return make_planted()


@pytest.fixture(scope="session")
def small_planted() -> PlantedData:
    return make_planted(num_users=120, num_products=60, num_groups=6, seed=11)


SEQ_TRAIN_CONFIG = TrainConfig(
    dim=32, context=3, negatives=10, epochs=5, subsample_t=0.0, seed=5
)


@pytest.fixture(scope="session")
def seq_model(planted: PlantedData) -> TimedModel:
    """Flat-sequence embeddings on the planted corpus, with wall time."""
    t0 = time.perf_counter()
    model = train_product_embeddings(planted.corpus, SEQ_TRAIN_CONFIG)
    return TimedModel(model, time.perf_counter() - t0, SEQ_TRAIN_CONFIG)


BAGGED_TRAIN_CONFIG = TrainConfig(
    dim=32, context=3, bag_context=1, negatives=10, epochs=5, subsample_t=0.0, seed=5
)


@pytest.fixture(scope="session")
def bagged_model(planted: PlantedData) -> TimedModel:
    t0 = time.perf_counter()
    model = train_bagged_embeddings(planted.corpus, BAGGED_TRAIN_CONFIG)
    return TimedModel(model, time.perf_counter() - t0, BAGGED_TRAIN_CONFIG)


@pytest.fixture(scope="session")
def planted_clusters(seq_model: TimedModel) -> ClusterModel:
    return kmeans_cosine(seq_model.model, 10, max_iters=50, seed=3)


@pytest.fixture(scope="session")
def planted_transitions(
    planted: PlantedData, planted_clusters: ClusterModel, seq_model: TimedModel
) -> TransitionMatrix:
    return estimate_transitions(planted.corpus, planted_clusters, seq_model.config.seed)
