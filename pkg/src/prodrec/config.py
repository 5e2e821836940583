"""Application configuration: every knob with its default, JSON-overridable.

A config file is a JSON object with any subset of the sections below; values
it supplies override the defaults, CLI flags override both.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .embedding import TrainConfig
from .evaluation import EvalConfig


@dataclass
class CorpusConfig:
    min_count: int = 1
    min_price: float = 0.0


@dataclass
class ClusterConfig:
    num_clusters: int = 100
    max_iters: int = 50
    seed: int = 0


@dataclass
class RecommendConfig:
    k: int = 20
    alpha: float = 0.9
    top_clusters: int = 3
    exclude_purchased: bool = True


@dataclass
class ServeConfig:
    ttl_days: int = 60
    prediction_fanout: int = 20
    popularity_per_cohort: int = 100
    model_refresh_days: int = 5
    popularity_refresh_days: int = 3
    popularity_lookback_days: int = 5
    host: str = "127.0.0.1"
    port: int = 8080


@dataclass
class DatagenConfig:
    num_users: int = 1000
    num_products: int = 200
    num_groups: int = 10
    receipts_lo: int = 6
    receipts_hi: int = 12
    items_lo: int = 1
    items_hi: int = 4
    within_group_prob: float = 0.9
    cohort_boost: float = 1.0
    within_group_skew: float = 0.0
    popularity_drift_days: int = 0
    start_day: int = 0
    seed: int = 42


@dataclass
class AppConfig:
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    cluster: ClusterConfig = field(default_factory=ClusterConfig)
    recommend: RecommendConfig = field(default_factory=RecommendConfig)
    evaluate: EvalConfig = field(default_factory=EvalConfig)
    serve: ServeConfig = field(default_factory=ServeConfig)
    datagen: DatagenConfig = field(default_factory=DatagenConfig)


def _merge(obj, overrides: dict):
    kwargs = {}
    for f in dataclasses.fields(obj):
        if f.name in overrides:
            value = overrides[f.name]
            if f.name == "horizon_days":
                value = tuple(value)
            kwargs[f.name] = value
    return dataclasses.replace(obj, **kwargs)


def load_config(path: str | None = None) -> AppConfig:
    cfg = AppConfig()
    if path is None:
        return cfg
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    for section, overrides in data.items():
        if not hasattr(cfg, section):
            raise KeyError(f"unknown config section {section!r}")
        setattr(cfg, section, _merge(getattr(cfg, section), overrides))
    return cfg


def dump_config(cfg: AppConfig | None = None) -> str:
    cfg = cfg if cfg is not None else AppConfig()
    return json.dumps(dataclasses.asdict(cfg), indent=2, sort_keys=True)
