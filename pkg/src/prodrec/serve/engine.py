"""Request-path recommendation engine over the serving stores.

Live profile -> time-decayed consensus over the prediction table; empty (or
fully expired) profile -> cohort-popularity back-fill in seeded random
order. Every response carries the prediction-table version so clients can
observe atomic model swaps.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Mapping

from ..corpus import GLOBAL_COHORT, CohortKey, day_of
from ..recommend import ScoredProduct, decayed_daily
from .store import PopularityStore, PredictionStore, ProfileStore


class StoreUnavailableError(RuntimeError):
    """A required store has no loaded version; callers must not treat this
    as an empty recommendation list."""


@dataclass
class EngineResponse:
    user: str
    day: int
    model_version: int
    backfill: bool
    items: list[ScoredProduct]


class RecommendEngine:
    def __init__(
        self,
        profiles: ProfileStore,
        predictions: PredictionStore,
        popularity: PopularityStore,
        cohorts: Mapping[str, CohortKey] | None = None,
        k: int = 20,
        alpha: float = 0.9,
    ):
        self.profiles = profiles
        self.predictions = predictions
        self.popularity = popularity
        self.cohorts = cohorts if cohorts is not None else {}
        self.k = k
        self.alpha = alpha

    def recommend(self, user: str, day: int, k: int | None = None, seed: int = 0) -> EngineResponse:
        """Daily top-k for `user` as of epoch day `day` (purchases from `day`
        itself never influence the result)."""
        if self.predictions.version == 0 or self.popularity.version == 0:
            raise StoreUnavailableError("serving stores have not been loaded")
        k = self.k if k is None else k
        snapshot = self.predictions.snapshot()

        history = [(p, ts) for p, ts in self.profiles.get(user) if day_of(ts) < day]
        if history:
            rec = decayed_daily(
                history,
                lambda token, n: [
                    ScoredProduct(t, s, source=token) for t, s in snapshot.table.get(token, [])[:n]
                ],
                day,
                self.alpha,
                k,
            )
            return EngineResponse(user, day, snapshot.version, False, rec.items)

        cohort = self.cohorts.get(user, GLOBAL_COHORT)
        ranked = self.popularity.cascade(cohort, k)[:k]
        items = [ScoredProduct(tok, float(count), source=str(cohort)) for tok, count in ranked]
        random.Random(f"{seed}:{user}").shuffle(items)
        return EngineResponse(user, day, snapshot.version, True, items)
