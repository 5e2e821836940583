from .engine import EngineResponse, RecommendEngine, StoreUnavailableError
from .refresh import (
    build_popularity_table,
    build_prediction_table,
    refresh_popularity,
    refresh_predictions,
)
from .store import (
    DEFAULT_TTL_DAYS,
    ManualClock,
    PopularityStore,
    PredictionStore,
    ProfileStore,
    StoreClock,
)

__all__ = [
    "DEFAULT_TTL_DAYS",
    "EngineResponse",
    "ManualClock",
    "PopularityStore",
    "PredictionStore",
    "ProfileStore",
    "RecommendEngine",
    "StoreClock",
    "StoreUnavailableError",
    "build_popularity_table",
    "build_prediction_table",
    "refresh_popularity",
    "refresh_predictions",
]
