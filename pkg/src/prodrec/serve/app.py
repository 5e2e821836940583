"""HTTP/JSON surface over the recommendation engine.

GET /recommend?user=&date=&k=&seed=  ->  the user's daily recommendations
GET /health                          ->  store versions and basic counters
"""

from __future__ import annotations

import datetime as dt

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel

from .engine import RecommendEngine, StoreUnavailableError

EPOCH = dt.date(1970, 1, 1)


class RecommendedItem(BaseModel):
    product: str
    score: float
    source: str | None = None


class RecommendResponse(BaseModel):
    user: str
    date: str
    model_version: int
    backfill: bool
    items: list[RecommendedItem]


class HealthResponse(BaseModel):
    status: str
    predictions_version: int
    popularity_version: int
    profile_users: int


def parse_date(date: str) -> int:
    """ISO date (or bare epoch-day integer) -> epoch day."""
    try:
        return int(date)
    except ValueError:
        pass
    try:
        return (dt.date.fromisoformat(date) - EPOCH).days
    except ValueError:
        raise HTTPException(status_code=422, detail=f"unparseable date {date!r}") from None


def format_date(day: int) -> str:
    return (EPOCH + dt.timedelta(days=day)).isoformat()


def create_app(engine: RecommendEngine) -> FastAPI:
    app = FastAPI(title="prodrec")

    @app.get("/recommend", response_model=RecommendResponse)
    def recommend(user: str, date: str, k: int | None = None, seed: int = 0) -> RecommendResponse:
        day = parse_date(date)
        try:
            result = engine.recommend(user, day, k=k, seed=seed)
        except StoreUnavailableError as exc:
            raise HTTPException(status_code=503, detail=str(exc)) from None
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from None
        return RecommendResponse(
            user=result.user,
            date=format_date(result.day),
            model_version=result.model_version,
            backfill=result.backfill,
            items=[
                RecommendedItem(
                    product=str(sp.product),
                    score=sp.score,
                    source=None if sp.source is None else str(sp.source),
                )
                for sp in result.items
            ],
        )

    @app.get("/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        return HealthResponse(
            status="ok",
            predictions_version=engine.predictions.version,
            popularity_version=engine.popularity.version,
            profile_users=len(engine.profiles),
        )

    return app
