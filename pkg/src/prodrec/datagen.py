"""Synthetic purchase corpora with planted structure.

The generator is a first-order Markov chain over product groups: each
receipt's items come from one group, the next receipt stays in that group
with probability `within_group_prob` and otherwise follows a row-stochastic
group-transition matrix. Item picks inside a group are i.i.d., optionally
skewed, optionally biased per user cohort, optionally drifting over time.
Ground truth (group labels, the effective transition matrix, cohort weights)
is emitted alongside so learned models can be checked against the planted
structure.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import SECONDS_PER_DAY, CohortKey, Corpus, parse_logs

DEFAULT_COHORTS = (
    CohortKey("female", "25-29", "CA"),
    CohortKey("male", "21-24", "NY"),
    CohortKey("female", "50+", "TX"),
    CohortKey("male", "35-39", "WA"),
)


@dataclass
class GenConfig:
    num_users: int = 1000
    num_products: int = 200
    num_groups: int = 10
    receipts_per_user: tuple[int, int] = (6, 12)
    items_per_receipt: tuple[int, int] = (1, 4)
    within_group_prob: float = 0.9
    # Off-diagonal group hops; zero-diagonal rows, random when None.
    group_transition: np.ndarray | None = None
    cohort_mix: tuple[tuple[CohortKey, float], ...] = tuple((k, 0.25) for k in DEFAULT_COHORTS)
    # Multiplier on each cohort's preferred products (product % n_cohorts == cohort index).
    cohort_boost: float = 1.0
    # Explicit per-cohort pick weights (n_cohorts x num_products); overrides cohort_boost.
    cohort_weights: np.ndarray | None = None
    # Within-group base popularity skew: weight of the j-th product in its group
    # is (j+1)**-skew; 0 means uniform.
    within_group_skew: float = 0.0
    # Re-roll the within-group popularity ranking every N days; 0 disables drift.
    popularity_drift_days: int = 0
    # One (lo, hi) for all products, or one per group.
    price_range: tuple[float, float] | tuple[tuple[float, float], ...] = (6.0, 30.0)
    start_day: int = 0
    seed: int = 42

    def __post_init__(self):
        if self.num_groups > self.num_products:
            raise ValueError("num_groups > num_products")
        if not 0.0 <= self.within_group_prob <= 1.0:
            raise ValueError("within_group_prob must be in [0, 1]")
        for lo, hi in (self.receipts_per_user, self.items_per_receipt):
            if lo < 1 or hi < lo:
                raise ValueError("ranges must be non-empty with lo >= 1")
        if self.group_transition is not None:
            rows = np.asarray(self.group_transition, dtype=np.float64)
            if rows.shape != (self.num_groups, self.num_groups):
                raise ValueError("group_transition shape mismatch")
            if not np.allclose(rows.sum(axis=1), 1.0, atol=1e-12):
                raise ValueError("group_transition rows must sum to 1")
        mix = sum(w for _, w in self.cohort_mix)
        if mix <= 0:
            raise ValueError("cohort_mix weights must sum to a positive value")
        ranges = self.price_ranges()
        if len(ranges) != self.num_groups or any(lo > hi or lo < 0 for lo, hi in ranges):
            raise ValueError("price_range must be one valid (lo, hi) or one per group")

    def price_ranges(self) -> list[tuple[float, float]]:
        first = self.price_range[0]
        if isinstance(first, (int, float)):
            return [tuple(self.price_range)] * self.num_groups  # type: ignore[list-item]
        return [tuple(r) for r in self.price_range]  # type: ignore[arg-type]


@dataclass
class GroundTruth:
    """What the generator planted, for oracle checks."""

    product_tokens: list[str]
    product_group: np.ndarray           # generator order, same as product_tokens
    transition: np.ndarray              # effective group transition incl. stay prob
    cohort_keys: list[CohortKey]
    cohort_weights: np.ndarray          # n_cohorts x num_products pick weights
    user_cohort: dict[str, int]         # user token -> cohort index

    def group_of(self, token: str) -> int:
        return int(self.product_group[self.product_tokens.index(token)])


@dataclass
class GenResult:
    receipt_lines: list[str]
    cohort_lines: list[str]
    truth: GroundTruth

    def corpus(self) -> tuple[Corpus, dict[int, CohortKey]]:
        return parse_logs(self.receipt_lines, self.cohort_lines)


def _default_transition(num_groups: int, rng: np.random.Generator) -> np.ndarray:
    if num_groups == 1:
        return np.ones((1, 1))
    rows = rng.random((num_groups, num_groups))
    np.fill_diagonal(rows, 0.0)
    return rows / rows.sum(axis=1, keepdims=True)


def _group_slices(num_products: int, num_groups: int) -> np.ndarray:
    # Contiguous blocks: product p belongs to group p * G // P.
    return (np.arange(num_products) * num_groups) // num_products


def _base_weights(cfg: GenConfig, groups: np.ndarray, drift_step: int) -> np.ndarray:
    weights = np.ones(cfg.num_products)
    if cfg.within_group_skew > 0:
        for g in range(cfg.num_groups):
            members = np.flatnonzero(groups == g)
            ranks = np.arange(len(members), dtype=np.float64)
            if drift_step > 0:
                ranks = np.roll(ranks, drift_step % len(members))
            weights[members] = (ranks + 1.0) ** -cfg.within_group_skew
    return weights


def generate(cfg: GenConfig) -> GenResult:
    """Deterministic synthetic corpus in the receipt/cohort file formats."""
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    groups = _group_slices(cfg.num_products, cfg.num_groups)
    hop = (
        np.asarray(cfg.group_transition, dtype=np.float64)
        if cfg.group_transition is not None
        else _default_transition(cfg.num_groups, rng)
    )
    stay = cfg.within_group_prob
    effective = stay * np.eye(cfg.num_groups) + (1.0 - stay) * hop

    cohort_keys = [k for k, _ in cfg.cohort_mix]
    mix = np.array([w for _, w in cfg.cohort_mix], dtype=np.float64)
    mix = mix / mix.sum()
    n_cohorts = len(cohort_keys)

    if cfg.cohort_weights is not None:
        cohort_weights = np.asarray(cfg.cohort_weights, dtype=np.float64)
        if cohort_weights.shape != (n_cohorts, cfg.num_products):
            raise ValueError("cohort_weights shape mismatch")
    else:
        cohort_weights = np.ones((n_cohorts, cfg.num_products))
        if cfg.cohort_boost != 1.0:
            for c in range(n_cohorts):
                cohort_weights[c, np.arange(cfg.num_products) % n_cohorts == c] = cfg.cohort_boost

    width = max(5, len(str(cfg.num_products - 1)), len(str(cfg.num_users - 1)))
    product_tokens = [f"p{p:0{width}d}" for p in range(cfg.num_products)]
    ranges = cfg.price_ranges()
    lo = np.array([ranges[g][0] for g in groups])
    hi = np.array([ranges[g][1] for g in groups])
    prices = (lo + rng.random(cfg.num_products) * (hi - lo)).round(2)

    members_by_group = [np.flatnonzero(groups == g) for g in range(cfg.num_groups)]

    receipt_lines: list[str] = []
    cohort_lines: list[str] = []
    user_cohort: dict[str, int] = {}
    weight_cache: dict[tuple, tuple[np.ndarray, np.ndarray]] = {}

    def group_pick_dist(g: int, cohort: int, day: int) -> tuple[np.ndarray, np.ndarray]:
        drift_step = 0
        if cfg.popularity_drift_days > 0:
            drift_step = (day - cfg.start_day) // cfg.popularity_drift_days
        key = (g, cohort) if drift_step == 0 else (g, cohort, drift_step)
        cached = weight_cache.get(key)
        if cached is None:
            base = _base_weights(cfg, groups, drift_step)
            members = members_by_group[g]
            w = base[members] * cohort_weights[cohort, members]
            cached = (members, w / w.sum())
            weight_cache[key] = cached
        return cached

    for n in range(cfg.num_users):
        user_token = f"u{n:0{width}d}"
        cohort = int(rng.choice(n_cohorts, p=mix))
        user_cohort[user_token] = cohort
        key = cohort_keys[cohort]
        cohort_lines.append(f"{user_token}\t{key.gender}\t{key.age_bucket}\t{key.state}")

        n_receipts = int(rng.integers(cfg.receipts_per_user[0], cfg.receipts_per_user[1] + 1))
        g = int(rng.integers(cfg.num_groups))
        for r in range(n_receipts):
            day = cfg.start_day + r
            ts = day * SECONDS_PER_DAY + 43200 + (n % 3600)
            n_items = int(rng.integers(cfg.items_per_receipt[0], cfg.items_per_receipt[1] + 1))
            members, dist = group_pick_dist(g, cohort, day)
            picked = rng.choice(members, size=n_items, p=dist)
            prods = ",".join(product_tokens[p] for p in picked)
            price_str = ",".join(f"{prices[p]:.2f}" for p in picked)
            receipt_lines.append(f"{user_token}\t{ts}\t{prods}\t{price_str}")
            if rng.random() >= stay:
                g = int(rng.choice(cfg.num_groups, p=hop[g]))

    truth = GroundTruth(
        product_tokens=product_tokens,
        product_group=groups,
        transition=effective,
        cohort_keys=cohort_keys,
        cohort_weights=cohort_weights,
        user_cohort=user_cohort,
    )
    return GenResult(receipt_lines, cohort_lines, truth)


def write_truth(truth: GroundTruth, group_stream, transition_stream) -> None:
    for tok, g in zip(truth.product_tokens, truth.product_group):
        group_stream.write(f"{tok}\t{int(g)}\n")
    num_groups = truth.transition.shape[0]
    transition_stream.write(f"{num_groups}\n")
    for row in truth.transition:
        transition_stream.write(" ".join(f"{v:.9g}" for v in row) + "\n")
