"""Purchase-receipt corpora: parsing, vocabulary, time splits, cohort statistics.

File formats (all UTF-8, LF-terminated, TAB-separated):

  receipt log   user_token TAB epoch_seconds TAB prod{,prod} TAB price{,price}
  cohort file   user_token TAB gender TAB age_bucket TAB state   ('-' = unknown)
  vocabulary    product_token TAB id TAB count                   (id-ascending)
"""

from __future__ import annotations

import random
import statistics
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

UNKNOWN = "-"
GENDERS = ("male", "female", UNKNOWN)
AGE_BUCKETS = ("18-20", "21-24", "25-29", "30-34", "35-39", "40-44", "45-49", "50+", UNKNOWN)

SECONDS_PER_DAY = 86400


def day_of(timestamp: int) -> int:
    """Whole day index of an epoch-seconds timestamp."""
    return int(timestamp) // SECONDS_PER_DAY


class LogParseError(ValueError):
    """Malformed input line; carries the 1-based line number."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class EmptyVocabularyError(ValueError):
    pass


@dataclass(frozen=True)
class CohortKey:
    """A (gender, age bucket, state) user segment; '-' marks unknown fields."""

    gender: str = UNKNOWN
    age_bucket: str = UNKNOWN
    state: str = UNKNOWN

    def __post_init__(self):
        if self.gender not in GENDERS:
            raise ValueError(f"bad gender {self.gender!r}")
        if self.age_bucket not in AGE_BUCKETS:
            raise ValueError(f"bad age bucket {self.age_bucket!r}")
        if self.state != UNKNOWN and not (len(self.state) == 2 and self.state.isalpha()):
            raise ValueError(f"bad state {self.state!r}")

    def levels(self) -> list["CohortKey"]:
        """Successively coarser keys: full -> (age,gender) -> gender -> global."""
        out = [self]
        for key in (
            CohortKey(self.gender, self.age_bucket, UNKNOWN),
            CohortKey(self.gender, UNKNOWN, UNKNOWN),
            CohortKey(UNKNOWN, UNKNOWN, UNKNOWN),
        ):
            if key != out[-1]:
                out.append(key)
        return out

    def __str__(self) -> str:
        return f"{self.gender},{self.age_bucket},{self.state}"


GLOBAL_COHORT = CohortKey()


@dataclass
class Receipt:
    """One purchase event: products bought together, with aligned prices."""

    timestamp: int
    products: list[int]
    prices: list[float]

    def __post_init__(self):
        if not self.products:
            raise ValueError("receipt with no products")
        if len(self.prices) != len(self.products):
            raise ValueError("prices do not align with products")


@dataclass
class UserLog:
    """A user's receipts, ascending by timestamp (input order breaks ties)."""

    user: int
    receipts: list[Receipt]


@dataclass
class Vocabulary:
    """Dense product-token index, ids assigned by descending purchase count."""

    tokens: list[str]
    counts: np.ndarray
    min_count: int = 1
    min_price: float = 0.0
    index: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if not self.index:
            self.index = {tok: i for i, tok in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def id_of(self, token: str) -> int:
        return self.index[token]


@dataclass
class UserTable:
    """Dense user-token index."""

    tokens: list[str]
    index: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if not self.index:
            self.index = {tok: i for i, tok in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def id_of(self, token: str) -> int:
        return self.index[token]


@dataclass
class Corpus:
    """All user logs plus the product vocabulary and user table they index into."""

    logs: list[UserLog]
    vocab: Vocabulary
    users: UserTable

    def num_purchases(self) -> int:
        return sum(len(r.products) for log in self.logs for r in log.receipts)

    def time_range(self) -> tuple[int, int]:
        stamps = [r.timestamp for log in self.logs for r in log.receipts]
        if not stamps:
            raise ValueError("corpus has no receipts")
        return min(stamps), max(stamps)


def _split_fields(line: str, expected: int, line_no: int) -> list[str]:
    fields = line.rstrip("\n").split("\t")
    if len(fields) != expected:
        raise LogParseError(line_no, f"expected {expected} TAB-separated fields, got {len(fields)}")
    return fields


def parse_receipt_line(line: str, line_no: int) -> tuple[str, int, list[str], list[float]]:
    user, ts_str, prod_str, price_str = _split_fields(line, 4, line_no)
    if not user:
        raise LogParseError(line_no, "empty user token")
    try:
        timestamp = int(ts_str)
    except ValueError:
        raise LogParseError(line_no, f"timestamp {ts_str!r} is not an integer") from None
    products = prod_str.split(",") if prod_str else []
    if not products or any(not p for p in products):
        raise LogParseError(line_no, "empty product list or empty product token")
    try:
        prices = [float(p) for p in price_str.split(",")] if price_str else []
    except ValueError:
        raise LogParseError(line_no, f"malformed price field {price_str!r}") from None
    if len(prices) != len(products):
        raise LogParseError(line_no, f"{len(products)} products but {len(prices)} prices")
    if any(p < 0 for p in prices):
        raise LogParseError(line_no, "negative price")
    return user, timestamp, products, prices


def parse_cohort_line(line: str, line_no: int) -> tuple[str, CohortKey]:
    user, gender, age, state = _split_fields(line, 4, line_no)
    if not user:
        raise LogParseError(line_no, "empty user token")
    try:
        key = CohortKey(gender, age, state.upper() if state != UNKNOWN else state)
    except ValueError as exc:
        raise LogParseError(line_no, str(exc)) from None
    return user, key


def parse_logs(
    receipt_lines: Iterable[str],
    cohort_lines: Iterable[str] | None = None,
) -> tuple[Corpus, dict[int, CohortKey]]:
    """Parse receipt (and optional cohort) streams into a corpus.

    Users get one time-sorted log each; the vocabulary covers every observed
    product (no filtering -- apply :func:`build_vocabulary` for that). Users
    absent from the cohort stream map to the all-unknown cohort.
    """
    raw: dict[str, list[tuple[int, int, list[str], list[float]]]] = defaultdict(list)
    order = 0
    for line_no, line in enumerate(receipt_lines, start=1):
        if not line.strip():
            continue
        user, ts, prods, prices = parse_receipt_line(line, line_no)
        raw[user].append((ts, order, prods, prices))
        order += 1

    user_tokens = sorted(raw)
    users = UserTable(user_tokens)

    counts: dict[str, int] = defaultdict(int)
    for entries in raw.values():
        for _, _, prods, _ in entries:
            for tok in prods:
                counts[tok] += 1
    vocab = _vocabulary_from_counts(counts, min_count=1, min_price=0.0)

    logs = []
    for tok in user_tokens:
        entries = sorted(raw[tok], key=lambda e: (e[0], e[1]))
        receipts = [
            Receipt(ts, [vocab.id_of(p) for p in prods], prices)
            for ts, _, prods, prices in entries
        ]
        logs.append(UserLog(users.id_of(tok), receipts))

    cohorts: dict[int, CohortKey] = {}
    if cohort_lines is not None:
        for line_no, line in enumerate(cohort_lines, start=1):
            if not line.strip():
                continue
            user, key = parse_cohort_line(line, line_no)
            if user in users.index:
                cohorts[users.id_of(user)] = key
    for uid in range(len(users)):
        cohorts.setdefault(uid, GLOBAL_COHORT)
    return Corpus(logs, vocab, users), cohorts


def _vocabulary_from_counts(counts: Mapping[str, int], min_count: int, min_price: float) -> Vocabulary:
    ordered = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    tokens = [tok for tok, _ in ordered]
    arr = np.array([c for _, c in ordered], dtype=np.int64)
    return Vocabulary(tokens, arr, min_count=min_count, min_price=min_price)


def build_vocabulary(corpus: Corpus, min_count: int = 1, min_price: float = 0.0) -> Vocabulary:
    """Filtered vocabulary: keep products with count >= min_count and median
    observed price >= min_price; ids by descending count, ties lexicographic."""
    counts: dict[str, int] = defaultdict(int)
    prices: dict[str, list[float]] = defaultdict(list)
    for log in corpus.logs:
        for receipt in log.receipts:
            for pid, price in zip(receipt.products, receipt.prices):
                tok = corpus.vocab.tokens[pid]
                counts[tok] += 1
                prices[tok].append(price)
    kept = {
        tok: c
        for tok, c in counts.items()
        if c >= min_count and statistics.median(prices[tok]) >= min_price
    }
    if not kept:
        raise EmptyVocabularyError("no products survive the count/price filters")
    return _vocabulary_from_counts(kept, min_count, min_price)


def apply_vocabulary(corpus: Corpus, vocab: Vocabulary) -> Corpus:
    """Re-index a corpus onto `vocab`, dropping unknown products and receipts
    that become empty. User table is preserved."""
    logs = []
    for log in corpus.logs:
        receipts = []
        for receipt in log.receipts:
            prods, prices = [], []
            for pid, price in zip(receipt.products, receipt.prices):
                tok = corpus.vocab.tokens[pid]
                if tok in vocab:
                    prods.append(vocab.id_of(tok))
                    prices.append(price)
            if prods:
                receipts.append(Receipt(receipt.timestamp, prods, prices))
        if receipts:
            logs.append(UserLog(log.user, receipts))
    return Corpus(logs, vocab, corpus.users)


def dropped_purchases_by_day(corpus: Corpus, vocab: Vocabulary) -> dict[int, int]:
    """Per-day count of purchases that `apply_vocabulary` would drop.

    Evaluation adds these to its per-day denominators as automatic misses."""
    dropped: dict[int, int] = defaultdict(int)
    for log in corpus.logs:
        for receipt in log.receipts:
            day = day_of(receipt.timestamp)
            for pid in receipt.products:
                if corpus.vocab.tokens[pid] not in vocab:
                    dropped[day] += 1
    return dict(dropped)


def split_by_time(corpus: Corpus, cutoff: int) -> tuple[Corpus, Corpus]:
    """Partition receipts by timestamp: < cutoff to train, >= cutoff to test.

    Both halves share the input vocabulary and user table; build the modeling
    vocabulary from the train half and re-index both with apply_vocabulary."""
    train_logs, test_logs = [], []
    for log in corpus.logs:
        before = [r for r in log.receipts if r.timestamp < cutoff]
        after = [r for r in log.receipts if r.timestamp >= cutoff]
        if before:
            train_logs.append(UserLog(log.user, before))
        if after:
            test_logs.append(UserLog(log.user, after))
    return (
        Corpus(train_logs, corpus.vocab, corpus.users),
        Corpus(test_logs, corpus.vocab, corpus.users),
    )


def flat_products(log: UserLog, seed: int) -> list[int]:
    """A user's purchases as one flat sequence, receipts in time order.

    Products inside a receipt carry no order, so each receipt is shuffled by a
    deterministic RNG keyed on (seed, user, receipt index); every consumer of
    flat sequences (training, transition counting, co-purchase counts) must
    pass the same seed to see the same order."""
    seq: list[int] = []
    for ridx, receipt in enumerate(log.receipts):
        items = list(receipt.products)
        if len(items) > 1:
            key = (seed * 1_000_003 + log.user) * 1_000_003 + ridx
            random.Random(key).shuffle(items)
        seq.extend(items)
    return seq


@dataclass
class CohortStats:
    pct_shoppers: float
    avg_purchases: float
    avg_spend: float
    avg_item_price: float


def cohort_stats(
    corpus: Corpus,
    cohorts: Mapping[int, CohortKey],
    online_user_counts: Mapping[CohortKey, int],
) -> dict[CohortKey, CohortStats]:
    """Per-cohort shopping statistics against an external online-user census.

    Cohorts present in the census but with no shoppers report zeros; a shopper
    whose cohort is missing from the census is an error."""
    shoppers: dict[CohortKey, list[int]] = defaultdict(list)
    for log in corpus.logs:
        if log.receipts:
            shoppers[cohorts.get(log.user, GLOBAL_COHORT)].append(log.user)

    for key in shoppers:
        if key not in online_user_counts:
            raise KeyError(f"cohort {key} has shoppers but no online-user count")

    by_user_items: dict[int, int] = defaultdict(int)
    by_user_spend: dict[int, float] = defaultdict(float)
    for log in corpus.logs:
        for receipt in log.receipts:
            by_user_items[log.user] += len(receipt.products)
            by_user_spend[log.user] += sum(receipt.prices)

    out: dict[CohortKey, CohortStats] = {}
    for key, online in online_user_counts.items():
        uids = shoppers.get(key, [])
        if not uids:
            out[key] = CohortStats(0.0, 0.0, 0.0, 0.0)
            continue
        items = sum(by_user_items[u] for u in uids)
        spend = sum(by_user_spend[u] for u in uids)
        out[key] = CohortStats(
            pct_shoppers=len(uids) / online,
            avg_purchases=items / len(uids),
            avg_spend=spend / len(uids),
            avg_item_price=spend / items,
        )
    return out


def format_receipt_line(user_token: str, receipt: Receipt, vocab: Vocabulary) -> str:
    prods = ",".join(vocab.tokens[p] for p in receipt.products)
    prices = ",".join(f"{p:.2f}" for p in receipt.prices)
    return f"{user_token}\t{receipt.timestamp}\t{prods}\t{prices}"


def write_logs(corpus: Corpus, stream) -> None:
    for log in corpus.logs:
        user_token = corpus.users.tokens[log.user]
        for receipt in log.receipts:
            stream.write(format_receipt_line(user_token, receipt, corpus.vocab) + "\n")


def write_cohorts(cohorts: Mapping[int, CohortKey], users: UserTable, stream) -> None:
    for uid in sorted(cohorts):
        key = cohorts[uid]
        stream.write(f"{users.tokens[uid]}\t{key.gender}\t{key.age_bucket}\t{key.state}\n")


def write_vocabulary(vocab: Vocabulary, stream) -> None:
    for i, tok in enumerate(vocab.tokens):
        stream.write(f"{tok}\t{i}\t{int(vocab.counts[i])}\n")


def read_vocabulary(lines: Iterable[str]) -> Vocabulary:
    tokens, counts = [], []
    for line_no, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        tok, id_str, count_str = _split_fields(line, 3, line_no)
        if int(id_str) != len(tokens):
            raise LogParseError(line_no, f"vocabulary ids must ascend from 0, got {id_str}")
        tokens.append(tok)
        counts.append(int(count_str))
    return Vocabulary(tokens, np.array(counts, dtype=np.int64))
