"""TTL profile store, atomic table swaps, and the model-based fuzz check."""

import numpy as np
import pytest

from prodrec.corpus import SECONDS_PER_DAY, CohortKey
from prodrec.serve import (
    ManualClock,
    PopularityStore,
    PredictionStore,
    ProfileStore,
    refresh_popularity,
    refresh_predictions,
)

DAY = SECONDS_PER_DAY


def test_ttl_sixty_day_boundary():
    clock = ManualClock(0.0)
    store = ProfileStore(clock=clock, ttl_days=60)
    store.put("u1", [("A", 0)])

    clock.advance_days(59)
    assert store.get("u1") == [("A", 0)]
    clock.advance_days(2)  # day 61
    assert store.get("u1") == []


def test_ttl_exactly_sixty_days_is_expired():
    clock = ManualClock(0.0)
    store = ProfileStore(clock=clock, ttl_days=60)
    store.put("u1", [("A", 0)])
    clock.advance_days(60)
    assert store.get("u1") == []


def test_get_before_any_put_is_empty():
    store = ProfileStore(clock=ManualClock(0.0))
    assert store.get("nobody") == []


def test_puts_visible_to_subsequent_gets():
    clock = ManualClock(10 * DAY)
    store = ProfileStore(clock=clock)
    store.put("u1", [("A", 9 * DAY)])
    store.put("u1", [("B", 10 * DAY)])
    assert store.get("u1") == [("A", 9 * DAY), ("B", 10 * DAY)]


def test_profile_persists_through_wal_and_compaction(tmp_path):
    clock = ManualClock(0.0)
    store = ProfileStore(tmp_path / "profiles", clock=clock, ttl_days=60)
    store.put("u1", [("A", 0), ("B", 0)])
    clock.advance_days(30)
    store.put("u1", [("C", int(30 * DAY))])
    store.close()

    reopened = ProfileStore(tmp_path / "profiles", clock=clock, ttl_days=60)
    assert reopened.get("u1") == [("A", 0), ("B", 0), ("C", int(30 * DAY))]

    clock.advance_days(35)  # A and B now expired
    reopened.compact()
    reopened.close()
    again = ProfileStore(tmp_path / "profiles", clock=clock, ttl_days=60)
    assert again.get("u1") == [("C", int(30 * DAY))]
    assert len(again) == 1


def test_profile_fuzz_matches_reference_model():
    rng = np.random.default_rng(99)
    clock = ManualClock(0.0)
    store = ProfileStore(clock=clock, ttl_days=60)
    reference: dict[str, list[tuple[str, int]]] = {}
    users = [f"u{i}" for i in range(50)]
    products = [f"p{i}" for i in range(30)]

    for _ in range(100_000):
        op = rng.integers(4)
        if op == 0:  # put
            user = users[rng.integers(len(users))]
            n = int(rng.integers(1, 4))
            now = int(clock.now())
            items = [
                (products[rng.integers(len(products))], now - int(rng.integers(0, 70 * DAY)))
                for _ in range(n)
            ]
            store.put(user, items)
            reference.setdefault(user, []).extend(items)
        elif op == 1:  # advance time
            clock.advance(float(rng.integers(0, DAY)))
        elif op == 2:  # compact
            if rng.integers(10) == 0:
                store.compact()
        else:  # get, checked against the filtered reference
            user = users[rng.integers(len(users))]
            now = clock.now()
            expected = [
                (p, ts) for p, ts in reference.get(user, []) if now - ts < 60 * DAY
            ]
            assert store.get(user) == expected


def test_prediction_swap_versions_increase(tmp_path):
    store = PredictionStore(tmp_path / "predictions")
    assert store.version == 0
    v1 = store.swap_in({"A": [("B", 0.9), ("C", 0.5)]})
    v2 = store.swap_in({"A": [("C", 0.7)]})
    assert (v1, v2) == (1, 2)
    with pytest.raises(ValueError):
        store.swap_in({"A": []}, version=2)


def test_prediction_swap_is_all_or_nothing(tmp_path):
    store = PredictionStore(tmp_path / "predictions")
    store.swap_in({"A": [("B", 0.9)]})
    with pytest.raises(ValueError):
        store.swap_in({"A": [("B", 0.1), ("C", 0.9)]})  # not score-descending
    assert store.version == 1
    assert store.get("A") == [("B", 0.9)]


def test_prediction_snapshot_is_consistent_during_refresh(tmp_path):
    store = PredictionStore(tmp_path / "predictions")
    store.swap_in({"A": [("B", 0.9)], "X": [("Y", 0.8)]})
    snap = store.snapshot()
    store.swap_in({"A": [("C", 0.7)], "X": [("Z", 0.6)]})
    # the old snapshot still reads the old table as one consistent version
    assert snap.version == 1
    assert snap.table["A"] == [("B", 0.9)]
    assert store.snapshot().version == 2
    assert store.get("A") == [("C", 0.7)]


def test_prediction_store_reloads_current_version(tmp_path):
    store = PredictionStore(tmp_path / "predictions")
    store.swap_in({"A": [("B", 0.9)]})
    store.swap_in({"A": [("C", 0.7), ("D", 0.2)]})
    reopened = PredictionStore(tmp_path / "predictions")
    assert reopened.version == 2
    assert reopened.get("A") == [("C", 0.7), ("D", 0.2)]


def test_corrupt_artifact_aborts_refresh(tmp_path):
    store = PredictionStore(tmp_path / "predictions")
    store.swap_in({"A": [("B", 0.9)]})
    bad = tmp_path / "bad.tsv"
    bad.write_text("A\tB:0.9\tC:not-a-score\n")
    with pytest.raises(ValueError):
        refresh_predictions(store, str(bad))
    assert store.version == 1
    assert store.get("A") == [("B", 0.9)]

    truncated = tmp_path / "trunc.tsv"
    truncated.write_text("A\tB\n")  # missing the :score part
    with pytest.raises(ValueError):
        refresh_predictions(store, str(truncated))
    assert store.get("A") == [("B", 0.9)]


def test_prediction_artifact_round_trip(tmp_path):
    store = PredictionStore(tmp_path / "predictions")
    table = {"A": [("B", 0.875), ("C", 0.25)], "B": [("A", 0.5)], "empty": []}
    store.swap_in(table)
    artifact = tmp_path / "predictions" / "v000001" / "predictions.tsv"
    other = PredictionStore(tmp_path / "other")
    refresh_predictions(other, str(artifact))
    assert other.get("A") == [("B", 0.875), ("C", 0.25)]
    assert other.get("empty") == []


def test_popularity_store_cascade_and_round_trip(tmp_path):
    store = PopularityStore(tmp_path / "popularity")
    fine = CohortKey("female", "30-34", "CA")
    table = {
        fine: [("A", 10), ("B", 5)],
        CohortKey("female", "30-34", "-"): [("A", 30), ("C", 20), ("D", 10)],
        CohortKey(): [("A", 90), ("B", 80), ("C", 70), ("D", 60)],
    }
    refresh_popularity(store, table)
    assert store.cascade(fine, 2) == [("A", 10), ("B", 5)]
    assert store.cascade(fine, 3) == [("A", 30), ("C", 20), ("D", 10)]
    assert store.cascade(fine, 4) == [("A", 90), ("B", 80), ("C", 70), ("D", 60)]

    reopened = PopularityStore(tmp_path / "popularity")
    assert reopened.version == 1
    assert reopened.get(fine) == [("A", 10), ("B", 5)]


def test_popularity_table_capped_at_100_per_cohort():
    from prodrec.datagen import GenConfig, generate
    from prodrec.serve import build_popularity_table

    cfg = GenConfig(
        num_users=300,
        num_products=250,
        num_groups=5,
        receipts_per_user=(8, 8),
        items_per_receipt=(3, 4),
        within_group_prob=0.5,
        seed=3,
    )
    corpus, cohorts = generate(cfg).corpus()
    table = build_popularity_table(corpus, cohorts, computed_at=8, lookback_days=30)
    assert table
    global_list = table[CohortKey()]
    assert len(global_list) == 100
    counts = [c for _, c in global_list]
    assert counts == sorted(counts, reverse=True)
    for ranked in table.values():
        assert len(ranked) <= 100


def test_swap_atomicity_under_concurrent_readers():
    import threading

    store = PredictionStore()
    keys = [f"k{i}" for i in range(50)]

    def table(version):
        return {k: [(f"v{version}", 1.0)] for k in keys}

    store.swap_in(table(1))
    failures = []
    stop = threading.Event()

    def reader():
        while not stop.is_set():
            snap = store.snapshot()
            versions = {snap.table[k][0][0] for k in keys}
            if len(versions) != 1:
                failures.append(versions)

    threads = [threading.Thread(target=reader) for _ in range(4)]
    for t in threads:
        t.start()
    for v in range(2, 30):
        store.swap_in(table(v))
    stop.set()
    for t in threads:
        t.join()
    assert not failures
