"""Embedded serving stores: TTL'd user profiles and swappable model tables.

The profile store is a write-ahead-logged key-value map from user token to
purchase records; entries expire `ttl_days` after their purchase timestamp,
enforced lazily at read time plus an explicit compaction sweep. Prediction
and popularity stores are immutable tables replaced wholesale by batch
refreshes: a refresh parses and validates the complete new table first, then
swaps it in atomically (readers see either the old or the new version, never
a mix), writing a versioned artifact directory and repointing a CURRENT file.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Mapping

from ..corpus import SECONDS_PER_DAY, CohortKey

DEFAULT_TTL_DAYS = 60


class StoreClock:
    """Monotone non-decreasing time source, injectable for tests."""

    def __init__(self, source: Callable[[], float] = time.time):
        self._source = source
        self._last = float("-inf")

    def now(self) -> float:
        self._last = max(self._last, self._source())
        return self._last


class ManualClock(StoreClock):
    def __init__(self, start: float = 0.0):
        super().__init__(self._read)
        self._t = float(start)

    def _read(self) -> float:
        return self._t

    def advance(self, seconds: float) -> None:
        if seconds < 0:
            raise ValueError("clock cannot move backwards")
        self._t += seconds

    def advance_days(self, days: float) -> None:
        self.advance(days * SECONDS_PER_DAY)


class ProfileStore:
    """User token -> [(product token, purchase ts)], with per-entry TTL.

    Puts append to the in-memory map and to a write-ahead log; `compact`
    rewrites a snapshot without expired entries and truncates the log."""

    def __init__(
        self,
        directory: str | Path | None = None,
        clock: StoreClock | None = None,
        ttl_days: int = DEFAULT_TTL_DAYS,
    ):
        self.clock = clock if clock is not None else StoreClock()
        self.ttl_days = ttl_days
        self._data: dict[str, list[tuple[str, int]]] = {}
        self._dir = Path(directory) if directory is not None else None
        self._wal = None
        if self._dir is not None:
            self._dir.mkdir(parents=True, exist_ok=True)
            self._load()
            self._wal = open(self._wal_path(), "a", encoding="utf-8")

    def _wal_path(self) -> Path:
        return self._dir / "profiles.wal"

    def _snapshot_path(self) -> Path:
        return self._dir / "profiles.json"

    def _load(self) -> None:
        if self._snapshot_path().exists():
            with open(self._snapshot_path(), "r", encoding="utf-8") as fh:
                self._data = {u: [tuple(e) for e in entries] for u, entries in json.load(fh).items()}
        if self._wal_path().exists():
            with open(self._wal_path(), "r", encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        record = json.loads(line)
                        self._data.setdefault(record["user"], []).extend(
                            (p, int(ts)) for p, ts in record["items"]
                        )

    def put(self, user: str, purchases: Iterable[tuple[str, int]]) -> None:
        items = [(p, int(ts)) for p, ts in purchases]
        if not items:
            return
        if self._wal is not None:
            self._wal.write(json.dumps({"user": user, "items": items}) + "\n")
            self._wal.flush()
        self._data.setdefault(user, []).extend(items)

    def get(self, user: str) -> list[tuple[str, int]]:
        """Live (non-expired) purchases; unknown users get an empty profile."""
        now = self.clock.now()
        horizon = self.ttl_days * SECONDS_PER_DAY
        return [(p, ts) for p, ts in self._data.get(user, []) if now - ts < horizon]

    def compact(self) -> None:
        now = self.clock.now()
        horizon = self.ttl_days * SECONDS_PER_DAY
        self._data = {
            u: live
            for u, entries in self._data.items()
            if (live := [(p, ts) for p, ts in entries if now - ts < horizon])
        }
        if self._dir is None:
            return
        tmp = self._snapshot_path().with_suffix(".tmp")
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump({u: [list(e) for e in entries] for u, entries in self._data.items()}, fh)
        os.replace(tmp, self._snapshot_path())
        if self._wal is not None:
            self._wal.close()
        self._wal = open(self._wal_path(), "w", encoding="utf-8")

    def __len__(self) -> int:
        return len(self._data)

    def close(self) -> None:
        if self._wal is not None:
            self._wal.close()
            self._wal = None


@dataclass(frozen=True)
class _Snapshot:
    version: int
    table: Mapping


class _SwappableStore:
    """Copy-and-swap table store with versioned on-disk artifacts."""

    artifact_name = "table.tsv"

    def __init__(self, directory: str | Path | None = None):
        self._dir = Path(directory) if directory is not None else None
        self._state = _Snapshot(0, {})
        if self._dir is not None:
            self._dir.mkdir(parents=True, exist_ok=True)
            current = self._dir / "CURRENT"
            if current.exists():
                version = int(current.read_text().strip())
                path = self._dir / f"v{version:06d}" / self.artifact_name
                with open(path, "r", encoding="utf-8") as fh:
                    table = self._parse(fh)
                self._state = _Snapshot(version, table)

    @property
    def version(self) -> int:
        return self._state.version

    def swap_in(self, table: Mapping, version: int | None = None) -> int:
        """Atomically replace the whole table; the version tag must increase."""
        self._validate(table)
        new_version = self._state.version + 1 if version is None else int(version)
        if new_version <= self._state.version:
            raise ValueError(
                f"version must increase (current {self._state.version}, got {new_version})"
            )
        if self._dir is not None:
            vdir = self._dir / f"v{new_version:06d}"
            vdir.mkdir(parents=True, exist_ok=True)
            with open(vdir / self.artifact_name, "w", encoding="utf-8") as fh:
                self._write(table, fh)
            tmp = self._dir / "CURRENT.tmp"
            tmp.write_text(f"{new_version}\n")
            os.replace(tmp, self._dir / "CURRENT")
        self._state = _Snapshot(new_version, table)
        return new_version

    def refresh_from_file(self, path: str | Path) -> int:
        """Parse and validate a complete artifact, then swap it in; any parse
        error aborts the refresh and the previous table stays live."""
        with open(path, "r", encoding="utf-8") as fh:
            table = self._parse(fh)
        return self.swap_in(table)

    def snapshot(self) -> _Snapshot:
        return self._state

    def _validate(self, table: Mapping) -> None:
        raise NotImplementedError

    def _parse(self, fh) -> Mapping:
        raise NotImplementedError

    def _write(self, table: Mapping, fh) -> None:
        raise NotImplementedError


class PredictionStore(_SwappableStore):
    """Product token -> [(predicted token, score)], descending by score.

    Artifact line format: `product TAB token:score TAB token:score ...`"""

    artifact_name = "predictions.tsv"

    def get(self, product: str) -> list[tuple[str, float]]:
        return self._state.table.get(product, [])

    def _validate(self, table: Mapping) -> None:
        for key, preds in table.items():
            scores = [s for _, s in preds]
            if any(scores[i] < scores[i + 1] for i in range(len(scores) - 1)):
                raise ValueError(f"predictions for {key!r} are not score-descending")

    def _parse(self, fh) -> dict[str, list[tuple[str, float]]]:
        table: dict[str, list[tuple[str, float]]] = {}
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            preds = []
            for column in parts[1:]:
                token, _, score = column.rpartition(":")
                if not token:
                    raise ValueError(f"line {line_no}: malformed prediction column {column!r}")
                preds.append((token, float(score)))
            table[parts[0]] = preds
        self._validate(table)
        return table

    def _write(self, table: Mapping, fh) -> None:
        for key in sorted(table):
            columns = "\t".join(f"{tok}:{score:.9g}" for tok, score in table[key])
            fh.write(f"{key}\t{columns}\n" if columns else f"{key}\n")


class PopularityStore(_SwappableStore):
    """CohortKey (at any granularity) -> [(product token, count)].

    Artifact line: `gender TAB age TAB state TAB token:count,token:count,...`"""

    artifact_name = "popularity.tsv"

    def get(self, cohort: CohortKey) -> list[tuple[str, int]]:
        return self._state.table.get(cohort, [])

    def cascade(self, cohort: CohortKey, k: int) -> list[tuple[str, int]]:
        """Finest cohort level holding at least k products, else the global list."""
        table = self._state.table
        for level in cohort.levels():
            got = table.get(level, [])
            if len(got) >= k:
                return got
        return table.get(CohortKey(), [])

    def _validate(self, table: Mapping) -> None:
        for key in table:
            if not isinstance(key, CohortKey):
                raise ValueError("popularity keys must be CohortKey instances")

    def _parse(self, fh) -> dict[CohortKey, list[tuple[str, int]]]:
        table: dict[CohortKey, list[tuple[str, int]]] = {}
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            gender, age, state, items_str = line.rstrip("\n").split("\t")
            items = []
            if items_str:
                for column in items_str.split(","):
                    token, _, count = column.rpartition(":")
                    if not token:
                        raise ValueError(f"line {line_no}: malformed item {column!r}")
                    items.append((token, int(count)))
            table[CohortKey(gender, age, state)] = items
        return table

    def _write(self, table: Mapping, fh) -> None:
        for key in sorted(table, key=lambda c: (c.gender, c.age_bucket, c.state)):
            items = ",".join(f"{tok}:{count}" for tok, count in table[key])
            fh.write(f"{key.gender}\t{key.age_bucket}\t{key.state}\t{items}\n")
