"""Append-only chronological conversation log with paginated search.

Entries are (seq, role, text, timestamp) with strictly increasing seq and
non-decreasing timestamps. Text search is plain case-insensitive substring
matching; date search compares the UTC calendar date inclusively on both
ends. Results are always seq-ordered and paginated in fixed page_size
chunks (default 5, kept small for function-call payloads).

When backed by a file, the log is newline-delimited JSON, flushed per
append; loading replays the file. Single writer, concurrent readers.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from datetime import date, datetime, timezone

from .errors import DateError, FormatError, OrderError, ValidationError

ROLES = ("user", "agent", "system", "function")
DEFAULT_PAGE_SIZE = 5


@dataclass(frozen=True)
class RecallEntry:
    seq: int
    role: str
    text: str
    timestamp: datetime


def _parse_day(value: str) -> date:
    try:
        return datetime.strptime(value, "%Y-%m-%d").date()
    except (ValueError, TypeError):
        raise DateError(f"malformed date {value!r}, expected YYYY-MM-DD") from None


class RecallMemory:
    def __init__(self, path=None, page_size: int = DEFAULT_PAGE_SIZE):
        if page_size < 1:
            raise ValidationError("page_size must be >= 1")
        self.page_size = page_size
        self._entries: list[RecallEntry] = []
        self._path = os.fspath(path) if path is not None else None
        self._fh = None
        if self._path is not None:
            if os.path.exists(self._path):
                self._load(self._path)
            self._fh = open(self._path, "a", encoding="utf-8")

    def _load(self, path: str) -> None:
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh):
                line = line.strip()
                if not line:
                    continue
                try:
                    rec = json.loads(line)
                    entry = RecallEntry(
                        seq=int(rec["seq"]),
                        role=rec["role"],
                        text=rec["text"],
                        timestamp=datetime.fromisoformat(rec["timestamp"]),
                    )
                except (json.JSONDecodeError, KeyError, ValueError, TypeError) as exc:
                    raise FormatError(f"bad log record on line {lineno + 1}: {exc}") from exc
                if entry.seq != len(self._entries):
                    raise FormatError(f"non-contiguous seq {entry.seq} on line {lineno + 1}")
                self._entries.append(entry)

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def __len__(self) -> int:
        return len(self._entries)

    def entries(self) -> list[RecallEntry]:
        return list(self._entries)

    def append_entry(self, role: str, text: str, timestamp: datetime) -> int:
        """Durably append one entry; returns its seq (first entry gets 0)."""
        if role not in ROLES:
            raise ValidationError(f"unknown role {role!r}, expected one of {ROLES}")
        if timestamp.tzinfo is None:
            timestamp = timestamp.replace(tzinfo=timezone.utc)
        timestamp = timestamp.astimezone(timezone.utc).replace(microsecond=0)
        if self._entries and timestamp < self._entries[-1].timestamp:
            raise OrderError(
                f"timestamp {timestamp.isoformat()} is older than the last entry"
            )
        entry = RecallEntry(seq=len(self._entries), role=role, text=text, timestamp=timestamp)
        self._entries.append(entry)
        if self._fh is not None:
            self._fh.write(
                json.dumps(
                    {
                        "seq": entry.seq,
                        "role": entry.role,
                        "text": entry.text,
                        "timestamp": entry.timestamp.isoformat(),
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )
            self._fh.flush()
        return entry.seq

    def _paginate(self, matches: list[RecallEntry], page: int):
        if page < 0:
            raise ValidationError("page must be >= 0")
        total = len(matches)
        start = page * self.page_size
        chunk = matches[start : start + self.page_size]
        has_more = start + self.page_size < total
        return chunk, total, has_more

    def conversation_search(self, query: str, page: int = 0):
        """Case-insensitive substring search, seq-ordered, paginated.

        An empty query matches every entry. Returns
        (entries, total_matches, has_more).
        """
        needle = query.lower()
        matches = [e for e in self._entries if needle in e.text.lower()]
        return self._paginate(matches, page)

    def conversation_search_date(self, start: str, end: str, page: int = 0):
        """Entries whose UTC calendar date lies in [start, end], inclusive."""
        start_day = _parse_day(start)
        end_day = _parse_day(end)
        if start_day > end_day:
            raise DateError(f"start {start} is after end {end}")
        matches = [
            e for e in self._entries if start_day <= e.timestamp.date() <= end_day
        ]
        return self._paginate(matches, page)
