"""Domain vocabulary shared by every stage: time, tags, labels, events.

Events travel between stages as numpy structured arrays with dtype
``EVENT_DTYPE`` (one row per impression). :class:`InteractionEvent` is the
single-record view of the same data.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

MINUTES_PER_DAY = 1440
HOURS_PER_DAY = 24
N_FACETS = 3
TOP_K = 3


class InterestClockError(Exception):
    """Base class for errors raised by this package."""


class OutOfOrderEvent(InterestClockError):
    pass


class CorruptSnapshot(InterestClockError):
    pass


class DomainError(InterestClockError, ValueError):
    pass


class MissingEmbedding(InterestClockError, KeyError):
    pass


class DimensionMismatch(InterestClockError, ValueError):
    pass


class NonFiniteGradient(InterestClockError, FloatingPointError):
    pass


class DegenerateInput(InterestClockError, ValueError):
    pass


class EmptyInput(InterestClockError, ValueError):
    pass


class EventLogError(InterestClockError):
    """Malformed or unsorted event log; ``line`` is 1-based."""

    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class Facet(enum.IntEnum):
    GENRE = 0
    MOOD = 1
    LANGUAGE = 2


class Tier(enum.IntEnum):
    LOW = 0
    MIDDLE = 1
    HIGH = 2

    @property
    def label(self) -> str:
        return self.name.capitalize()

    @classmethod
    def parse(cls, text: str) -> "Tier":
        try:
            return cls[text.strip().upper()]
        except KeyError:
            raise ValueError(f"unknown tier {text!r}") from None


DEFAULT_GENRES = ("pop", "rock", "hiphop", "electronic", "classical",
                  "jazz", "folk", "rnb", "country", "dj")
DEFAULT_MOODS = ("happy", "sorrow", "calm", "energetic", "romantic",
                 "nostalgic", "angry", "dreamy")
DEFAULT_LANGUAGES = ("mandarin", "english", "cantonese", "japanese",
                     "korean", "instrumental")


def _names(defaults: Sequence[str], prefix: str, n: int) -> tuple[str, ...]:
    names = list(defaults[:n])
    names += [f"{prefix}{i}" for i in range(len(names), n)]
    return tuple(names)


@dataclass(frozen=True)
class Vocabulary:
    """Fixed tag vocabulary for the three facets."""

    genres: tuple[str, ...] = DEFAULT_GENRES
    moods: tuple[str, ...] = DEFAULT_MOODS
    languages: tuple[str, ...] = DEFAULT_LANGUAGES

    @classmethod
    def of_sizes(cls, n_genres: int, n_moods: int, n_languages: int) -> "Vocabulary":
        return cls(_names(DEFAULT_GENRES, "genre", n_genres),
                   _names(DEFAULT_MOODS, "mood", n_moods),
                   _names(DEFAULT_LANGUAGES, "language", n_languages))

    def __post_init__(self):
        for facet, names in zip(Facet, self.facets):
            if not names:
                raise ValueError(f"empty vocabulary for {facet.name.lower()}")
            if len(set(names)) != len(names):
                raise ValueError(f"duplicate tag names for {facet.name.lower()}")

    @property
    def facets(self) -> tuple[tuple[str, ...], ...]:
        return (self.genres, self.moods, self.languages)

    @property
    def sizes(self) -> tuple[int, int, int]:
        return tuple(len(names) for names in self.facets)

    def name(self, facet: Facet | int, index: int) -> str:
        return self.facets[facet][index]

    def index(self, facet: Facet | int, value: str) -> int:
        try:
            return self.facets[facet].index(value)
        except ValueError:
            raise KeyError(f"{value!r} is not a {Facet(facet).name.lower()} tag") from None

    def rank_order(self, facet: Facet | int) -> np.ndarray:
        """Position of each tag index when tags are sorted by name."""
        names = self.facets[facet]
        order = sorted(range(len(names)), key=names.__getitem__)
        rank = np.empty(len(names), dtype=np.int64)
        rank[order] = np.arange(len(names))
        return rank


@dataclass(frozen=True, order=True)
class SimTime:
    """Minutes since simulation start."""

    epoch_minutes: int

    def __post_init__(self):
        if self.epoch_minutes < 0:
            raise DomainError("epoch_minutes must be >= 0")

    @property
    def day_index(self) -> int:
        return self.epoch_minutes // MINUTES_PER_DAY

    @property
    def day_of_week(self) -> int:
        return self.day_index % 7

    @property
    def fractional_hour(self) -> float:
        return (self.epoch_minutes % MINUTES_PER_DAY) / 60.0

    @property
    def hour_of_day(self) -> int:
        return (self.epoch_minutes % MINUTES_PER_DAY) // 60

    def __add__(self, minutes: int) -> "SimTime":
        return SimTime(self.epoch_minutes + int(minutes))


def hour_bucket(ts: SimTime | int) -> int:
    minutes = ts.epoch_minutes if isinstance(ts, SimTime) else int(ts)
    return (minutes % MINUTES_PER_DAY) // 60


def fractional_hour(epoch_minutes) -> np.ndarray | float:
    return (np.asarray(epoch_minutes) % MINUTES_PER_DAY) / 60.0


@dataclass(frozen=True)
class Tag:
    facet: Facet
    value: str


@dataclass(frozen=True)
class BehaviorLabels:
    like: bool = False
    finish: bool = False
    skip: bool = False
    dislike: bool = False

    def __post_init__(self):
        if self.finish and self.skip:
            raise DomainError("a play cannot be both finished and skipped")


@dataclass(frozen=True)
class InteractionEvent:
    user_id: int
    item_id: int
    timestamp: SimTime
    tags: tuple[Tag, Tag, Tag]
    labels: BehaviorLabels = field(default_factory=BehaviorLabels)
    user_tier: Tier = Tier.LOW

    def __post_init__(self):
        if len(self.tags) != N_FACETS or tuple(t.facet for t in self.tags) != tuple(Facet):
            raise DomainError("an event carries exactly one tag per facet, in facet order")


EVENT_DTYPE = np.dtype([
    ("user_id", np.int64),
    ("item_id", np.int64),
    ("epoch_minutes", np.int64),
    ("genre", np.int16),
    ("mood", np.int16),
    ("language", np.int16),
    ("like", np.bool_),
    ("finish", np.bool_),
    ("skip", np.bool_),
    ("dislike", np.bool_),
    ("tier", np.int8),
])
FACET_FIELDS = ("genre", "mood", "language")
LABEL_FIELDS = ("like", "finish", "skip", "dislike")


def empty_events(n: int = 0) -> np.ndarray:
    return np.zeros(n, dtype=EVENT_DTYPE)


def to_records(events: Iterable[InteractionEvent], vocab: Vocabulary) -> np.ndarray:
    rows = []
    for ev in events:
        lab = ev.labels
        rows.append((ev.user_id, ev.item_id, ev.timestamp.epoch_minutes,
                     *(vocab.index(t.facet, t.value) for t in ev.tags),
                     lab.like, lab.finish, lab.skip, lab.dislike, int(ev.user_tier)))
    return np.array(rows, dtype=EVENT_DTYPE) if rows else empty_events()


def from_record(row, vocab: Vocabulary) -> InteractionEvent:
    tags = tuple(Tag(f, vocab.name(f, int(row[name])))
                 for f, name in zip(Facet, FACET_FIELDS))
    labels = BehaviorLabels(*(bool(row[name]) for name in LABEL_FIELDS))
    return InteractionEvent(int(row["user_id"]), int(row["item_id"]),
                            SimTime(int(row["epoch_minutes"])), tags, labels,
                            Tier(int(row["tier"])))


# ---------------------------------------------------------------------------
# Event log: one comma-separated record per line, fixed field order, no header
# ---------------------------------------------------------------------------

LOG_FIELDS = ("user_id", "item_id", "epoch_minutes", "genre", "mood", "language",
              "like", "finish", "skip", "dislike", "tier")


def write_event_log(path, events: np.ndarray, vocab: Vocabulary) -> None:
    names = vocab.facets
    tier_names = [t.label for t in Tier]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in events.tolist():
            uid, iid, minutes, g, m, lang, like, fin, skip, dis, tier = row
            fh.write(f"{uid},{iid},{minutes},{names[0][g]},{names[1][m]},{names[2][lang]},"
                     f"{int(like)},{int(fin)},{int(skip)},{int(dis)},{tier_names[tier]}\n")


def read_event_log(path, vocab: Vocabulary, require_sorted: bool = True) -> np.ndarray:
    """Parse an event log, checking field count, vocabulary and time order."""
    lookup = [{name: i for i, name in enumerate(names)} for names in vocab.facets]
    tiers = {t.label: int(t) for t in Tier}
    rows = []
    last = -1
    tier_of = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != len(LOG_FIELDS):
                raise EventLogError(f"expected {len(LOG_FIELDS)} fields, got {len(parts)}", lineno)
            try:
                uid, iid, minutes = int(parts[0]), int(parts[1]), int(parts[2])
                tags = [lookup[f][parts[3 + f]] for f in range(N_FACETS)]
                flags = [int(p) for p in parts[6:10]]
                tier = tiers[parts[10]]
            except (ValueError, KeyError) as exc:
                raise EventLogError(f"bad field value ({exc})", lineno) from None
            if minutes < 0 or any(f not in (0, 1) for f in flags):
                raise EventLogError("field out of range", lineno)
            if flags[1] and flags[2]:
                raise EventLogError("event is both finished and skipped", lineno)
            if require_sorted and minutes < last:
                raise EventLogError(f"out-of-order timestamp {minutes} < {last}", lineno)
            if tier_of.setdefault(uid, tier) != tier:
                raise EventLogError(f"user {uid} changes tier", lineno)
            last = max(last, minutes)
            rows.append((uid, iid, minutes, *tags, *flags, tier))
    return np.array(rows, dtype=EVENT_DTYPE) if rows else empty_events()


def check_events(events, name: str = "events") -> np.ndarray:
    """Validate an event batch and return it as an ``EVENT_DTYPE`` array."""
    if isinstance(events, (str, Path)):
        raise TypeError(f"{name} must be an event array, not a path; use read_event_log")
    arr = np.asarray(events)
    if arr.dtype != EVENT_DTYPE:
        if arr.dtype.names is None or set(arr.dtype.names) != set(EVENT_DTYPE.names):
            raise TypeError(f"{name} must be a structured array with fields {EVENT_DTYPE.names}")
        arr = arr.astype(EVENT_DTYPE)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional")
    if arr.size and (arr["epoch_minutes"] < 0).any():
        raise DomainError(f"{name} contain negative timestamps")
    if arr.size and (arr["finish"] & arr["skip"]).any():
        raise DomainError(f"{name} contain an event both finished and skipped")
    return arr


def check_sorted(events: np.ndarray) -> None:
    minutes = events["epoch_minutes"]
    bad = np.flatnonzero(np.diff(minutes) < 0)
    if bad.size:
        i = int(bad[0]) + 1
        raise OutOfOrderEvent(f"event {i} at minute {minutes[i]} precedes minute {minutes[i - 1]}")
