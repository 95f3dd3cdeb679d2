"""Per-user hourly tag counters over a trailing window of days.

Every ingested event adds its behavior counts to the (user, hour-of-day, tag)
cell of each of its three tags. Counts are also kept per day so that a day
leaving the window is subtracted exactly. From the counters the store ranks
tags for each (hour, facet) by the weighted behavior score and keeps the
three best: the user's interest clock.
"""

from __future__ import annotations

import json
import math
import threading
from collections import Counter, defaultdict
from dataclasses import dataclass

import numpy as np

from .core import (
    HOURS_PER_DAY,
    MINUTES_PER_DAY,
    N_FACETS,
    TOP_K,
    CorruptSnapshot,
    Facet,
    OutOfOrderEvent,
    SimTime,
    Tag,
    Vocabulary,
    check_events,
)

SNAPSHOT_MAGIC = "ICLK1"
ABSENT = -1

# counter columns of the per-cell count vectors
N_IMPRESSIONS, CNT_LIKE, CNT_FINISH, CNT_SKIP, CNT_DISLIKE = range(5)
# label bit pattern (like | finish<<1 | skip<<2 | dislike<<3) -> count increment
_BIT_VECTORS = np.array([[1, b & 1, (b >> 1) & 1, (b >> 2) & 1, (b >> 3) & 1] for b in range(16)],
                        dtype=np.int64)


@dataclass(frozen=True)
class ScoreWeights:
    alpha: float = 2.0
    beta: float = 1.0
    gamma: float = 1.0
    omega: float = 2.0

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma", "omega"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise ValueError(f"score weight {name} must be finite and >= 0, got {value}")

    def __add__(self, other: "ScoreWeights") -> "ScoreWeights":
        return ScoreWeights(self.alpha + other.alpha, self.beta + other.beta,
                            self.gamma + other.gamma, self.omega + other.omega)


def score_feature(like, finish, skip, dislike, w: ScoreWeights):
    """alpha*like + beta*finish - gamma*skip - omega*dislike.

    Works elementwise on arrays; the evaluation order is fixed so that array
    and scalar callers get bit-identical results.
    """
    return w.alpha * like + w.beta * finish - w.gamma * skip - w.omega * dislike


@dataclass(frozen=True, eq=False)
class InterestClockFeatures:
    """Top tags per (hour, facet, rank) for one user.

    ``tags[h, f, k]`` is the vocabulary index of the rank-``k`` tag of facet
    ``f`` in hour ``h``, or ``-1`` for an empty slot; ``scores`` holds the
    matching scores (nan where empty).
    """

    user_id: int
    tags: np.ndarray
    scores: np.ndarray
    vocab: Vocabulary

    def slot(self, hour: int, facet: Facet | int) -> list[tuple[Tag, float]]:
        f = Facet(facet)
        return [(Tag(f, self.vocab.name(f, int(t))), float(s))
                for t, s in zip(self.tags[hour, f], self.scores[hour, f]) if t != ABSENT]

    def as_dict(self) -> dict:
        return {(h, Facet(f)): self.slot(h, f)
                for h in range(HOURS_PER_DAY) for f in range(N_FACETS)}

    def is_empty(self) -> bool:
        return bool((self.tags == ABSENT).all())

    def __eq__(self, other):
        if not isinstance(other, InterestClockFeatures):
            return NotImplemented
        return (self.user_id == other.user_id
                and np.array_equal(self.tags, other.tags)
                and np.array_equal(self.scores, other.scores, equal_nan=True))


def empty_clock(user_id: int, vocab: Vocabulary) -> InterestClockFeatures:
    shape = (HOURS_PER_DAY, N_FACETS, TOP_K)
    return InterestClockFeatures(user_id, np.full(shape, ABSENT, dtype=np.int64),
                                 np.full(shape, np.nan), vocab)


class HourlyTagStore:
    """Sliding-window (user, hour, tag) behavior counters.

    Single writer; ``ingest``/``expire`` and the readers share one lock, so a
    reader never sees half an event.

    Parameters
    ----------
    vocab : Vocabulary
    window_days : int
        An event on day ``d`` counts while ``watermark_day - d < window_days``.
    weights : ScoreWeights
        Default weights for :meth:`extract_clock`.
    """

    def __init__(self, vocab: Vocabulary | None = None, window_days: int = 30,
                 weights: ScoreWeights | None = None):
        if window_days < 1:
            raise ValueError("window_days must be >= 1")
        self.vocab = vocab or Vocabulary()
        self.window_days = int(window_days)
        self.weights = weights or ScoreWeights()
        sizes = self.vocab.sizes
        self._offsets = np.concatenate([[0], np.cumsum(sizes)])
        self._n_tags = int(self._offsets[-1])
        self._sizes = sizes
        self._offsets_list = self._offsets.tolist()
        self._name_rank_list = [self.vocab.rank_order(f).tolist() for f in range(N_FACETS)]
        self.watermark = -1
        self._slot: dict[int, int] = {}
        self._counts = np.zeros((16, HOURS_PER_DAY, self._n_tags, 5), dtype=np.int64)
        # day -> [(slot, hour, genre, mood, language, label_bits)]
        self._days: dict[int, list[tuple]] = defaultdict(list)
        self._cache: dict[int, InterestClockFeatures] = {}
        # user -> hours whose ranking is stale in the cached clock
        self._dirty: dict[int, set] = {}
        self._lock = threading.RLock()

    # -- writing ---------------------------------------------------------

    @property
    def watermark_day(self) -> int:
        return self.watermark // MINUTES_PER_DAY if self.watermark >= 0 else -1

    @property
    def n_users(self) -> int:
        return len(self._slot)

    def users(self) -> list[int]:
        return sorted(self._slot)

    def _user_slot(self, user_id: int) -> int:
        slot = self._slot.get(user_id)
        if slot is None:
            slot = len(self._slot)
            if slot == self._counts.shape[0]:
                grown = np.zeros((2 * slot,) + self._counts.shape[1:], dtype=np.int64)
                grown[:slot] = self._counts
                self._counts = grown
            self._slot[user_id] = slot
        return slot

    def _apply(self, slot, hour, tags, bits, sign):
        vec = _BIT_VECTORS[bits] if sign > 0 else -_BIT_VECTORS[bits]
        off = self._offsets_list
        self._counts[slot, hour, [off[0] + tags[0], off[1] + tags[1], off[2] + tags[2]]] += vec

    def ingest(self, user_id, epoch_minutes, genre, mood, language,
               like=False, finish=False, skip=False, dislike=False):
        """Add one event; timestamps must be non-decreasing."""
        minutes = int(epoch_minutes)
        with self._lock:
            if minutes < self.watermark:
                raise OutOfOrderEvent(
                    f"event at minute {minutes} is older than watermark {self.watermark}")
            self._advance(minutes)
            user_id = int(user_id)
            slot = self._user_slot(user_id)
            hour = (minutes % MINUTES_PER_DAY) // 60
            tags = (int(genre), int(mood), int(language))
            for f, t in enumerate(tags):
                if not 0 <= t < self._sizes[f]:
                    raise ValueError(f"tag index {t} outside the {Facet(f).name.lower()} vocabulary")
            bits = int(bool(like)) | int(bool(finish)) << 1 | int(bool(skip)) << 2 | int(bool(dislike)) << 3
            self._apply(slot, hour, tags, bits, 1)
            self._days[minutes // MINUTES_PER_DAY].append((slot, hour, *tags, bits))
            self._touch(user_id, hour)

    def ingest_event(self, event):
        """Ingest an :class:`InteractionEvent` or one ``EVENT_DTYPE`` row."""
        if hasattr(event, "timestamp"):
            tags = [self.vocab.index(t.facet, t.value) for t in event.tags]
            lab = event.labels
            self.ingest(event.user_id, event.timestamp.epoch_minutes, *tags,
                        lab.like, lab.finish, lab.skip, lab.dislike)
        else:
            self.ingest(event["user_id"], event["epoch_minutes"], event["genre"],
                        event["mood"], event["language"], event["like"],
                        event["finish"], event["skip"], event["dislike"])

    def ingest_many(self, events):
        for uid, _, minutes, *rest in check_events(events).tolist():
            self.ingest(uid, minutes, *rest[:7])

    def _advance(self, minutes):
        old_day = self.watermark_day
        self.watermark = max(self.watermark, minutes)
        if self.watermark_day != old_day:
            self._drop_expired()

    def _touch(self, user_id, hour):
        if user_id in self._cache:
            self._dirty.setdefault(user_id, set()).add(hour)

    def _drop_expired(self):
        cutoff = self.watermark_day - self.window_days
        users = {s: u for u, s in self._slot.items()}
        for day in [d for d in self._days if d <= cutoff]:
            for slot, hour, g, m, lang, bits in self._days.pop(day):
                self._apply(slot, hour, (g, m, lang), bits, -1)
                self._touch(users[slot], hour)

    def expire(self, watermark: SimTime | int):
        """Advance the watermark (never backwards) and drop days outside the window."""
        minutes = watermark.epoch_minutes if isinstance(watermark, SimTime) else int(watermark)
        with self._lock:
            self._advance(minutes)

    # -- reading ---------------------------------------------------------

    def counts(self, user_id: int, hour: int, facet: Facet | int, tag: int) -> tuple[int, ...]:
        """(impressions, like, finish, skip, dislike) for one cell."""
        with self._lock:
            slot = self._slot.get(int(user_id))
            if slot is None:
                return (0, 0, 0, 0, 0)
            return tuple(int(c) for c in self._counts[slot, hour, self._offsets[facet] + tag])

    def _rank(self, slot, w, hours=range(HOURS_PER_DAY), tags=None, top_scores=None):
        """Rank tags of ``hours`` into (copies of) ``tags``/``top_scores``."""
        shape = (HOURS_PER_DAY, N_FACETS, TOP_K)
        tags = np.full(shape, ABSENT, dtype=np.int64) if tags is None else tags.copy()
        top_scores = np.full(shape, np.nan) if top_scores is None else top_scores.copy()
        for hour in hours:
            cells = self._counts[slot, hour].tolist()
            for f in range(N_FACETS):
                lo = self._offsets_list[f]
                rank = self._name_rank_list[f]
                scored = []
                for t in range(self._sizes[f]):
                    n, like, fin, skip, dis = cells[lo + t]
                    if n > 0:
                        scored.append((-score_feature(like, fin, skip, dis, w), rank[t], t))
                scored.sort()
                row_t = tags[hour, f]
                row_s = top_scores[hour, f]
                row_t[:] = ABSENT
                row_s[:] = np.nan
                for k, (neg, _, t) in enumerate(scored[:TOP_K]):
                    row_t[k] = t
                    row_s[k] = -neg
        return tags, top_scores

    def extract_clock(self, user_id: int, w: ScoreWeights | None = None) -> InterestClockFeatures:
        """Top-3 tags per (hour, facet), descending score, ties by tag name."""
        user_id = int(user_id)
        with self._lock:
            default = w is None or w == self.weights
            slot = self._slot.get(user_id)
            if slot is None:
                return empty_clock(user_id, self.vocab)
            if not default:
                return InterestClockFeatures(user_id, *self._rank(slot, w), self.vocab)
            cached = self._cache.get(user_id)
            dirty = self._dirty.get(user_id)
            if cached is not None and not dirty:
                return cached
            if cached is None:
                tags, scores = self._rank(slot, self.weights)
            else:
                tags, scores = self._rank(slot, self.weights, sorted(dirty), cached.tags, cached.scores)
            feats = InterestClockFeatures(user_id, tags, scores, self.vocab)
            self._cache[user_id] = feats
            self._dirty.pop(user_id, None)
            return feats

    def __getstate__(self):
        state = self.__dict__.copy()
        del state["_lock"]
        return state

    def __setstate__(self, state):
        self.__dict__.update(state)
        self._lock = threading.RLock()

    # -- persistence -----------------------------------------------------

    def snapshot(self, path) -> None:
        with self._lock:
            users = {s: u for u, s in self._slot.items()}
            header = {
                "window_days": self.window_days,
                "watermark": self.watermark,
                "weights": [self.weights.alpha, self.weights.beta,
                            self.weights.gamma, self.weights.omega],
                "vocab": [list(names) for names in self.vocab.facets],
                "users": [users[s] for s in range(len(users))],
                "days": sorted(self._days),
            }
            with open(path, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(SNAPSHOT_MAGIC + "\n")
                fh.write(json.dumps(header, sort_keys=True) + "\n")
                for day in header["days"]:
                    shard = Counter(self._days[day])
                    fh.write(f"day,{day},{len(shard)}\n")
                    for (slot, hour, g, m, lang, bits), n in sorted(shard.items()):
                        fh.write(f"{users[slot]},{hour},{g},{m},{lang},{bits},{n}\n")
                fh.write("end\n")

    @classmethod
    def restore(cls, path) -> "HourlyTagStore":
        try:
            with open(path, encoding="utf-8") as fh:
                lines = fh.read().split("\n")
        except (OSError, UnicodeDecodeError) as exc:
            raise CorruptSnapshot(f"cannot read snapshot {path}: {exc}") from None
        if not lines or lines[0] != SNAPSHOT_MAGIC:
            raise CorruptSnapshot(f"{path}: missing {SNAPSHOT_MAGIC} header")
        try:
            header = json.loads(lines[1])
            vocab = Vocabulary(*(tuple(v) for v in header["vocab"]))
            store = cls(vocab, header["window_days"], ScoreWeights(*header["weights"]))
            for uid in header["users"]:
                store._user_slot(int(uid))
            pos = 2
            for day in header["days"]:
                kind, d, n = lines[pos].split(",")
                if kind != "day" or int(d) != day:
                    raise ValueError(f"expected shard for day {day}")
                pos += 1
                for _ in range(int(n)):
                    uid, hour, g, m, lang, bits, mult = (int(x) for x in lines[pos].split(","))
                    pos += 1
                    slot = store._slot[uid]
                    if not 0 <= hour < HOURS_PER_DAY or mult < 1:
                        raise ValueError("record out of range")
                    entry = (slot, hour, g, m, lang, bits)
                    for _ in range(mult):
                        store._apply(slot, hour, (g, m, lang), bits, 1)
                        store._days[day].append(entry)
            if lines[pos] != "end":
                raise ValueError("missing end marker")
            store.watermark = int(header["watermark"])
        except CorruptSnapshot:
            raise
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise CorruptSnapshot(f"{path}: malformed snapshot ({exc})") from None
        return store
