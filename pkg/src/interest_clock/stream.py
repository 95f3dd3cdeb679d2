"""Synthetic music-streaming impressions with time-of-day preferences.

Each user has a static affinity for every tag plus a few circular Gaussian
"bumps" that raise one tag's affinity around a peak hour; population-wide
bumps (e.g. sorrow at night) are layered on top. Impressions are served by
picking, among a handful of random candidates, items the user currently
likes (Gumbel-max over affinity), and behavior labels are Bernoulli draws
driven by the user's affinity to the served item at that moment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .clock import circular_distance
from .core import (
    EVENT_DTYPE,
    HOURS_PER_DAY,
    MINUTES_PER_DAY,
    N_FACETS,
    Facet,
    Tier,
    Vocabulary,
    check_events,
    check_sorted,
)
from .estimator import InterestClockClassifier


@dataclass(frozen=True)
class Bump:
    """Affinity bump for one tag: ``amplitude * exp(-d^2 / 2 width^2)``."""

    facet: Facet
    tag: int
    peak_hour: float
    amplitude: float
    width: float

    def __post_init__(self):
        if not self.width > 0:
            raise ValueError("bump width must be > 0")
        if not 0 <= self.peak_hour < HOURS_PER_DAY:
            raise ValueError("bump peak_hour must lie in [0, 24)")
        if not math.isfinite(self.amplitude):
            raise ValueError("bump amplitude must be finite")

    def at(self, hour):
        d = circular_distance(self.peak_hour, np.asarray(hour, dtype=float))
        return self.amplitude * np.exp(-0.5 * (d / self.width) ** 2)


def parse_bumps(text: str, vocab: Vocabulary) -> tuple[Bump, ...]:
    """Parse ``facet:tag:peak:amplitude:width`` entries separated by ``;``."""
    bumps = []
    for chunk in filter(None, (c.strip() for c in text.split(";"))):
        try:
            facet, tag, peak, amp, width = chunk.split(":")
            f = Facet[facet.strip().upper()]
            bumps.append(Bump(f, vocab.index(f, tag.strip()), float(peak), float(amp), float(width)))
        except (ValueError, KeyError) as exc:
            raise ValueError(f"bad bump entry {chunk!r}: {exc}") from None
    return tuple(bumps)


@dataclass(frozen=True)
class GeneratorConfig:
    n_users: int = 2000
    n_items: int = 5000
    n_genres: int = 10
    n_moods: int = 8
    n_languages: int = 6
    days: int = 44
    events_low: int = 5
    events_middle: int = 10
    events_high: int = 20
    tier_fractions: tuple[float, float, float] = (0.5, 0.3, 0.2)
    label_noise: float = 0.05
    base_scale: float = 0.8
    quality_scale: float = 0.4
    amplitude: float = 1.0
    bumps_per_facet: int = 2
    bump_amplitude: float = 2.0
    bump_width: float = 2.5
    bump_anchors: str = "7.5,12.5,22.5"
    anchor_jitter: float = 1.0
    global_bumps: str = "mood:sorrow:2:1.2:3;mood:energetic:9:0.8:2.5;mood:romantic:21:0.8:2.5"
    diurnal_amplitude: float = 0.2
    candidates: int = 8
    selectivity: float = 1.0
    finish_bias: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("n_users", "n_items", "n_genres", "n_moods", "n_languages", "days",
                     "events_low", "events_middle", "events_high", "candidates"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0 <= self.label_noise < 1:
            raise ValueError("label_noise must lie in [0, 1)")
        fr = self.tier_fractions
        if len(fr) != 3 or min(fr) < 0 or not math.isclose(sum(fr), 1.0, abs_tol=1e-9):
            raise ValueError("tier_fractions must be three non-negative numbers summing to 1")
        if self.bumps_per_facet < 0 or self.bump_width <= 0:
            raise ValueError("bumps_per_facet must be >= 0 and bump_width > 0")
        if not 0 <= self.diurnal_amplitude < 1:
            raise ValueError("diurnal_amplitude must lie in [0, 1)")
        if self.anchor_jitter < 0:
            raise ValueError("anchor_jitter must be >= 0")
        for h in self.anchors:
            if not 0 <= h < HOURS_PER_DAY:
                raise ValueError(f"bump anchor {h} outside [0, 24)")

    @property
    def anchors(self) -> tuple[float, ...]:
        """Routine hours personal bumps cluster around; empty means uniform peaks."""
        try:
            return tuple(float(v) for v in str(self.bump_anchors).replace(";", ",").split(",") if v.strip())
        except ValueError:
            raise ValueError(f"bump_anchors must be comma-separated hours, got {self.bump_anchors!r}") from None

    @property
    def vocab(self) -> Vocabulary:
        return Vocabulary.of_sizes(self.n_genres, self.n_moods, self.n_languages)

    @property
    def events_per_user_day(self) -> tuple[int, int, int]:
        return (self.events_low, self.events_middle, self.events_high)


@dataclass
class UserProfile:
    user_id: int
    tier: Tier
    base: list[np.ndarray]
    bumps: list[Bump] = field(default_factory=list)

    def affinity(self, facet: Facet | int, hour: float) -> np.ndarray:
        a = self.base[facet].copy()
        for b in self.bumps:
            if b.facet == facet:
                a[b.tag] += b.at(hour)
        return a


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


class Population:
    """Ground truth of a generated stream: users, items and their affinities."""

    def __init__(self, config: GeneratorConfig, rng: np.random.Generator):
        self.config = config
        self.vocab = vocab = config.vocab
        sizes = np.array(vocab.sizes)
        self.offsets = np.concatenate([[0], np.cumsum(sizes)])
        n_tags = int(self.offsets[-1])
        n = config.n_users
        self.tiers = rng.choice(3, size=n, p=list(config.tier_fractions)).astype(np.int8)
        self.base = rng.normal(0.0, config.base_scale, size=(n, n_tags))
        k = config.bumps_per_facet
        facet = np.repeat(np.arange(N_FACETS), k)
        self.bump_tag = (self.offsets[facet][None, :]
                         + (rng.random((n, facet.size)) * sizes[facet][None, :]).astype(np.int64))
        anchors = np.array(config.anchors)
        if anchors.size:
            pick = rng.integers(0, anchors.size, size=(n, facet.size))
            jitter = rng.normal(0.0, config.anchor_jitter, size=(n, facet.size))
            self.bump_peak = (anchors[pick] + jitter) % HOURS_PER_DAY
        else:
            self.bump_peak = rng.random((n, facet.size)) * HOURS_PER_DAY
        self.bump_amp = config.amplitude * config.bump_amplitude * rng.uniform(0.5, 1.5, size=(n, facet.size))
        self.bump_width = config.bump_width * rng.uniform(0.6, 1.4, size=(n, facet.size))
        self.global_bumps = tuple(
            Bump(b.facet, b.tag, b.peak_hour, config.amplitude * b.amplitude, b.width)
            for b in parse_bumps(config.global_bumps, vocab))
        self.item_tags = np.stack([rng.integers(0, s, size=config.n_items) for s in sizes], axis=1)
        self.item_quality = rng.normal(0.0, config.quality_scale, size=config.n_items)

    def profile(self, user_id: int) -> UserProfile:
        bumps = []
        for j in range(self.bump_tag.shape[1]):
            g = int(self.bump_tag[user_id, j])
            f = int(np.searchsorted(self.offsets, g, side="right") - 1)
            bumps.append(Bump(Facet(f), g - int(self.offsets[f]), float(self.bump_peak[user_id, j]),
                              float(self.bump_amp[user_id, j]), float(self.bump_width[user_id, j])))
        bumps += [b for b in self.global_bumps]
        base = [self.base[user_id, self.offsets[f]:self.offsets[f + 1]].copy() for f in range(N_FACETS)]
        return UserProfile(user_id, Tier(int(self.tiers[user_id])), base, bumps)

    def affinity(self, users: np.ndarray, hours: np.ndarray) -> np.ndarray:
        """Affinity of each (user, fractional hour) pair to every tag, ``(n, n_tags)``."""
        users = np.asarray(users)
        hours = np.asarray(hours, dtype=float)
        A = self.base[users].copy()
        if self.bump_tag.shape[1]:
            d = circular_distance(self.bump_peak[users] % HOURS_PER_DAY, hours[:, None])
            contrib = self.bump_amp[users] * np.exp(-0.5 * (d / self.bump_width[users]) ** 2)
            np.add.at(A, (np.arange(users.size)[:, None], self.bump_tag[users]), contrib)
        for b in self.global_bumps:
            A[:, self.offsets[b.facet] + b.tag] += b.at(hours)
        return A

    def item_logit(self, A: np.ndarray, items: np.ndarray) -> np.ndarray:
        """Finish logit of serving ``items`` (``(n,)`` or ``(n, c)``) given affinities ``A``."""
        items = np.asarray(items)
        rows = np.arange(A.shape[0]).reshape((-1,) + (1,) * (items.ndim - 1))
        z = self.item_quality[items] + self.config.finish_bias
        for f in range(N_FACETS):
            z = z + A[rows, self.offsets[f] + self.item_tags[items, f]]
        return z

    def finish_probability(self, events: np.ndarray) -> np.ndarray:
        """True finish probability of each event under the generating model."""
        events = check_events(events)
        hours = (events["epoch_minutes"] % MINUTES_PER_DAY) / 60.0
        A = self.affinity(events["user_id"], hours)
        p = _sigmoid(self.item_logit(A, events["item_id"]))
        noise = self.config.label_noise
        return (1.0 - noise) * p + 0.5 * noise

    def activity(self) -> np.ndarray:
        """Probability of each hour-of-day for an impression (evening peak)."""
        h = np.arange(HOURS_PER_DAY) + 0.5
        w = 1.0 + self.config.diurnal_amplitude * np.cos(2 * np.pi * (h - 20.0) / HOURS_PER_DAY)
        return w / w.sum()


def generate(config: GeneratorConfig) -> tuple[np.ndarray, Population]:
    """Chronologically ordered events plus the ground truth that produced them."""
    rng = np.random.default_rng(config.seed)
    pop = Population(config, rng)
    rates = np.array(config.events_per_user_day)[pop.tiers]
    user_of_slot = np.repeat(np.arange(config.n_users), rates)
    activity = pop.activity()
    noise = config.label_noise
    days = []
    for day in range(config.days):
        users = user_of_slot
        n = users.size
        hour = rng.choice(HOURS_PER_DAY, size=n, p=activity)
        minute = rng.integers(0, 60, size=n)
        minutes = day * MINUTES_PER_DAY + hour * 60 + minute
        A = pop.affinity(users, (hour * 60 + minute) / 60.0)
        cand = rng.integers(0, config.n_items, size=(n, config.candidates))
        z = pop.item_logit(A, cand)
        pick = np.argmax(config.selectivity * z + rng.gumbel(size=z.shape), axis=1)
        items = cand[np.arange(n), pick]
        a = z[np.arange(n), pick]
        u = rng.random((n, 4))
        mix = lambda p: (1.0 - noise) * p + 0.5 * noise  # noqa: E731
        finish = u[:, 0] < mix(_sigmoid(a))
        like = u[:, 1] < mix(_sigmoid(a - 2.5))
        skip = ~finish & (u[:, 2] < mix(_sigmoid(1.0 - a)))
        dislike = u[:, 3] < mix(_sigmoid(-a - 3.0))
        ev = np.zeros(n, dtype=EVENT_DTYPE)
        ev["user_id"] = users
        ev["item_id"] = items
        ev["epoch_minutes"] = minutes
        ev["genre"] = pop.item_tags[items, 0]
        ev["mood"] = pop.item_tags[items, 1]
        ev["language"] = pop.item_tags[items, 2]
        ev["like"], ev["finish"], ev["skip"], ev["dislike"] = like, finish, skip, dislike
        ev["tier"] = pop.tiers[users]
        order = np.lexsort((np.arange(n), users, minutes))
        days.append(ev[order])
    events = np.concatenate(days) if days else np.zeros(0, dtype=EVENT_DTYPE)
    return events, pop


def split_by_day(events: np.ndarray, first_test_day: int) -> tuple[np.ndarray, np.ndarray]:
    """Events before ``first_test_day`` and from it onwards."""
    cut = np.searchsorted(events["epoch_minutes"], first_test_day * MINUTES_PER_DAY, side="left")
    return events[:cut], events[cut:]


def run_stream(events, estimator: InterestClockClassifier | None = None, **params):
    """Stream ``events`` through a fresh estimator; returns it with its telemetry."""
    events = check_events(events)
    check_sorted(events)
    est = estimator if estimator is not None else InterestClockClassifier(**params)
    est.fit(events)
    return est, list(est.telemetry_)


def evaluate_frozen(estimator: InterestClockClassifier, events) -> np.ndarray:
    """Finish probabilities with no parameter or feature-store updates."""
    events = check_events(events)
    if events.size == 0:
        return np.zeros(0)
    return estimator.predict_proba(events)[:, 1]
