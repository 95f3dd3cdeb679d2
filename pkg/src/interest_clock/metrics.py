"""Offline evaluation: AUC, user-averaged AUC, per-hour and per-tier cells,
the forgetting probe and per-hour tag impression shares.

A cell whose samples are all one class has no AUC; it is reported as absent
(``nan`` in arrays, empty in CSV) rather than given a made-up value.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .core import (
    FACET_FIELDS,
    HOURS_PER_DAY,
    MINUTES_PER_DAY,
    DegenerateInput,
    EmptyInput,
    Facet,
    Tier,
    Vocabulary,
    check_events,
)


def auc(scores, labels) -> float:
    """Probability that a random positive outscores a random negative (ties 1/2)."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(bool)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be 1-d arrays of equal length")
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateInput("AUC needs at least one positive and one negative sample")
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def _auc_or_nan(scores, labels) -> float:
    try:
        return auc(scores, labels)
    except DegenerateInput:
        return math.nan


def per_user_auc(scores, labels, users) -> dict[int, float]:
    """AUC of every user that has both classes."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(bool)
    users = np.asarray(users)
    order = np.argsort(users, kind="stable")
    u_sorted = users[order]
    starts = np.flatnonzero(np.r_[True, u_sorted[1:] != u_sorted[:-1]])
    ends = np.r_[starts[1:], u_sorted.size]
    out = {}
    for lo, hi in zip(starts, ends):
        idx = order[lo:hi]
        lab = labels[idx]
        if lab.any() and not lab.all():
            out[int(u_sorted[lo])] = auc(scores[idx], lab)
    return out


def uauc(scores, labels, users) -> float:
    """Unweighted mean of per-user AUC over users with both classes."""
    per_user = per_user_auc(scores, labels, users)
    if not per_user:
        raise DegenerateInput("no user has both a positive and a negative sample")
    return float(np.mean([per_user[u] for u in sorted(per_user)]))


@dataclass
class Cell:
    name: str
    n: int
    auc: float

    @property
    def absent(self) -> bool:
        return math.isnan(self.auc)


@dataclass
class MetricsReport:
    """AUC/UAUC overall, per user tier and per hour of day.

    UAUC is the unweighted mean of per-user AUC over users having at least
    one positive and one negative sample.
    """

    strategy: str
    auc: float
    uauc: float
    n_samples: int
    n_uauc_users: int
    per_tier: dict[str, Cell] = field(default_factory=dict)
    per_hour: list[Cell] = field(default_factory=list)

    def cells(self) -> list[Cell]:
        return ([Cell("overall", self.n_samples, self.auc),
                 Cell("uauc", self.n_uauc_users, self.uauc)]
                + list(self.per_tier.values()) + self.per_hour)

    @property
    def hour_auc(self) -> np.ndarray:
        return np.array([c.auc for c in self.per_hour])


def metrics_report(scores, events, strategy: str = "") -> MetricsReport:
    events = check_events(events)
    scores = np.asarray(scores, dtype=float)
    labels = events["finish"]
    users = events["user_id"]
    per_user = per_user_auc(scores, labels, users)
    report = MetricsReport(
        strategy=strategy,
        auc=_auc_or_nan(scores, labels),
        uauc=float(np.mean([per_user[u] for u in sorted(per_user)])) if per_user else math.nan,
        n_samples=int(events.size),
        n_uauc_users=len(per_user),
    )
    for tier in Tier:
        mask = events["tier"] == int(tier)
        name = f"tier={tier.label}"
        report.per_tier[name] = Cell(name, int(mask.sum()), _auc_or_nan(scores[mask], labels[mask]))
    hours = (events["epoch_minutes"] % MINUTES_PER_DAY) // 60
    for h in range(HOURS_PER_DAY):
        mask = hours == h
        report.per_hour.append(Cell(f"hour={h:02d}", int(mask.sum()),
                                    _auc_or_nan(scores[mask], labels[mask])))
    return report


@dataclass
class ProbeResult:
    strategy: str
    train_hour: int
    hour_auc: np.ndarray
    n: np.ndarray

    @property
    def spread(self) -> float:
        present = self.hour_auc[~np.isnan(self.hour_auc)]
        return float(present.max() - present.min()) if present.size else math.nan


def forgetting_probe(score_fn, events, train_hour: int, strategy: str = "") -> ProbeResult:
    """Per-hour AUC of one checkpoint over held-out events bucketed by hour.

    ``score_fn`` maps an event array to scores. Slice ``h`` is scored with
    its request times moved to ``h:00`` of the same day, so every event in
    the slice sees the clock at ``cur_time = h``.
    """
    events = check_events(events)
    hours = (events["epoch_minutes"] % MINUTES_PER_DAY) // 60
    values = np.full(HOURS_PER_DAY, np.nan)
    counts = np.zeros(HOURS_PER_DAY, dtype=np.int64)
    for h in range(HOURS_PER_DAY):
        part = events[hours == h].copy()
        counts[h] = part.size
        if part.size:
            part["epoch_minutes"] -= part["epoch_minutes"] % 60
            values[h] = _auc_or_nan(np.asarray(score_fn(part), dtype=float), part["finish"])
    return ProbeResult(strategy, int(train_hour), values, counts)


@dataclass
class HourDistributionReport:
    """Share (percent) of impressions per tag within each hour; ``nan`` rows are empty hours."""

    facet: Facet
    tags: tuple[str, ...]
    percent: np.ndarray
    counts: np.ndarray

    def share(self, tag: str, hours) -> float:
        """Percent of impressions carrying ``tag`` pooled over ``hours``."""
        j = self.tags.index(tag)
        c = self.counts[list(hours)]
        total = c.sum()
        if total == 0:
            raise EmptyInput("no impressions in the requested hours")
        return float(100.0 * c[:, j].sum() / total)


def hour_distribution(events, facet: Facet | int, vocab: Vocabulary) -> HourDistributionReport:
    events = check_events(events)
    if events.size == 0:
        raise EmptyInput("hour_distribution needs at least one event")
    facet = Facet(facet)
    names = vocab.facets[facet]
    hours = (events["epoch_minutes"] % MINUTES_PER_DAY) // 60
    counts = np.zeros((HOURS_PER_DAY, len(names)), dtype=np.int64)
    np.add.at(counts, (hours, events[FACET_FIELDS[facet]].astype(np.int64)), 1)
    totals = counts.sum(axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        percent = np.where(totals > 0, 100.0 * counts / np.maximum(totals, 1), np.nan)
    return HourDistributionReport(facet, tuple(names), percent, counts)


# ---------------------------------------------------------------------------
# CSV output
# ---------------------------------------------------------------------------

def fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return "" if math.isnan(x) else f"{x:.6g}"
    return str(x)


def write_metrics_csv(path, reports) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cell", "strategy", "n", "auc"])
        for rep in reports:
            for cell in rep.cells():
                w.writerow([cell.name, rep.strategy, cell.n, fmt(cell.auc)])


def write_probe_csv(path, probes) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["strategy", "train_hour", "eval_hour", "auc"])
        for p in probes:
            for h in range(HOURS_PER_DAY):
                w.writerow([p.strategy, p.train_hour, h, fmt(float(p.hour_auc[h]))])


def write_hour_dist_csv(path, report: HourDistributionReport) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["hour", "tag", "percent"])
        for h in range(HOURS_PER_DAY):
            if np.isnan(report.percent[h]).all():
                continue
            for j, tag in enumerate(report.tags):
                w.writerow([h, tag, fmt(float(report.percent[h, j]))])


def read_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))
