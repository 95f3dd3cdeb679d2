"""Aggregation of a user's 24 hour slots into one time-aware embedding.

Four strategies share one shape of computation: pick a set of embedding rows
arranged as ``(m, s)`` (``m`` hour slots, ``s`` rows per slot), weight each
slot, sum over slots, and flatten. ``clock_plan`` returns that plan so the
model can push gradients back through the same weights.

* ``time_encoding`` - ``[v_hour; v_day]``, ignores the user's clock.
* ``naive``        - the slot of the current hour only.
* ``adaptive``     - all 24 slots concatenated.
* ``gaussian``     - all 24 slots summed with Gaussian weights of the
  circular hour distance to the current time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .core import HOURS_PER_DAY, N_FACETS, TOP_K, DomainError

STRATEGIES = ("time_encoding", "naive", "adaptive", "gaussian")
SLOT_ROWS = N_FACETS * TOP_K


@dataclass(frozen=True)
class ClockStrategy:
    kind: str = "gaussian"
    sigma: float = 1.0
    mu: float = 0.0
    integer_hours: bool = False

    def __post_init__(self):
        if self.kind not in STRATEGIES:
            raise ValueError(f"unknown clock strategy {self.kind!r}; expected one of {STRATEGIES}")
        if not (self.sigma > 0 and math.isfinite(self.sigma)):
            raise ValueError("Gaussian sigma must be a positive finite number")
        if not math.isfinite(self.mu):
            raise ValueError("Gaussian mu must be finite")

    @property
    def n_rows(self) -> int:
        """Embedding rows per output (the output width is this times embedding_dim)."""
        if self.kind == "time_encoding":
            return 2
        if self.kind == "adaptive":
            return HOURS_PER_DAY * SLOT_ROWS
        return SLOT_ROWS

    def output_dim(self, embedding_dim: int) -> int:
        return self.n_rows * embedding_dim


def circular_distance(t, cur_time):
    """Hours between slot ``t`` and ``cur_time`` around the 24h circle."""
    t_arr = np.asarray(t, dtype=float)
    c_arr = np.asarray(cur_time, dtype=float)
    if (~((t_arr >= 0) & (t_arr < HOURS_PER_DAY))).any() or (~((c_arr >= 0) & (c_arr < HOURS_PER_DAY))).any():
        raise DomainError(f"hours must lie in [0, 24); got t={t}, cur_time={cur_time}")
    # |t - c| is exact for equal inputs, unlike (t + 24 - c) mod 24 which can round to 24
    d = np.abs(t_arr - c_arr)
    d = np.minimum(d, HOURS_PER_DAY - d)
    return float(d) if d.ndim == 0 else d


def gaussian_weight(delta, sigma: float = 1.0, mu: float = 0.0):
    if not sigma > 0:
        raise DomainError("sigma must be > 0")
    delta = np.asarray(delta, dtype=float)
    g = np.exp(-((delta - mu) ** 2) / (2.0 * sigma ** 2)) / (math.sqrt(2.0 * math.pi) * sigma)
    return float(g) if g.ndim == 0 else g


_HOURS = np.arange(HOURS_PER_DAY, dtype=float)


@lru_cache(maxsize=4096)
def _hour_weights(cur_time: float, sigma: float, mu: float) -> np.ndarray:
    w = gaussian_weight(circular_distance(_HOURS, cur_time), sigma, mu)
    w.setflags(write=False)
    return w


def hour_weights(cur_time: float, sigma: float = 1.0, mu: float = 0.0) -> np.ndarray:
    """Gaussian weight of each of the 24 hour slots at ``cur_time``."""
    return _hour_weights(float(cur_time), float(sigma), float(mu))


_ONE = np.ones(1)
_ONE.setflags(write=False)


def clock_plan(clock_rows: np.ndarray, cur_time: float, strategy: ClockStrategy,
               hour_row: int = 0, day_row: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Rows and slot weights realising ``strategy`` at ``cur_time``.

    ``clock_rows`` is the user's clock already mapped to embedding rows,
    shape ``(24, 9)``. ``hour_row``/``day_row`` are only used by the
    time-encoding baseline.
    """
    if not 0 <= cur_time < HOURS_PER_DAY:
        raise DomainError(f"cur_time must lie in [0, 24), got {cur_time}")
    if strategy.integer_hours:
        cur_time = float(math.floor(cur_time))
    kind = strategy.kind
    if kind == "gaussian":
        return clock_rows, hour_weights(cur_time, strategy.sigma, strategy.mu)
    if kind == "naive":
        return clock_rows[int(cur_time)][None, :], _ONE
    if kind == "adaptive":
        return clock_rows.reshape(1, -1), _ONE
    return np.array([[hour_row, day_row]]), _ONE


def combine(table: np.ndarray, rows: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """sum_t weights[t] * table[rows[t]], flattened."""
    if rows.shape[0] == 1:
        return table[rows[0]].ravel() * weights[0] if weights[0] != 1.0 else table[rows[0]].ravel()
    return np.tensordot(weights, table[rows], axes=1).ravel()


def aggregate(features, cur_time: float, strategy: ClockStrategy, tables, day_of_week: int = 0) -> np.ndarray:
    """Clock embedding of ``features`` at ``cur_time`` using ``tables``.

    ``tables`` is an :class:`~interest_clock.model.EmbeddingTables`;
    ``features`` an :class:`~interest_clock.feature_store.InterestClockFeatures`.
    """
    rows = tables.clock_rows(features.tags)
    hour = int(math.floor(cur_time)) % HOURS_PER_DAY
    plan_rows, weights = clock_plan(rows, cur_time, strategy,
                                    tables.hour_row(hour), tables.day_row(day_of_week))
    return combine(tables.weights, plan_rows, weights)
