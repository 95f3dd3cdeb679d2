"""scikit-learn style wrapper around the streaming pipeline.

``fit`` replays a time-ordered event array: events inside the warm-up days
only fill the feature store; every later event is scored against the clock
read *before* the event itself is ingested, trained on once, then ingested.
``predict_proba`` scores events against the frozen store and parameters.
"""

from __future__ import annotations

import copy
import json
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .clock import ClockStrategy, clock_plan, hour_weights
from .core import (
    HOURS_PER_DAY,
    MINUTES_PER_DAY,
    OutOfOrderEvent,
    Vocabulary,
    check_events,
    check_sorted,
)
from .feature_store import HourlyTagStore, ScoreWeights
from .model import StreamingMLP, sigmoid

_BATCH = 1024


class InterestClockClassifier(ClassifierMixin, BaseEstimator):
    """Finish-probability model with a time-aware clock feature.

    Parameters
    ----------
    strategy : {"gaussian", "naive", "adaptive", "time_encoding"}
    sigma, mu : float
        Gaussian clock parameters.
    integer_hours : bool
        Floor the request time to whole hours before building the clock.
    embedding_dim, hidden, lr, init_acc :
        Network width and Adagrad settings.
    score_weights : tuple of 4 floats
        (like, finish, skip, dislike) weights of the tag score.
    window_days : int
        Feature-store window length.
    warmup_days : int
        Events with ``day_index < warmup_days`` are ingested but not trained on.
    n_user_buckets, n_item_buckets : int
        Hash buckets for id embeddings.
    vocab : Vocabulary or None
    telemetry_every : int
        Steps per telemetry record.
    random_state : int
    """

    def __init__(self, strategy="gaussian", sigma=1.0, mu=0.0, integer_hours=False,
                 embedding_dim=8, hidden=(64, 32), lr=0.05, init_acc=0.1,
                 score_weights=(2.0, 1.0, 1.0, 2.0), window_days=30, warmup_days=30,
                 n_user_buckets=2 ** 16, n_item_buckets=2 ** 16, vocab=None,
                 telemetry_every=1000, random_state=0):
        self.strategy = strategy
        self.sigma = sigma
        self.mu = mu
        self.integer_hours = integer_hours
        self.embedding_dim = embedding_dim
        self.hidden = hidden
        self.lr = lr
        self.init_acc = init_acc
        self.score_weights = score_weights
        self.window_days = window_days
        self.warmup_days = warmup_days
        self.n_user_buckets = n_user_buckets
        self.n_item_buckets = n_item_buckets
        self.vocab = vocab
        self.telemetry_every = telemetry_every
        self.random_state = random_state

    def _clock_strategy(self):
        return ClockStrategy(self.strategy, float(self.sigma), float(self.mu), bool(self.integer_hours))

    def _init_state(self):
        vocab = self.vocab or Vocabulary()
        self.strategy_ = self._clock_strategy()
        self.store_ = HourlyTagStore(vocab, self.window_days, ScoreWeights(*self.score_weights))
        self.model_ = StreamingMLP(vocab, self.strategy_, self.embedding_dim, self.hidden,
                                   self.lr, self.init_acc, self.n_user_buckets,
                                   self.n_item_buckets, seed=self.random_state)
        self.classes_ = np.array([0, 1])
        self.telemetry_ = []
        self.hour_counts_ = np.zeros(HOURS_PER_DAY, dtype=np.int64)
        self.n_steps_ = 0
        self._loss_sum = 0.0
        self._loss_n = 0
        self._rows_cache = {}

    def fit(self, X, y=None):
        """Reset and stream ``X`` (time-ordered events) through store and model."""
        self._init_state()
        return self.partial_fit(X, y)

    def partial_fit(self, X, y=None):
        """Continue streaming ``X`` from the current state."""
        X = check_events(X)
        check_sorted(X)
        if not hasattr(self, "model_"):
            self._init_state()
        if X.size and X["epoch_minutes"][0] < self.store_.watermark:
            raise OutOfOrderEvent(
                f"first event at minute {X['epoch_minutes'][0]} precedes watermark {self.store_.watermark}")
        labels = X["finish"] if y is None else np.asarray(y)
        if labels.shape != X.shape:
            raise ValueError("y must have one label per event")
        self._stream(X.tolist(), labels.astype(float).tolist())
        return self

    def _clock_rows(self, user_id):
        feats = self.store_.extract_clock(user_id)
        hit = self._rows_cache.get(user_id)
        if hit is not None and hit[0] is feats:
            return hit[1]
        rows = self.model_.tables.clock_rows(feats.tags)
        self._rows_cache[user_id] = (feats, rows)
        return rows

    def _stream(self, rows, labels):
        store, model, strategy = self.store_, self.model_, self.strategy_
        tables = model.tables
        warm_end = self.warmup_days * MINUTES_PER_DAY
        every = self.telemetry_every
        day = store.watermark_day
        for row, y in zip(rows, labels):
            uid, iid, minutes, g, m, lang, like, fin, skip, dis, _ = row
            if minutes // MINUTES_PER_DAY != day:
                day = minutes // MINUTES_PER_DAY
                store.expire(minutes)
            if minutes >= warm_end:
                minute_of_day = minutes % MINUTES_PER_DAY
                hour = minute_of_day // 60
                plan_rows, weights = clock_plan(self._clock_rows(uid), minute_of_day / 60.0, strategy,
                                                tables.hour_row(hour), tables.day_row(day % 7))
                static = tables.static_rows(uid, iid, g, m, lang)
                self._loss_sum += model.train_step(static, plan_rows, weights, y)
                self._loss_n += 1
                self.n_steps_ += 1
                self.hour_counts_[hour] += 1
                if self.n_steps_ % every == 0:
                    self.telemetry_.append((self.n_steps_, minutes, self._loss_sum / self._loss_n,
                                            strategy.kind))
                    self._loss_sum, self._loss_n = 0.0, 0
            store.ingest(uid, minutes, g, m, lang, like, fin, skip, dis)

    # -- frozen inference ------------------------------------------------

    def _design(self, X):
        model, tables, strategy = self.model_, self.model_.tables, self.strategy_
        E = tables.weights
        n = X.size
        static = np.empty((n, 5), dtype=np.int64)
        for i, (uid, iid, g, m, lang) in enumerate(zip(X["user_id"].tolist(), X["item_id"].tolist(),
                                                       X["genre"].tolist(), X["mood"].tolist(),
                                                       X["language"].tolist())):
            static[i] = tables.static_rows(uid, iid, g, m, lang)
        minutes = X["epoch_minutes"] % MINUTES_PER_DAY
        cur = minutes / 60.0
        if strategy.integer_hours:
            cur = np.floor(cur)
        hours = minutes // 60
        parts = [E[static].reshape(n, -1)]
        if strategy.kind == "time_encoding":
            te = np.stack([tables.offsets["hour"] + hours,
                           tables.offsets["day"] + (X["epoch_minutes"] // MINUTES_PER_DAY) % 7], axis=1)
            parts.append(E[te].reshape(n, -1))
        else:
            clock = np.stack([self._clock_rows(u) for u in X["user_id"].tolist()])
            if strategy.kind == "naive":
                parts.append(E[clock[np.arange(n), hours]].reshape(n, -1))
            elif strategy.kind == "adaptive":
                parts.append(E[clock].reshape(n, -1))
            else:
                w = np.stack([hour_weights(c, strategy.sigma, strategy.mu) for c in cur.tolist()])
                parts.append(np.einsum("nt,ntkd->nkd", w, E[clock]).reshape(n, -1))
        return np.concatenate(parts, axis=1)

    def decision_function(self, X):
        """Logits for ``X`` without touching parameters or the feature store."""
        check_is_fitted(self, "model_")
        X = check_events(X)
        out = np.empty(X.size)
        for lo in range(0, X.size, _BATCH):
            out[lo:lo + _BATCH] = self.model_.logits(self._design(X[lo:lo + _BATCH]))
        return out

    def predict_proba(self, X):
        p = sigmoid(self.decision_function(X))
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        return (self.decision_function(X) > 0).astype(int)

    def score(self, X, y=None, sample_weight=None):
        """ROC AUC of the finish probability (``y`` defaults to the finish labels)."""
        from .metrics import auc

        X = check_events(X)
        labels = X["finish"] if y is None else np.asarray(y)
        return auc(self.decision_function(X), labels)

    # -- persistence -----------------------------------------------------

    def frozen_copy(self):
        return copy.deepcopy(self)

    def save(self, directory) -> None:
        check_is_fitted(self, "model_")
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        self.model_.save(directory / "model.bin")
        self.store_.snapshot(directory / "store.iclk")
        params = self.get_params()
        params["vocab"] = [list(v) for v in self.store_.vocab.facets]
        params["hidden"] = list(params["hidden"])
        params["score_weights"] = list(params["score_weights"])
        state = {"params": params, "n_steps": self.n_steps_,
                 "hour_counts": self.hour_counts_.tolist()}
        (directory / "estimator.json").write_text(json.dumps(state, sort_keys=True, indent=1) + "\n")

    @classmethod
    def load(cls, directory) -> "InterestClockClassifier":
        directory = Path(directory)
        state = json.loads((directory / "estimator.json").read_text())
        params = state["params"]
        params["vocab"] = Vocabulary(*(tuple(v) for v in params["vocab"]))
        params["hidden"] = tuple(params["hidden"])
        params["score_weights"] = tuple(params["score_weights"])
        est = cls(**params)
        est._init_state()
        est.model_ = StreamingMLP.load(directory / "model.bin")
        est.store_ = HourlyTagStore.restore(directory / "store.iclk")
        est.n_steps_ = state["n_steps"]
        est.hour_counts_ = np.array(state["hour_counts"], dtype=np.int64)
        return est

    def __getstate__(self):
        state = self.__dict__.copy()
        state.pop("_rows_cache", None)
        return state

    def __setstate__(self, state):
        self.__dict__.update(state)
        self._rows_cache = {}

