"""Embedding tables, a small ReLU MLP with manual backprop, and Adagrad.

All feature families live in one row-stacked matrix so a sample is just a
set of row indices plus the clock plan's slot weights; gradients for every
touched row are merged before the optimizer sees them.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .clock import ClockStrategy, SLOT_ROWS, combine
from .core import (
    HOURS_PER_DAY,
    N_FACETS,
    DimensionMismatch,
    DomainError,
    MissingEmbedding,
    NonFiniteGradient,
    Vocabulary,
)

CHECKPOINT_VERSION = 1
PROB_EPS = 1e-7
N_STATIC = 2 + N_FACETS  # user, item, one tag per facet
_MASK64 = (1 << 64) - 1


def _mix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=float)))


def loss(y, yhat):
    """Binary cross-entropy; ``yhat`` must lie strictly inside (0, 1)."""
    yhat = np.asarray(yhat, dtype=float)
    if ((yhat <= 0) | (yhat >= 1) | ~np.isfinite(yhat)).any():
        raise DomainError("predicted probability must lie strictly inside (0, 1)")
    y = np.asarray(y, dtype=float)
    out = -y * np.log(yhat) - (1.0 - y) * np.log1p(-yhat)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class Prediction:
    logit: float
    probability: float


class EmbeddingTables:
    """Row-stacked embedding matrix for every feature family.

    Families, in order: hashed user ids, hashed item ids, one table per tag
    facet (vocabulary plus a trailing null-tag row), 24 hour-of-day rows and
    7 day-of-week rows.
    """

    def __init__(self, vocab: Vocabulary, embedding_dim: int = 8, n_user_buckets: int = 2 ** 16,
                 n_item_buckets: int = 2 ** 16, rng: np.random.Generator | None = None):
        if embedding_dim < 1 or n_user_buckets < 1 or n_item_buckets < 1:
            raise ValueError("embedding_dim and bucket counts must be >= 1")
        self.vocab = vocab
        self.embedding_dim = embedding_dim
        sizes = {"user": n_user_buckets, "item": n_item_buckets}
        for name, n in zip(("genre", "mood", "language"), vocab.sizes):
            sizes[name] = n + 1
        sizes["hour"] = HOURS_PER_DAY
        sizes["day"] = 7
        self.sizes = sizes
        self.offsets = {}
        total = 0
        for name, n in sizes.items():
            self.offsets[name] = total
            total += n
        self.n_rows = total
        rng = rng or np.random.default_rng(0)
        self.weights = rng.uniform(-0.05, 0.05, size=(total, embedding_dim))
        self._tag_off = np.array([self.offsets[n] for n in ("genre", "mood", "language")])
        self._vocab_sizes = np.array(vocab.sizes)
        self._user_cache: dict[int, int] = {}
        self._item_cache: dict[int, int] = {}

    def user_row(self, user_id: int) -> int:
        row = self._user_cache.get(user_id)
        if row is None:
            row = self.offsets["user"] + _mix64(int(user_id)) % self.sizes["user"]
            self._user_cache[user_id] = row
        return row

    def item_row(self, item_id: int) -> int:
        row = self._item_cache.get(item_id)
        if row is None:
            row = self.offsets["item"] + _mix64(int(item_id) ^ 0x5BD1E995) % self.sizes["item"]
            self._item_cache[item_id] = row
        return row

    def tag_row(self, facet: int, tag: int) -> int:
        if tag < 0:
            return int(self._tag_off[facet] + self._vocab_sizes[facet])
        if tag >= self._vocab_sizes[facet]:
            raise MissingEmbedding(f"no embedding for tag index {tag} of facet {facet}")
        return int(self._tag_off[facet] + tag)

    def null_row(self, facet: int) -> int:
        return self.tag_row(facet, -1)

    def hour_row(self, hour: int) -> int:
        return self.offsets["hour"] + int(hour)

    def day_row(self, day_of_week: int) -> int:
        return self.offsets["day"] + int(day_of_week) % 7

    def clock_rows(self, tags: np.ndarray) -> np.ndarray:
        """Map a ``(..., 24, 3, 3)`` clock of tag indices to ``(..., 24, 9)`` rows."""
        tags = np.asarray(tags)
        if (tags >= self._vocab_sizes[:, None]).any():
            raise MissingEmbedding("clock references a tag outside the embedding tables")
        off = self._tag_off[:, None]
        rows = np.where(tags < 0, off + self._vocab_sizes[:, None], off + tags)
        return rows.reshape(tags.shape[:-2] + (SLOT_ROWS,))

    def static_rows(self, user_id, item_id, genre, mood, language) -> np.ndarray:
        return np.array([self.user_row(user_id), self.item_row(item_id),
                         self.tag_row(0, genre), self.tag_row(1, mood), self.tag_row(2, language)])


class StreamingMLP:
    """Embeddings -> hidden ReLU layers -> one logit, trained one sample at a time.

    The input is the five static embeddings (user, item, item tags)
    followed by the strategy's clock embedding.
    """

    def __init__(self, vocab: Vocabulary, strategy: ClockStrategy, embedding_dim: int = 8,
                 hidden=(64, 32), lr: float = 0.05, init_acc: float = 0.1,
                 n_user_buckets: int = 2 ** 16, n_item_buckets: int = 2 ** 16, seed: int = 0):
        if lr <= 0 or init_acc <= 0:
            raise ValueError("lr and init_acc must be > 0")
        self.strategy = strategy
        self.lr = float(lr)
        self.init_acc = float(init_acc)
        self.hidden = tuple(int(h) for h in hidden)
        rng = np.random.default_rng(seed)
        self.tables = EmbeddingTables(vocab, embedding_dim, n_user_buckets, n_item_buckets, rng)
        self.input_dim = N_STATIC * embedding_dim + strategy.output_dim(embedding_dim)
        widths = (self.input_dim,) + self.hidden + (1,)
        shapes = []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            shapes += [(fan_in, fan_out), (fan_out,)]
        # MLP parameters, their gradient and Adagrad accumulator share one flat layout
        self.theta = np.zeros(sum(math.prod(sh) for sh in shapes))
        self.theta_acc = np.full(self.theta.size, self.init_acc)
        self._grad = np.zeros(self.theta.size)
        self._shapes = shapes
        self._widths = np.array(widths, dtype=np.int64)
        self._bind()
        for (W, _), fan_in in zip(self.layers, widths[:-1]):
            W[...] = rng.standard_normal(W.shape) / math.sqrt(fan_in)
        self.emb_acc = np.full(self.tables.weights.shape, self.init_acc)
        self.n_updates = 0

    def _bind(self):
        self.layers = self._views(self.theta, self._shapes)
        self._grad_layers = self._views(self._grad, self._shapes)

    # layer views alias theta; copies must re-point them at the new buffers
    def __getstate__(self):
        state = self.__dict__.copy()
        del state["layers"], state["_grad_layers"]
        return state

    def __setstate__(self, state):
        self.__dict__.update(state)
        self._bind()

    @staticmethod
    def _views(flat, shapes):
        views, pos = [], 0
        for sh in shapes:
            n = math.prod(sh)
            views.append(flat[pos:pos + n].reshape(sh))
            pos += n
        return [views[i:i + 2] for i in range(0, len(views), 2)]

    @property
    def embedding_dim(self) -> int:
        return self.tables.embedding_dim

    # -- forward ---------------------------------------------------------

    def build_input(self, static_rows, plan_rows, plan_weights) -> np.ndarray:
        E = self.tables.weights
        return np.concatenate([E[static_rows].ravel(), combine(E, plan_rows, plan_weights)])

    def logits(self, X: np.ndarray) -> np.ndarray:
        """Logits for a batch of inputs, shape ``(n, input_dim)``."""
        X = np.atleast_2d(X)
        if X.shape[1] != self.input_dim:
            raise DimensionMismatch(f"input width {X.shape[1]} != model width {self.input_dim}")
        h = X
        for W, b in self.layers[:-1]:
            h = np.maximum(h @ W + b, 0.0)
        W, b = self.layers[-1]
        return (h @ W + b)[:, 0]

    def forward(self, x: np.ndarray) -> Prediction:
        z = float(self.logits(x)[0])
        return Prediction(z, float(sigmoid(z)))

    # -- backward --------------------------------------------------------

    def gradients(self, static_rows, plan_rows, plan_weights, y: float):
        """Loss and gradients for one sample.

        Returns ``(loss, grad, rows, row_grads)``: ``grad`` is the flat MLP
        gradient (laid out like ``theta``; an internal buffer reused by the next
        call), ``rows`` the unique embedding rows touched and ``row_grads``
        their summed gradients.
        """
        d = self.embedding_dim
        x = self.build_input(static_rows, plan_rows, plan_weights)
        acts = [x]
        pre = []
        h = x
        for W, b in self.layers[:-1]:
            z = h @ W + b
            pre.append(z)
            h = np.maximum(z, 0.0)
            acts.append(h)
        W, b = self.layers[-1]
        logit = float(h @ W[:, 0] + b[0])
        p = float(sigmoid(logit))
        pc = min(max(p, PROB_EPS), 1.0 - PROB_EPS)
        value = -y * math.log(pc) - (1.0 - y) * math.log(1.0 - pc)

        delta = np.array([p - y])
        for i in range(len(self.layers) - 1, -1, -1):
            W = self.layers[i][0]
            gW, gb = self._grad_layers[i]
            np.outer(acts[i], delta, out=gW)
            gb[...] = delta
            delta = W @ delta
            if i > 0:
                delta = delta * (pre[i - 1] > 0)
        dx = delta

        n_static = N_STATIC * d
        d_static = dx[:n_static].reshape(N_STATIC, d)
        d_clock = dx[n_static:].reshape(plan_rows.shape[1], d)
        slot_grads = plan_weights[:, None, None] * d_clock[None, :, :]
        all_rows = np.concatenate([static_rows, plan_rows.ravel()])
        all_grads = np.concatenate([d_static, slot_grads.reshape(-1, d)])
        rows, inverse = np.unique(all_rows, return_inverse=True)
        row_grads = np.zeros((rows.size, d))
        np.add.at(row_grads, inverse, all_grads)
        return value, self._grad, rows, row_grads

    def train_step(self, static_rows, plan_rows, plan_weights, y: float) -> float:
        """One Adagrad step on the cross-entropy of a single sample."""
        value, ok = _kernels.train_step(
            self.theta, self.theta_acc, self._widths, self.tables.weights, self.emb_acc,
            np.asarray(static_rows, dtype=np.int64), np.asarray(plan_rows, dtype=np.int64),
            np.asarray(plan_weights, dtype=float), float(y), self.lr, PROB_EPS)
        if not ok:
            raise NonFiniteGradient(f"non-finite gradient at update {self.n_updates} (loss={value!r})")
        self.n_updates += 1
        return value

    def reference_step(self, static_rows, plan_rows, plan_weights, y: float) -> float:
        """``train_step`` written with plain NumPy from :meth:`gradients`."""
        value, grad, rows, row_grads = self.gradients(static_rows, plan_rows, plan_weights, y)
        if not math.isfinite(row_grads.sum() + grad.sum()):
            raise NonFiniteGradient(f"non-finite gradient at update {self.n_updates} (loss={value!r})")
        self.theta_acc += grad * grad
        self.theta -= self.lr * grad / np.sqrt(self.theta_acc)
        acc = self.emb_acc[rows] + row_grads * row_grads
        self.emb_acc[rows] = acc
        self.tables.weights[rows] -= self.lr * row_grads / np.sqrt(acc)
        self.n_updates += 1
        return value

    # -- persistence -----------------------------------------------------

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {"embeddings": self.tables.weights, "embedding_acc": self.emb_acc,
                "mlp": self.theta, "mlp_acc": self.theta_acc}

    def save(self, path) -> None:
        """Write a deterministic binary checkpoint (header line + raw arrays)."""
        arrays = self.state_arrays()
        meta = {
            "version": CHECKPOINT_VERSION,
            "strategy": [self.strategy.kind, self.strategy.sigma, self.strategy.mu,
                         self.strategy.integer_hours],
            "embedding_dim": self.embedding_dim,
            "hidden": list(self.hidden),
            "lr": self.lr,
            "init_acc": self.init_acc,
            "n_user_buckets": self.tables.sizes["user"],
            "n_item_buckets": self.tables.sizes["item"],
            "vocab": [list(v) for v in self.tables.vocab.facets],
            "n_updates": self.n_updates,
            "arrays": [[name, list(a.shape)] for name, a in arrays.items()],
        }
        with open(path, "wb") as fh:
            fh.write(b"ICMODEL\n")
            fh.write(json.dumps(meta, sort_keys=True).encode() + b"\n")
            for a in arrays.values():
                fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path) -> "StreamingMLP":
        with open(path, "rb") as fh:
            if fh.readline() != b"ICMODEL\n":
                raise ValueError(f"{path} is not a model checkpoint")
            meta = json.loads(fh.readline())
            if meta.get("version") != CHECKPOINT_VERSION:
                raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
            kind, sigma, mu, integer_hours = meta["strategy"]
            model = cls(Vocabulary(*(tuple(v) for v in meta["vocab"])),
                        ClockStrategy(kind, sigma, mu, integer_hours),
                        meta["embedding_dim"], tuple(meta["hidden"]), meta["lr"], meta["init_acc"],
                        meta["n_user_buckets"], meta["n_item_buckets"])
            targets = model.state_arrays()
            for name, shape in meta["arrays"]:
                n = int(np.prod(shape))
                buf = fh.read(8 * n)
                if len(buf) != 8 * n:
                    raise ValueError(f"{path}: truncated array {name}")
                targets[name][...] = np.frombuffer(buf, dtype="<f8").reshape(shape)
            model.n_updates = meta["n_updates"]
        return model
