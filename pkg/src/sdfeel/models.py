"""Model families, cross-entropy objectives and the local SGD step.

Parameters are flat ``float64`` vectors.  Each family also offers
``stacked_grad``, which evaluates one mini-batch gradient per client for a
``C x M`` stack of client models in a single vectorized call.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigurationError, DivergenceError
from .rng import stream

INIT_STD = 0.01
MODEL_FAMILIES = ("softmax", "mlp", "quadratic")


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _one_hot(y: np.ndarray, k: int) -> np.ndarray:
    out = np.zeros(y.shape + (k,))
    np.put_along_axis(out, y[..., None], 1.0, axis=-1)
    return out


class _Family:
    n_params: int

    def init_params(self, seed: int) -> np.ndarray:
        """Seeded Gaussian initialization, shared by every client."""
        return stream(seed, "init").normal(0.0, INIT_STD, size=self.n_params)

    def check(self, w: np.ndarray) -> np.ndarray:
        w = np.asarray(w, dtype=np.float64)
        if w.shape != (self.n_params,):
            raise ConfigurationError(f"expected {self.n_params} parameters, got shape {w.shape}")
        return w

    def stacked_grad(self, ws: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
        return np.stack([self.grad(w, x, y) for w, x, y in zip(ws, xs, ys)])

    def accuracy(self, w, x, y) -> float:
        return float(np.mean(self.predict(w, x) == np.asarray(y)))


@dataclass(frozen=True)
class SoftmaxRegression(_Family):
    """Multinomial logistic regression, parameters ``[W (F x K), b (K)]``."""

    n_features: int
    n_classes: int

    @property
    def n_params(self) -> int:
        return (self.n_features + 1) * self.n_classes

    def unpack(self, w):
        f, k = self.n_features, self.n_classes
        return w[..., : f * k].reshape(w.shape[:-1] + (f, k)), w[..., f * k :]

    def logits(self, w, x):
        weight, bias = self.unpack(self.check(w))
        return x @ weight + bias

    def loss(self, w, x, y) -> float:
        y = np.asarray(y)
        if y.size == 0:
            raise ConfigurationError("loss needs at least one sample")
        logp = _log_softmax(self.logits(w, x))
        return float(-np.mean(np.take_along_axis(logp, y[:, None], axis=1)))

    def grad(self, w, x, y) -> np.ndarray:
        y = np.asarray(y)
        err = (_softmax(self.logits(w, x)) - _one_hot(y, self.n_classes)) / y.size
        return np.concatenate([(x.T @ err).ravel(), err.sum(axis=0)])

    def stacked_grad(self, ws, xs, ys):
        weight, bias = self.unpack(ws)
        z = np.einsum("cbf,cfk->cbk", xs, weight) + bias[:, None, :]
        err = (_softmax(z) - _one_hot(ys, self.n_classes)) / ys.shape[1]
        gw = np.einsum("cbf,cbk->cfk", xs, err).reshape(ws.shape[0], -1)
        return np.concatenate([gw, err.sum(axis=1)], axis=1)

    def predict(self, w, x):
        return np.argmax(self.logits(w, x), axis=1)


@dataclass(frozen=True)
class MLP(_Family):
    """One tanh hidden layer, parameters ``[W1, b1, W2, b2]``."""

    n_features: int
    n_classes: int
    hidden: int = 32

    @property
    def n_params(self) -> int:
        f, h, k = self.n_features, self.hidden, self.n_classes
        return f * h + h + h * k + k

    def unpack(self, w):
        f, h, k = self.n_features, self.hidden, self.n_classes
        lead = w.shape[:-1]
        cuts = np.cumsum([f * h, h, h * k])
        w1, b1, w2, b2 = np.split(w, cuts, axis=-1)
        return w1.reshape(lead + (f, h)), b1, w2.reshape(lead + (h, k)), b2

    def _forward(self, w, x):
        w1, b1, w2, b2 = self.unpack(self.check(w))
        a = np.tanh(x @ w1 + b1)
        return a, a @ w2 + b2

    def loss(self, w, x, y) -> float:
        y = np.asarray(y)
        if y.size == 0:
            raise ConfigurationError("loss needs at least one sample")
        _, z = self._forward(w, x)
        return float(-np.mean(np.take_along_axis(_log_softmax(z), y[:, None], axis=1)))

    def grad(self, w, x, y) -> np.ndarray:
        y = np.asarray(y)
        w = self.check(w)
        _, _, w2, _ = self.unpack(w)
        a, z = self._forward(w, x)
        err = (_softmax(z) - _one_hot(y, self.n_classes)) / y.size
        back = (err @ w2.T) * (1.0 - a * a)
        return np.concatenate([(x.T @ back).ravel(), back.sum(axis=0), (a.T @ err).ravel(), err.sum(axis=0)])

    def stacked_grad(self, ws, xs, ys):
        w1, b1, w2, b2 = self.unpack(ws)
        a = np.tanh(np.einsum("cbf,cfh->cbh", xs, w1) + b1[:, None, :])
        z = np.einsum("cbh,chk->cbk", a, w2) + b2[:, None, :]
        err = (_softmax(z) - _one_hot(ys, self.n_classes)) / ys.shape[1]
        back = np.einsum("cbk,chk->cbh", err, w2) * (1.0 - a * a)
        c = ws.shape[0]
        return np.concatenate(
            [
                np.einsum("cbf,cbh->cfh", xs, back).reshape(c, -1),
                back.sum(axis=1),
                np.einsum("cbh,cbk->chk", a, err).reshape(c, -1),
                err.sum(axis=1),
            ],
            axis=1,
        )

    def predict(self, w, x):
        return np.argmax(self._forward(w, x)[1], axis=1)


@dataclass(frozen=True)
class QuadraticModel(_Family):
    """``f(w; x) = 0.5 sum_k a_k (w_k - x_k)^2``; labels are ignored.

    The Hessian is ``diag(a)``, so the smoothness constant is ``max(a)``.
    """

    curvature: tuple

    @property
    def n_params(self) -> int:
        return len(self.curvature)

    @property
    def smoothness(self) -> float:
        return float(max(self.curvature))

    def loss(self, w, x, y=None) -> float:
        a = np.asarray(self.curvature, dtype=np.float64)
        diff = self.check(w) - np.asarray(x, dtype=np.float64)
        return float(np.mean(0.5 * (diff * diff) @ a))

    def grad(self, w, x, y=None) -> np.ndarray:
        a = np.asarray(self.curvature, dtype=np.float64)
        return a * (self.check(w) - np.asarray(x, dtype=np.float64).mean(axis=0))

    def predict(self, w, x):
        return np.zeros(np.asarray(x).shape[0], dtype=np.int64)


def make_model(family: str, n_features: int, n_classes: int, hidden: int = 32):
    if family == "softmax":
        return SoftmaxRegression(n_features, n_classes)
    if family == "mlp":
        return MLP(n_features, n_classes, hidden)
    raise ConfigurationError(f"unknown model family {family!r}; expected 'softmax' or 'mlp'")


def sgd_step(model, w, x, y, eta: float, iteration: int | None = None) -> np.ndarray:
    """``w - eta * grad``; raises :class:`DivergenceError` on a non-finite result."""
    if eta < 0:
        raise ConfigurationError("learning rate must be non-negative")
    out = np.asarray(w, dtype=np.float64) - eta * model.grad(w, x, y)
    if not np.all(np.isfinite(out)):
        raise DivergenceError("non-finite parameters after SGD step", iteration)
    return out


class BatchSampler:
    """Uniform with-replacement mini-batches keyed by ``(seed, step)`` and client.

    One uniform ``C x B`` matrix is drawn per step; client ``i`` takes row
    ``i`` scaled to its shard size.  Any engine asking for client ``i``'s
    ``s``-th batch therefore receives the same indices.  ``batch_size=None``
    means full-shard batches.
    """

    def __init__(self, seed: int, shard_sizes, batch_size: int | None, cache: int = 64):
        self.seed = int(seed)
        self.sizes = np.asarray(shard_sizes, dtype=np.int64)
        if batch_size is not None and batch_size < 1:
            raise ConfigurationError("batch size must be positive")
        self.batch_size = batch_size
        self._cache: dict[int, np.ndarray] = {}
        self._cache_size = cache

    def _uniforms(self, step: int) -> np.ndarray:
        u = self._cache.get(step)
        if u is None:
            u = stream(self.seed, "batch", step).random((self.sizes.size, self.batch_size))
            if len(self._cache) >= self._cache_size:
                self._cache.pop(next(iter(self._cache)))
            self._cache[step] = u
        return u

    def draw(self, step: int) -> np.ndarray:
        """Local indices for every client, shape ``C x B``."""
        return np.floor(self._uniforms(step) * self.sizes[:, None]).astype(np.int64)

    def draw_one(self, client: int, step: int) -> np.ndarray:
        if self.batch_size is None:
            return np.arange(self.sizes[client])
        return np.floor(self._uniforms(step)[client] * self.sizes[client]).astype(np.int64)


class ClientData:
    """Per-client feature and label shards plus stacked batch gathering."""

    def __init__(self, dataset, partition):
        self.x = [dataset.features[s] for s in partition.assignment]
        self.y = [dataset.labels[s] for s in partition.assignment]
        self.sizes = partition.sizes
        offsets = np.concatenate([[0], np.cumsum(self.sizes)[:-1]])
        self._offsets = offsets
        self._x_all = np.concatenate(self.x)
        self._y_all = np.concatenate(self.y)

    def gather(self, local_idx: np.ndarray, clients=None):
        """Stacked ``(C, B, F)`` features and ``(C, B)`` labels for row-wise local indices."""
        offs = self._offsets if clients is None else self._offsets[np.asarray(clients)]
        flat = local_idx + offs[:, None]
        return self._x_all[flat], self._y_all[flat]

    def pooled(self):
        return self._x_all, self._y_all


def local_gradients(model, ws, data: ClientData, sampler: BatchSampler, step: int, clients=None):
    """One stochastic gradient per client in ``clients`` (all by default) at ``step``."""
    clients = np.arange(len(data.x)) if clients is None else np.asarray(clients)
    if sampler.batch_size is None:
        return np.stack([model.grad(w, data.x[i], data.y[i]) for w, i in zip(ws, clients)])
    idx = sampler.draw(step)[clients]
    xs, ys = data.gather(idx, clients)
    return model.stacked_grad(ws, xs, ys)
