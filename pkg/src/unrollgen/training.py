"""L1 training loss, hand-written reverse-mode gradients and plain SGD."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .networks import Arch, ForwardTrace, NetworkParams, forward_batch, project_stack
from .rng import child_stream


class TrainingDiverged(FloatingPointError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    epochs: int = 500
    batch_size: int = 32
    seed: int = 0
    projection: tuple[float, float] | None = None
    clip_output: bool | None = None
    shuffle: bool = True
    # stop once the train loss improved by less than early_stop_tol over the
    # last early_stop_window epochs; a window of 0 disables the rule
    early_stop_window: int = 20
    early_stop_tol: float = 1e-6
    # hard cap on SGD steps across all epochs; None means epochs alone decide
    max_steps: int | None = None

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning rate must be nonnegative")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")


@dataclass
class GradientSet:
    W1: np.ndarray
    W2: np.ndarray | None = None


def loss(prediction, target) -> float:
    """Mean absolute error over coordinates."""
    prediction = np.asarray(prediction, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if prediction.shape != target.shape:
        raise ValueError(f"shape mismatch {prediction.shape} vs {target.shape}")
    return float(np.abs(prediction - target).mean())


def _batch_losses(prediction: np.ndarray, X: np.ndarray) -> np.ndarray:
    return np.abs(prediction - X).mean(axis=1)


def _backward_batch(params: NetworkParams, trace: ForwardTrace, X: np.ndarray):
    """Gradients of the batch-mean loss with respect to ``W1`` (and ``W2``)."""
    N, n_x = X.shape
    out = trace.h[-1]
    g = np.sign(trace.prediction - X) / (N * n_x)
    if params.clip_output:
        g = g * ((out > -1.0) & (out < 1.0))

    L = params.L
    lam = params.lam
    gW1 = np.empty_like(params.W1)
    gW2 = np.empty_like(params.W2) if params.bias_mode == "learned" else None
    Y = trace.y

    if params.arch is Arch.ADMM:
        gamma = params.gamma
        gh = g
        gz = np.zeros_like(g)
        gu = np.zeros_like(g)
        for l in range(L, 0, -1):
            # u_l = u_{l-1} - gamma (h_l - z_l)
            gh = gh - gamma * gu
            gz = gz + gamma * gu
            gu_prev = gu.copy()
            # z_l = S(a_l), a_l = h_l - u_{l-1}
            ga = gz * (np.abs(trace.pre[l]) > lam)
            gh = gh + ga
            gu_prev -= ga
            # h_l = W_l (z_{l-1} + u_{l-1}) + bias_l
            gW1[l - 1] = gh.T @ (trace.z[l - 1] + trace.u[l - 1])
            if gW2 is not None:
                gW2[l - 1] = gh.T @ Y
            back = gh @ params.W1[l - 1]
            gz = back
            gu = gu_prev + back
            gh = np.zeros_like(g)
    else:
        relu_net = params.arch is Arch.RELU
        for l in range(L, 0, -1):
            p = trace.pre[l]
            gp = g * (p > 0) if relu_net else g * (np.abs(p) > lam)
            gW1[l - 1] = gp.T @ trace.h[l - 1]
            if gW2 is not None:
                gW2[l - 1] = gp.T @ Y
            if l > 1:
                g = gp @ params.W1[l - 1]
    return gW1, gW2


def _as_batch(trace: ForwardTrace) -> ForwardTrace:
    up = lambda seq: [a[None, :] for a in seq]  # noqa: E731
    return ForwardTrace(trace.arch, trace.y[None, :], up(trace.h), up(trace.pre), up(trace.bias),
                        up(trace.z), up(trace.u), trace.prediction[None, :])


def backward(params: NetworkParams, A, sample, trace: ForwardTrace | None = None):
    """Loss and exact (sub)gradients for one ``(x, y)`` sample or a batch.

    With a batch, the loss and gradients are averaged over samples.
    """
    x, y = sample
    X = np.atleast_2d(np.asarray(x, dtype=np.float64))
    Y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    if trace is None:
        trace = forward_batch(params, A, Y)
    elif np.ndim(trace.y) == 1:
        trace = _as_batch(trace)
    if trace.L != params.L or trace.arch is not params.arch or trace.h[-1].shape[1] != params.n_x:
        raise ValueError("trace was not produced by these parameters")
    if trace.prediction.shape != X.shape or not np.array_equal(trace.y, Y):
        raise ValueError("trace was produced for different inputs")
    value = float(_batch_losses(trace.prediction, X).mean())
    gW1, gW2 = _backward_batch(params, trace, X)
    return value, GradientSet(gW1, gW2)


def evaluate(params: NetworkParams, A, dataset) -> float:
    """Mean test loss; clipping follows ``params.clip_output``."""
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    total = 0.0
    for start in range(0, len(dataset), 4096):
        sl = slice(start, start + 4096)
        pred = forward_batch(params, A, dataset.Y[sl]).prediction
        total += _batch_losses(pred, dataset.X[sl]).sum()
    return float(total / len(dataset))


def train(params: NetworkParams, A, train_set, cfg: TrainConfig):
    """Minibatch SGD on the L1 loss.

    Returns the trained parameters and the full-train-set loss after each
    completed epoch. Raises ``TrainingDiverged`` on a non-finite loss.
    """
    if cfg.clip_output is not None:
        params = replace(params, clip_output=cfg.clip_output)
    m = len(train_set)
    batch = min(cfg.batch_size, m)
    lr = cfg.learning_rate
    X, Y = train_set.X, train_set.Y
    W1 = params.W1.copy()
    W2 = params.W2.copy() if params.W2 is not None else None
    if cfg.projection is not None:
        W1 = project_stack(W1, *cfg.projection)
    cur = params.with_weights(W1, W2)

    history: list[float] = []
    steps = 0
    for epoch in range(cfg.epochs):
        if cfg.shuffle:
            order = child_stream(cfg.seed, "shuffle", epoch).permutation(m)
        else:
            order = np.arange(m)
        for start in range(0, m, batch):
            if cfg.max_steps is not None and steps >= cfg.max_steps:
                break
            steps += 1
            idx = order[start:start + batch]
            trace = forward_batch(cur, A, Y[idx])
            gW1, gW2 = _backward_batch(cur, trace, X[idx])
            if lr:
                W1 = W1 - lr * gW1
                if W2 is not None:
                    W2 = W2 - lr * gW2
                if cfg.projection is not None:
                    W1 = project_stack(W1, *cfg.projection)
                cur = cur.with_weights(W1, W2)
        history.append(evaluate(cur, A, train_set))
        if not np.isfinite(history[-1]):
            raise TrainingDiverged(f"non-finite training loss at epoch {epoch}")
        if cfg.max_steps is not None and steps >= cfg.max_steps:
            break
        w = cfg.early_stop_window
        if w and len(history) > w and history[-w - 1] - history[-1] < cfg.early_stop_tol:
            break
    return cur, history
