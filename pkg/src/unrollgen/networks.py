"""Unrolled ISTA, unrolled ADMM and ReLU networks for sparse recovery.

All three share the layout ``W1`` of shape ``(L, n_x, n_x)``; learned-bias
networks additionally carry ``W2`` of shape ``(L, n_x, n_y)``. Batched inputs
are row-stacked, so a layer computes ``H @ W.T + bias``.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np

from .numerics import clip, matrix_norms, relu, soft_threshold, spectral_norm


class Arch(str, Enum):
    ISTA = "ista"
    ADMM = "admm"
    RELU = "relu"


BIAS_MODES = ("constant", "learned")


@dataclass(frozen=True)
class NetworkParams:
    arch: Arch
    W1: np.ndarray
    lam: float
    gamma: float = 1.0
    bias_mode: str = "constant"
    W2: np.ndarray | None = None
    clip_output: bool = False

    def __post_init__(self):
        object.__setattr__(self, "arch", Arch(self.arch))
        W1 = np.asarray(self.W1, dtype=np.float64)
        if W1.ndim != 3 or W1.shape[1] != W1.shape[2] or W1.shape[0] < 1:
            raise ValueError(f"W1 must have shape (L, n_x, n_x), got {W1.shape}")
        object.__setattr__(self, "W1", W1)
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if self.arch is Arch.ADMM and not self.gamma > 0:
            raise ValueError("ADMM step size gamma must be positive")
        if self.bias_mode not in BIAS_MODES:
            raise ValueError(f"unknown bias mode {self.bias_mode!r}")
        if self.bias_mode == "learned":
            if self.W2 is None:
                raise ValueError("learned-bias networks need W2")
            W2 = np.asarray(self.W2, dtype=np.float64)
            if W2.ndim != 3 or W2.shape[:2] != W1.shape[:2]:
                raise ValueError(f"W2 must have shape (L, n_x, n_y), got {W2.shape}")
            object.__setattr__(self, "W2", W2)
        elif self.W2 is not None:
            raise ValueError("W2 is only used in learned-bias mode")

    @property
    def L(self) -> int:
        return self.W1.shape[0]

    @property
    def n_x(self) -> int:
        return self.W1.shape[1]

    def with_weights(self, W1, W2=None) -> "NetworkParams":
        return replace(self, W1=W1, W2=W2 if self.bias_mode == "learned" else None)


@dataclass
class ForwardTrace:
    """Intermediate values of one forward pass.

    ``h[l]`` for ``l = 0..L`` are the layer outputs (for ADMM ``h[0]`` is a
    zero placeholder). ``pre[l]`` is the argument of the nonlinearity that
    produced ``h[l]`` (ISTA/ReLU) or ``z[l]`` (ADMM). ``bias[l]`` is the
    additive term of layer ``l``; ``bias[0]`` feeds the initial activation.
    """

    arch: Arch
    y: np.ndarray
    h: list
    pre: list
    bias: list
    z: list = field(default_factory=list)
    u: list = field(default_factory=list)
    prediction: np.ndarray | None = None

    @property
    def L(self) -> int:
        return len(self.h) - 1


def _activation(arch: Arch, v: np.ndarray, lam: float) -> np.ndarray:
    if arch is Arch.RELU:
        return relu(v)
    return soft_threshold(v, lam)


def forward_batch(params: NetworkParams, A: np.ndarray, Y: np.ndarray) -> ForwardTrace:
    """Forward pass on row-stacked observations ``Y`` of shape (N, n_y)."""
    A = getattr(A, "A", A)
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim != 2 or Y.shape[1] != A.shape[0]:
        raise ValueError(f"observations of shape {Y.shape} do not match A {A.shape}")
    if A.shape[1] != params.n_x:
        raise ValueError("sensing matrix and weights disagree on n_x")
    if params.bias_mode == "learned" and params.W2.shape[2] != A.shape[0]:
        raise ValueError("W2 does not match the observation dimension")

    b0 = Y @ A
    if params.bias_mode == "learned":
        biases = [b0] + [Y @ params.W2[l].T for l in range(params.L)]
    else:
        biases = [b0] * (params.L + 1)

    lam = params.lam
    if params.arch is Arch.ADMM:
        zero = np.zeros_like(b0)
        h, pre, z, u = [zero], [zero], [zero], [zero]
        for l in range(params.L):
            hl = (z[-1] + u[-1]) @ params.W1[l].T + biases[l + 1]
            a = hl - u[-1]
            zl = soft_threshold(a, lam)
            ul = u[-1] - params.gamma * (hl - zl)
            h.append(hl)
            pre.append(a)
            z.append(zl)
            u.append(ul)
        trace = ForwardTrace(params.arch, Y, h, pre, biases, z, u)
    else:
        pre = [b0]
        h = [_activation(params.arch, b0, lam)]
        for l in range(params.L):
            p = h[-1] @ params.W1[l].T + biases[l + 1]
            pre.append(p)
            h.append(_activation(params.arch, p, lam))
        trace = ForwardTrace(params.arch, Y, h, pre, biases)

    out = trace.h[-1]
    trace.prediction = clip(out, -1.0, 1.0) if params.clip_output else out
    return trace


def forward(params: NetworkParams, A, y) -> ForwardTrace:
    """Forward pass for one observation vector or a row-stacked batch."""
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 2:
        return forward_batch(params, A, y)
    if y.ndim != 1:
        raise ValueError("y must be a vector or a 2-D batch")
    t = forward_batch(params, A, y[None, :])
    sq = lambda seq: [a[0] for a in seq]  # noqa: E731
    return ForwardTrace(
        t.arch, y, sq(t.h), sq(t.pre), sq(t.bias), sq(t.z), sq(t.u), t.prediction[0]
    )


def predict(params: NetworkParams, A, Y) -> np.ndarray:
    return forward(params, A, Y).prediction


# --- classical iterations --------------------------------------------------

def classical_ista(A, y, lam: float, iters: int) -> np.ndarray:
    """Plain ISTA with unit step, ``x <- S(x - A^T A x + A^T y)`` from ``S(A^T y)``."""
    A = getattr(A, "A", A)
    y = np.asarray(y, dtype=np.float64)
    b = A.T @ y
    x = soft_threshold(b, lam)
    for _ in range(iters):
        x = soft_threshold(x - A.T @ (A @ x) + b, lam)
    return x


def classical_admm(A, y, lam: float, gamma: float, W, iters: int) -> np.ndarray:
    """ADMM-style iteration with one weight matrix ``W`` shared by every step."""
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    A = getattr(A, "A", A)
    W = np.asarray(W, dtype=np.float64)
    b = A.T @ np.asarray(y, dtype=np.float64)
    z = np.zeros_like(b)
    u = np.zeros_like(b)
    h = z
    for _ in range(iters):
        h = W @ (z + u) + b
        z = soft_threshold(h - u, lam)
        u = u - gamma * (h - z)
    return h


# --- construction, norms, projection ---------------------------------------

def init_weights(
    arch,
    A,
    L: int,
    lam: float,
    perturb_scale: float = 0.0,
    rng: np.random.Generator | None = None,
    gamma: float = 1.0,
    bias_mode: str = "constant",
    clip_output: bool = False,
) -> NetworkParams:
    """Classical initialization ``W1 = I - A^T A`` (``W2 = A^T``) plus uniform noise."""
    A = getattr(A, "A", A)
    n_y, n_x = A.shape
    base = np.eye(n_x) - A.T @ A
    W1 = np.repeat(base[None], L, axis=0)
    W2 = np.repeat(A.T[None], L, axis=0) if bias_mode == "learned" else None
    if perturb_scale > 0:
        if rng is None:
            raise ValueError("a random stream is required for perturbed initialization")
        W1 = W1 + rng.uniform(-perturb_scale, perturb_scale, size=W1.shape)
        if W2 is not None:
            W2 = W2 + rng.uniform(-perturb_scale, perturb_scale, size=W2.shape)
    return NetworkParams(
        arch=Arch(arch), W1=W1, lam=lam, gamma=gamma, bias_mode=bias_mode, W2=W2,
        clip_output=clip_output,
    )


def weight_norms(params: NetworkParams) -> dict:
    """Per-layer ``||W1^l||_inf`` and the spectral norm of the first layer."""
    return {
        "linf": [float(np.abs(W).sum(axis=1).max()) for W in params.W1],
        "spectral_first": spectral_norm(params.W1[0]),
    }


def project_weights(params: NetworkParams, B: float, B1: float) -> NetworkParams:
    """Scale rows of every layer down to L1 norm ``B``; cap the first layer's 2-norm at ``B1``."""
    if not (B > 0 and B1 > 0):
        raise ValueError("norm caps must be positive")
    return params.with_weights(project_stack(params.W1, B, B1), params.W2)


def project_stack(W1: np.ndarray, B: float, B1: float) -> np.ndarray:
    rows = np.abs(W1).sum(axis=2, keepdims=True)
    factor = np.where(rows > B, B / np.where(rows > 0, rows, 1.0), 1.0)
    out = W1 * factor
    # exact LAPACK 2-norm here: power iteration underestimates, which would
    # leave the projected layer slightly outside the ball
    s = np.linalg.norm(out[0], 2)
    if s > B1:
        out[0] = out[0] * (B1 / s)
    return out


# --- checkpoints -----------------------------------------------------------

_MAGIC = b"UNRLCKPT"
_VERSION = 1
_HEADER = struct.Struct("<8sII")
_META = struct.Struct("<BBBxIIIdd")
_ARCH_CODES = {Arch.ISTA: 0, Arch.ADMM: 1, Arch.RELU: 2}


def save_checkpoint(params: NetworkParams, path) -> None:
    n_y = params.W2.shape[2] if params.W2 is not None else 0
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, _VERSION, 0))
        fh.write(
            _META.pack(
                _ARCH_CODES[params.arch], BIAS_MODES.index(params.bias_mode),
                int(params.clip_output), params.L, params.n_x, n_y, params.lam, params.gamma,
            )
        )
        fh.write(np.ascontiguousarray(params.W1, dtype="<f8").tobytes())
        if params.W2 is not None:
            fh.write(np.ascontiguousarray(params.W2, dtype="<f8").tobytes())


def load_checkpoint(path) -> NetworkParams:
    raw = Path(path).read_bytes()
    magic, version, _ = _HEADER.unpack_from(raw, 0)
    if magic != _MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    arch, bias, clip_out, L, n_x, n_y, lam, gamma = _META.unpack_from(raw, _HEADER.size)
    off = _HEADER.size + _META.size
    n1 = L * n_x * n_x
    W1 = np.frombuffer(raw, "<f8", n1, off).reshape(L, n_x, n_x).astype(np.float64)
    W2 = None
    if BIAS_MODES[bias] == "learned":
        W2 = np.frombuffer(raw, "<f8", L * n_x * n_y, off + 8 * n1).reshape(L, n_x, n_y)
        W2 = W2.astype(np.float64)
    arch = {v: k for k, v in _ARCH_CODES.items()}[arch]
    return NetworkParams(arch, W1, lam, gamma, BIAS_MODES[bias], W2, bool(clip_out))


def export_norms_csv(params: NetworkParams, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["layer", "linf", "induced1", "spectral"])
        for l, W in enumerate(params.W1, start=1):
            n = matrix_norms(W)
            w.writerow([l, repr(n.linf), repr(n.induced1), repr(n.spectral)])
