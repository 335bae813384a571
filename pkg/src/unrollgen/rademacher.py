"""Monte-Carlo empirical Rademacher complexity for small hypothesis classes.

For each sign vector the supremum over the class is approximated by
multi-start projected ascent over the weights. The ascent only ever returns
attained objective values, so every reported complexity is a *lower bound*
on the true empirical Rademacher complexity of the class.

Searches are vectorized over (sign draw, restart) pairs. Each hypothesis
keeps its own step length, grown by 1.2 after an accepted step and halved
after a rejected one, so the search is monotone and settles on kinks.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .numerics import soft_threshold
from .rng import child_stream


class ClassArch(str, Enum):
    LINEAR = "linear"
    ISTA = "ista"
    RELU = "relu"


@dataclass(frozen=True)
class ClassSpec:
    """A scalar hypothesis class.

    ``LINEAR``: ``y -> w . y`` with ``||w||_2 <= B1``.
    ``ISTA``/``RELU``: output coordinate ``j`` of a depth-``L`` network with
    constant bias ``A^T y``, rows of every layer with L1 norm at most ``B`` and
    first-layer spectral norm at most ``B1``.
    With ``apply_soft_threshold_on_output`` the class is composed with
    soft-thresholding at ``output_lambda``.
    """

    arch: ClassArch = ClassArch.LINEAR
    L: int = 1
    B: float = 1.0
    B1: float = 1.0
    lam: float = 0.0
    j: int = 0
    apply_soft_threshold_on_output: bool = False
    output_lambda: float = 0.0
    A: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "arch", ClassArch(self.arch))
        if self.B <= 0 or self.B1 <= 0:
            raise ValueError("norm caps must be positive")
        if self.arch is not ClassArch.LINEAR and self.A is None:
            raise ValueError("network classes need the sensing matrix A")

    def thresholded(self, lam: float) -> "ClassSpec":
        return replace(self, apply_soft_threshold_on_output=True, output_lambda=lam)


@dataclass(frozen=True)
class RcConfig:
    n_sign_draws: int = 200
    inner_restarts: int = 8
    inner_steps: int = 200
    step: float = 0.05
    seed: int = 0
    exhaustive_max_m: int = 12


@dataclass(frozen=True)
class RcEstimate:
    """Mean over sign draws of the best objective found (a lower bound on the sup)."""

    mean: float
    std_error: float
    n_sign_draws: int
    inner_restarts: int
    inner_steps: int
    exhaustive: bool = False
    per_draw: np.ndarray | None = None

    lower_bound = True


# --- hypothesis families, batched over K hypotheses ------------------------

class _Linear:
    def __init__(self, spec: ClassSpec, Y: np.ndarray):
        self.spec, self.Y = spec, Y
        self.scale = spec.B1

    def init(self, rng, K):
        w = rng.standard_normal((K, self.Y.shape[1]))
        radius = self.spec.B1 * rng.random((K, 1))
        return w / np.linalg.norm(w, axis=1, keepdims=True) * radius

    def project(self, w):
        n = np.linalg.norm(w, axis=1, keepdims=True)
        return np.where(n > self.spec.B1, w * (self.spec.B1 / np.where(n > 0, n, 1.0)), w)

    def outputs(self, w):
        return w @ self.Y.T, None

    def grad(self, w, cache, g_out):
        return g_out @ self.Y

    @staticmethod
    def norm(G):
        return np.linalg.norm(G, axis=1)

    @staticmethod
    def step(w, G, eta):
        return w + eta[:, None] * G


class _Network:
    def __init__(self, spec: ClassSpec, Y: np.ndarray):
        self.spec = spec
        self.b = Y @ spec.A  # rows are A^T y_i
        self.n = spec.A.shape[1]
        self.scale = spec.B
        self.relu = spec.arch is ClassArch.RELU

    def act(self, v):
        return np.maximum(v, 0.0) if self.relu else soft_threshold(v, self.spec.lam)

    def dact(self, v):
        return (v > 0) if self.relu else (np.abs(v) > self.spec.lam)

    def init(self, rng, K):
        base = np.eye(self.n) - self.spec.A.T @ self.spec.A
        W = base + rng.uniform(-0.5, 0.5, size=(K, self.spec.L, self.n, self.n)) * self.spec.B / self.n
        return self.project(W)

    def project(self, W):
        rows = np.abs(W).sum(axis=3, keepdims=True)
        W = W * np.where(rows > self.spec.B, self.spec.B / np.where(rows > 0, rows, 1.0), 1.0)
        s = np.linalg.norm(W[:, 0], ord=2, axis=(1, 2))
        over = s > self.spec.B1
        if np.any(over):
            W = W.copy()
            W[over, 0] *= (self.spec.B1 / s[over])[:, None, None]
        return W

    def outputs(self, W):
        H = [np.broadcast_to(self.act(self.b), (W.shape[0],) + self.b.shape)]
        P = []
        for l in range(self.spec.L):
            p = H[-1] @ W[:, l].transpose(0, 2, 1) + self.b
            P.append(p)
            H.append(self.act(p))
        return H[-1][:, :, self.spec.j], (H, P)

    def grad(self, W, cache, g_out):
        H, P = cache
        G = np.zeros_like(H[-1])
        G[:, :, self.spec.j] = g_out
        gW = np.empty_like(W)
        for l in range(self.spec.L - 1, -1, -1):
            Gp = G * self.dact(P[l])
            gW[:, l] = Gp.transpose(0, 2, 1) @ H[l]
            if l:
                G = Gp @ W[:, l]
        return gW

    @staticmethod
    def norm(G):
        return np.sqrt((G**2).sum(axis=(1, 2, 3)))

    @staticmethod
    def step(W, G, eta):
        return W + eta[:, None, None, None] * G


def _family(spec: ClassSpec, Y):
    return _Linear(spec, Y) if spec.arch is ClassArch.LINEAR else _Network(spec, Y)


def _threshold(spec: ClassSpec, out):
    if not spec.apply_soft_threshold_on_output:
        return out, None
    lam = spec.output_lambda
    return soft_threshold(out, lam), np.abs(out) > lam


def _ascend(fam, objective, theta, cfg: RcConfig):
    """Monotone projected ascent; returns final parameters and objective values."""
    K = theta.shape[0]
    val, g = objective(theta)
    eta = np.full(K, cfg.step * fam.scale)
    for _ in range(cfg.inner_steps):
        gn = fam.norm(g)
        gn = np.where(gn > 0, gn, 1.0)
        cand = fam.project(fam.step(theta, g, eta / gn))
        cval, cg = objective(cand)
        ok = cval >= val
        sel = ok.reshape((K,) + (1,) * (theta.ndim - 1))
        theta = np.where(sel, cand, theta)
        val = np.where(ok, cval, val)
        g = np.where(ok.reshape((K,) + (1,) * (g.ndim - 1)), cg, g)
        eta = np.where(ok, eta * 1.2, eta * 0.5)
    return theta, val


def _sign_draws(m: int, cfg: RcConfig):
    if m <= cfg.exhaustive_max_m:
        signs = np.array(list(itertools.product((-1.0, 1.0), repeat=m)))
        return signs, True
    rng = child_stream(cfg.seed, "rc-signs", m)
    return rng.choice((-1.0, 1.0), size=(cfg.n_sign_draws, m)), False


def _chunk(fam_size: int, cfg: RcConfig) -> int:
    # keep stacked parameters around 2e7 floats
    return max(1, int(2e7 // max(fam_size * cfg.inner_restarts, 1)))


def _per_draw_sups(spec: ClassSpec, Y: np.ndarray, signs: np.ndarray, cfg: RcConfig) -> np.ndarray:
    fam = _family(spec, Y)
    m = Y.shape[0]
    R = cfg.inner_restarts
    size = Y.shape[1] if spec.arch is ClassArch.LINEAR else spec.L * fam.n * fam.n * 4
    init = fam.init(child_stream(cfg.seed, "rc-init", R), R)
    best = np.empty(signs.shape[0])
    step = _chunk(size, cfg)
    for start in range(0, signs.shape[0], step):
        eps = signs[start:start + step]
        D = eps.shape[0]
        E = np.repeat(eps, R, axis=0)  # (D*R, m)

        def objective(theta, E=E):
            out, cache = fam.outputs(theta)
            val_out, mask = _threshold(spec, out)
            val = (E * val_out).sum(axis=1) / m
            g_out = E / m if mask is None else E * mask / m
            return val, fam.grad(theta, cache, g_out)

        theta0 = np.tile(init, (D,) + (1,) * (init.ndim - 1))
        _, val = _ascend(fam, objective, theta0, cfg)
        best[start:start + D] = val.reshape(D, R).max(axis=1)
    return best


def _estimate(per_draw: np.ndarray, exhaustive: bool, cfg: RcConfig) -> RcEstimate:
    n = per_draw.size
    if exhaustive or n < 2:
        se = 0.0
    else:
        se = float(per_draw.std(ddof=1) / math.sqrt(n))
    return RcEstimate(
        mean=float(per_draw.mean()), std_error=se, n_sign_draws=n,
        inner_restarts=cfg.inner_restarts, inner_steps=cfg.inner_steps,
        exhaustive=exhaustive, per_draw=per_draw,
    )


def estimate_rc(spec: ClassSpec, inputs, cfg: RcConfig = RcConfig()) -> RcEstimate:
    """Empirical Rademacher complexity of ``spec`` on the rows of ``inputs``.

    Sign vectors are enumerated exhaustively when ``m <= cfg.exhaustive_max_m``
    (the standard error is then zero); otherwise ``cfg.n_sign_draws`` vectors
    are sampled.
    """
    Y = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    signs, exhaustive = _sign_draws(Y.shape[0], cfg)
    return _estimate(_per_draw_sups(spec, Y, signs, cfg), exhaustive, cfg)


def linear_sup_closed_form(Y, signs, B1: float) -> np.ndarray:
    """``B1 * ||(1/m) sum_i eps_i y_i||_2`` for each sign vector."""
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    return B1 * np.linalg.norm(np.asarray(signs) @ Y / Y.shape[0], axis=1)


def thresholding_gap(spec: ClassSpec, inputs, lam: float, cfg: RcConfig = RcConfig()) -> dict:
    """Paired comparison of the complexity of ``H`` and of ``S_lam o H``.

    Both searches use the same sign draws, initializations and budget.
    ``gap = rc_base - rc_thresholded``; ``implied_T = m * gap / lam`` is the
    Monte-Carlo counterpart of the complexity reduction ``lam T / m``.
    """
    if spec.apply_soft_threshold_on_output:
        raise ValueError("the base class must not be thresholded")
    Y = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    m = Y.shape[0]
    signs, exhaustive = _sign_draws(m, cfg)
    base = _estimate(_per_draw_sups(spec, Y, signs, cfg), exhaustive, cfg)
    thr = _estimate(_per_draw_sups(spec.thresholded(lam), Y, signs, cfg), exhaustive, cfg)
    diff = base.per_draw - thr.per_draw
    gap = base.mean - thr.mean
    gap_se = 0.0 if exhaustive else float(diff.std(ddof=1) / math.sqrt(diff.size))
    return {
        "rc_base": base,
        "rc_thresholded": thr,
        "gap": gap,
        "gap_std_error": gap_se,
        "lam_T_over_m": gap,
        "implied_T": m * gap / lam if lam > 0 else math.nan,
    }


def estimate_T_indicator(spec: ClassSpec, inputs, lam: float, cfg: RcConfig = RcConfig()) -> float:
    """Heuristic estimate of the soft-thresholding reduction count ``T``.

    For every held-out index ``j`` and sign vector over the other samples, a
    pair ``(h, h')`` maximizing

        h(y_j) - h'(y_j) - 2 lam [h(y_j) > lam and h'(y_j) < -lam]
            + sum_{i != j} eps_i (S_lam(h(y_i)) + S_lam(h'(y_i)))

    is searched for, and the frequency with which the maximizers straddle
    ``(-lam, lam)`` at ``y_j`` is accumulated. The result lies in ``[0, m]``.
    Maximizers are only approximated, so this is an estimate, not a bound.
    """
    if spec.apply_soft_threshold_on_output:
        raise ValueError("pass the unthresholded class")
    Y = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    m = Y.shape[0]
    fam = _family(spec, Y)
    R = cfg.inner_restarts
    init = fam.init(child_stream(cfg.seed, "rc-init", R), R)
    total = 0.0
    for j in range(m):
        others, exhaustive = _sign_draws(m - 1, cfg)
        D = others.shape[0]
        eps = np.insert(others, j, 0.0, axis=1)
        E = np.repeat(eps, R * R, axis=0)
        # each hypothesis is a pair; stack h in the first half, h' in the second
        idx_h = np.tile(np.repeat(np.arange(R), R), D)
        idx_hp = np.tile(np.tile(np.arange(R), R), D)
        K = E.shape[0]

        def objective(theta):
            out, cache = fam.outputs(theta)
            o, o2 = out[:K], out[K:]
            s, s2 = soft_threshold(o, lam), soft_threshold(o2, lam)
            hit = (o[:, j] > lam) & (o2[:, j] < -lam)
            val = o[:, j] - o2[:, j] - 2 * lam * hit + (E * (s + s2)).sum(axis=1)
            g1 = E * (np.abs(o) > lam)
            g2 = E * (np.abs(o2) > lam)
            g1[:, j] = 1.0
            g2[:, j] = -1.0
            g = fam.grad(theta, cache, np.vstack([g1, g2]))
            return np.concatenate([val, val]), g

        theta0 = np.concatenate([init[idx_h], init[idx_hp]])
        theta, _ = _ascend_pairs(fam, objective, theta0, K, cfg)
        out, _ = fam.outputs(theta)
        o, o2 = out[:K], out[K:]
        hit = (o[:, j] > lam) & (o2[:, j] < -lam)
        s = (E * (soft_threshold(o, lam) + soft_threshold(o2, lam))).sum(axis=1)
        val = (o[:, j] - o2[:, j] - 2 * lam * hit + s).reshape(D, R * R)
        best = np.argmax(val, axis=1)
        total += hit.reshape(D, R * R)[np.arange(D), best].mean()
    return float(total)


def _ascend_pairs(fam, objective, theta, K: int, cfg: RcConfig):
    """Ascent on pairs: both halves accept or reject a step together."""
    val, g = objective(theta)
    eta = np.full(2 * K, cfg.step * fam.scale)
    shape = (2 * K,) + (1,) * (theta.ndim - 1)
    for _ in range(cfg.inner_steps):
        gn = fam.norm(g)
        gn = np.where(gn > 0, gn, 1.0)
        cand = fam.project(fam.step(theta, g, eta / gn))
        cval, cg = objective(cand)
        ok = cval >= val
        theta = np.where(ok.reshape(shape), cand, theta)
        g = np.where(ok.reshape((2 * K,) + (1,) * (g.ndim - 1)), cg, g)
        val = np.where(ok, cval, val)
        eta = np.where(ok, eta * 1.2, eta * 0.5)
    return theta, val
