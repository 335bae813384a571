"""Closed-form generalization and estimation error bounds.

Geometric-type factors are evaluated as explicit sums so that the uniform
norm ``B = 1`` needs no special casing. ``T`` values are never invented:
they are inputs, and values outside the interval a bound was derived for
are reported through validity flags rather than clamped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

__all__ = [
    "BoundInputs",
    "BoundReport",
    "ExpectedT",
    "geom",
    "eta",
    "ge_bound_relu",
    "ge_bound_ista",
    "ge_bound_ista_simplified",
    "ge_bound_admm",
    "admm_transform",
    "expected_T_lower_bound",
    "design_rule_max_B",
    "ee_fixed_point",
    "psi",
    "ee_bound",
    "ee_bound_general_K",
]


def _per_layer(v, L: int, name: str) -> tuple[float, ...]:
    if np.ndim(v) == 0:
        return (float(v),) * L
    v = tuple(float(x) for x in v)
    if len(v) != L:
        raise ValueError(f"{name} has {len(v)} entries for depth {L}")
    return v


@dataclass(frozen=True)
class BoundInputs:
    """Every quantity the bounds depend on.

    ``B`` and ``T`` accept either one value (used for every layer) or a
    per-layer sequence of length ``L``.
    """

    B0: float
    B: float | Sequence[float] = 1.0
    lam: float = 0.0
    gamma: float = 1.0
    m: int = 1
    L: int = 1
    T: float | Sequence[float] = 0.0
    c: float = 1.0
    C: float = 1.0
    alpha: float = 1.0
    s: float = 1.0
    n_x: int = 1

    def __post_init__(self):
        if self.L < 1:
            raise ValueError("depth must be at least 1")
        if self.m < 1:
            raise ValueError("need at least one sample")
        object.__setattr__(self, "B", _per_layer(self.B, self.L, "B"))
        object.__setattr__(self, "T", _per_layer(self.T, self.L, "T"))
        if self.B0 < 0:
            raise ValueError("B0 must be nonnegative")
        if any(b <= 0 for b in self.B):
            raise ValueError("norm bounds must be positive")
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if any(t < 0 for t in self.T):
            raise ValueError("T values must be nonnegative")
        if not 0 < self.c <= 1:
            raise ValueError("c must lie in (0, 1]")
        if self.C < 1:
            raise ValueError("C must be at least 1")
        if self.alpha <= 0 or self.s <= 0:
            raise ValueError("alpha and s must be positive")

    @property
    def B_max(self) -> float:
        return max(self.B)

    @property
    def T_min(self) -> float:
        return min(self.T)


@dataclass(frozen=True)
class BoundReport:
    value: float
    intermediate: dict = field(default_factory=dict)
    flags: dict = field(default_factory=dict)

    @property
    def valid(self) -> bool:
        return all(self.flags.values())

    def derived(self, value: float) -> "BoundReport":
        return replace(self, value=value)

    def to_dict(self) -> dict:
        return {"value": self.value, "valid": self.valid,
                "intermediate": self.intermediate, "flags": self.flags}


def geom(B: float, n: int) -> float:
    """``sum_{l=0}^{n-1} B**l``; zero for ``n <= 0``."""
    return math.fsum(B**l for l in range(max(n, 0)))


def eta(B: float, L: int) -> float:
    """``sum_{l=1}^{L-1} l * B**(l-1)``, the derivative of ``geom`` in ``B``."""
    return math.fsum(l * B ** (l - 1) for l in range(1, L))


def _upper(num: float, lam: float, m: int) -> float:
    if lam == 0:
        return float(m)
    return min(num / lam, float(m))


def ge_bound_relu(inp: BoundInputs) -> BoundReport:
    # same multiplication order as the ISTA recurrence, so T = 0 agrees bitwise
    G = inp.B0 / math.sqrt(inp.m)
    for Bl in inp.B:
        G = Bl * G
    return BoundReport(2.0 * G, {"G": G})


def _ista_recurrence(B0, Bs, Ts, lam, m):
    G = [B0 / math.sqrt(m)]
    uppers, ok = [], []
    for Bl, Tl in zip(Bs, Ts):
        up = _upper(m * Bl * G[-1], lam, m)
        uppers.append(up)
        ok.append(0.0 <= Tl <= up)
        G.append(Bl * G[-1] - lam * Tl / m)
    return G, uppers, ok


def ge_bound_ista(inp: BoundInputs) -> BoundReport:
    """Layerwise recurrence for unrolled ISTA; ``T`` outside its interval is flagged."""
    G, uppers, ok = _ista_recurrence(inp.B0, inp.B, inp.T, inp.lam, inp.m)
    return BoundReport(
        2.0 * G[-1],
        {"G": G, "T_upper": uppers},
        {f"T{l}_in_interval": flag for l, flag in enumerate(ok, start=1)},
    )


def ge_bound_ista_simplified(B0: float, B: float, lam: float, m: int, L: int, T: float) -> BoundReport:
    G = B0 * B**L / math.sqrt(m) - lam * T / m * geom(B, L)
    return BoundReport(2.0 * G, {"G_L": G, "geom": geom(B, L)}, {"T_in_interval": 0 <= T <= m})


def admm_transform(lam: float, gamma: float, B):
    """Effective threshold ``(1 + gamma) lam`` and norms ``(1 + 2 gamma)(B + 2)``."""
    lam_t = (1.0 + gamma) * lam
    if np.ndim(B) == 0:
        return lam_t, (1.0 + 2.0 * gamma) * (B + 2.0)
    return lam_t, tuple((1.0 + 2.0 * gamma) * (b + 2.0) for b in B)


def ge_bound_admm(inp: BoundInputs) -> BoundReport:
    """Unrolled ADMM bound ``2 Bt_L G_A^L`` with ``G_A^1 = B0 / sqrt(m)``.

    ``G_A^{l+1} = Bt_l G_A^l - lam_t T^(l) / m`` for ``l = 1..L-1``, where
    ``Bt`` and ``lam_t`` come from :func:`admm_transform`. ``T^(L)`` is unused.
    """
    lam_t, Bt = admm_transform(inp.lam, inp.gamma, inp.B)
    m = inp.m
    GA = [inp.B0 / math.sqrt(m)]
    uppers, flags = [], {}
    for l in range(1, inp.L):
        up = _upper(m * Bt[l - 1] * GA[-1], lam_t, m)
        uppers.append(up)
        flags[f"T{l}_in_interval"] = 0.0 <= inp.T[l - 1] <= up
        GA.append(Bt[l - 1] * GA[-1] - lam_t * inp.T[l - 1] / m)
    flags["depth_at_least_2"] = inp.L >= 2
    value = 2.0 * Bt[-1] * GA[-1]

    Bt_u = max(Bt)
    T_u = min(inp.T[: inp.L - 1]) if inp.L > 1 else 0.0
    simplified = 2.0 * Bt_u * (
        inp.B0 * Bt_u ** (inp.L - 1) / math.sqrt(m) - lam_t * T_u / m * geom(Bt_u, inp.L - 1)
    )
    return BoundReport(
        value,
        {"lambda_tilde": lam_t, "B_tilde": list(Bt), "G_A": GA, "T_upper": uppers,
         "simplified": simplified},
        flags,
    )


@dataclass(frozen=True)
class ExpectedT:
    values: list
    b: list
    lambda_threshold: list
    annihilated_from: int | None

    @property
    def meaningful(self) -> list:
        return [v > 0 for v in self.values]


def expected_T_lower_bound(inp: BoundInputs) -> ExpectedT:
    """Per-layer lower bound ``max(m (1 - 2 exp(-(c B_l b_l - lam))), 0)`` on E[T^(l)].

    ``b_1 = B0`` and ``b_{l+1} = B_l b_l - lam``. Once ``b_l <= 0`` the signal
    has been thresholded away; ``annihilated_from`` records the first such layer.
    """
    b = [inp.B0]
    values, thresh = [], []
    dead = None
    for l, Bl in enumerate(inp.B, start=1):
        bl = b[-1]
        if bl <= 0 and dead is None:
            dead = l
        arg = inp.c * Bl * bl - inp.lam
        with np.errstate(over="ignore"):
            v = inp.m * (1.0 - 2.0 * float(np.exp(-arg)))
        values.append(max(v, 0.0))
        thresh.append(inp.c * Bl * bl + math.log(2.0))
        b.append(Bl * bl - inp.lam)
    return ExpectedT(values, b[:-1], thresh, dead)


def design_rule_max_B(lam: float, T: float, m: int, B0: float) -> float:
    """Largest uniform norm keeping the simplified ISTA bound nonincreasing in depth."""
    if B0 <= 0 or m < 1:
        raise ValueError("need B0 > 0 and m >= 1")
    return 1.0 + lam * T / (math.sqrt(m) * B0)


def _beta(arch: str, inp: BoundInputs):
    """Slope of the sub-root function and the admissible T range."""
    arch = getattr(arch, "value", arch)
    B, T, m, L = inp.B_max, inp.T_min, inp.m, inp.L
    sq = math.sqrt(m)
    if arch == "relu":
        return inp.B0 * B ** (L - 1) * 2**L / sq, {}, {}
    if arch == "ista":
        lam, depth, Bw, lead = inp.lam, L, B, inp.B0 * B ** (L - 1) * 2**L / sq
    elif arch == "admm":
        if L < 2:
            raise ValueError("the ADMM estimation bound needs depth L >= 2")
        lam, Bw = admm_transform(inp.lam, inp.gamma, B)
        depth = L - 1
        lead = inp.B0 * Bw ** (L - 2) * 2 ** (L - 1) / sq
    else:
        raise ValueError(f"unknown architecture {arch!r}")
    e = eta(Bw, depth)
    # beta >= 0 exactly when T <= m * lead / (lam * eta)
    upper = float(m) if lam * e == 0 else min(m * lead / (lam * e), float(m))
    beta = lead - lam * T * e / m
    return beta, {"eta": e, "T_upper": upper, "lambda_eff": lam, "B_eff": Bw}, {
        "T_in_interval": 0.0 <= T <= upper
    }


def psi(arch: str, inp: BoundInputs, r: float) -> float:
    """Sub-root function ``C alpha sqrt(r) beta``."""
    beta, _, _ = _beta(arch, inp)
    return inp.C * inp.alpha * math.sqrt(r) * beta


def ee_fixed_point(arch: str, inp: BoundInputs) -> BoundReport:
    """Fixed point ``r* = (C alpha beta)^2`` of the sub-root function.

    Uses the uniform norm ``max B_l`` and ``T = min T^(l)``.
    """
    beta, inter, flags = _beta(arch, inp)
    r_star = (inp.C * inp.alpha * beta) ** 2
    flags = dict(flags)
    flags["B_ge_max_alpha_sqrt_r_1"] = inp.B_max >= max(inp.alpha * math.sqrt(r_star), 1.0)
    return BoundReport(r_star, {"beta": beta, **inter}, flags)


def ee_bound(r_star: float, C: float, s: float, m: int, n_x: int) -> float:
    """High-probability estimation error bound ``41 r* + (17 C^2 + 48 C) s / (m n_x)``."""
    if s <= 0 or C < 1:
        raise ValueError("need s > 0 and C >= 1")
    return 41.0 * r_star + (17.0 * C**2 + 48.0 * C) * s / (m * n_x)


def ee_bound_general_K(r_star: float, C: float, s: float, m: int, n_x: int, K: float) -> float:
    """The same bound before fixing ``K``: ``40 K r* + (16 K C^2 + 48 C) s / (m n_x)``."""
    if K <= 1:
        raise ValueError("K must exceed 1")
    return 40.0 * K * r_star + (16.0 * K * C**2 + 48.0 * C) * s / (m * n_x)
