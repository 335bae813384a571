"""Synthetic sparse-recovery instances ``y = A x + e``.

``A`` holds randomly chosen rows of the real part of the DFT matrix, scaled
to unit spectral norm. Targets are sparse with uniform [-1, 1] nonzeros and
the noise is uniform with a prescribed standard deviation.
"""

from __future__ import annotations

import csv
import hashlib
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .numerics import matrix_norms, spectral_norm
from .rng import child_stream

__all__ = [
    "ProblemConfig",
    "SensingMatrix",
    "Dataset",
    "build_sensing_matrix",
    "sample_target",
    "generate_dataset",
    "bound_B0",
    "save_dataset",
    "load_dataset",
    "export_dataset_csv",
]


@dataclass(frozen=True)
class ProblemConfig:
    n_x: int = 64
    n_y: int = 32
    rho: float = 0.15
    noise_std: float = 0.1
    master_seed: int = 0

    def __post_init__(self):
        if self.n_x < 1 or self.n_y < 1:
            raise ValueError("dimensions must be positive")
        if not self.n_y < self.n_x:
            raise ValueError(f"need n_y < n_x, got n_y={self.n_y}, n_x={self.n_x}")
        if not 0.0 < self.rho <= 1.0:
            raise ValueError(f"sparsity rate must lie in (0, 1], got {self.rho}")
        if self.sparsity < 1:
            raise ValueError("floor(rho * n_x) must be at least 1")
        if self.noise_std < 0:
            raise ValueError("noise_std must be nonnegative")
        if not 0 <= self.master_seed < 2**64:
            raise ValueError("master_seed must be a 64-bit unsigned integer")

    @property
    def sparsity(self) -> int:
        """Number of nonzeros in every target, ``floor(rho * n_x)``."""
        return int(math.floor(self.rho * self.n_x))

    @property
    def noise_halfwidth(self) -> float:
        return self.noise_std * math.sqrt(3.0)


@dataclass(frozen=True)
class SensingMatrix:
    A: np.ndarray
    row_indices: tuple[int, ...]
    scale: float

    @property
    def shape(self) -> tuple[int, int]:
        return self.A.shape

    @property
    def gram(self) -> np.ndarray:
        return self.A.T @ self.A


@dataclass(frozen=True)
class Dataset:
    """``m`` samples stored as row-stacked arrays ``X`` (m, n_x) and ``Y`` (m, n_y)."""

    X: np.ndarray
    Y: np.ndarray
    config_fingerprint: str
    role: str
    config: ProblemConfig | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.role not in ("train", "test"):
            raise ValueError(f"role must be 'train' or 'test', got {self.role!r}")
        if self.X.shape[0] != self.Y.shape[0]:
            raise ValueError("X and Y hold different numbers of samples")

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def samples(self):
        return list(zip(self.X, self.Y))

    def subset(self, idx) -> "Dataset":
        return Dataset(self.X[idx], self.Y[idx], self.config_fingerprint, self.role, self.config)


def dft_real_rows(n_x: int, rows) -> np.ndarray:
    """Rows ``k`` of ``Re(F)`` with ``F[k, j] = exp(-2 pi i k j / n_x)``."""
    k = np.asarray(rows, dtype=np.float64)[:, None]
    j = np.arange(n_x, dtype=np.float64)[None, :]
    return np.cos(2.0 * np.pi * k * j / n_x)


def build_sensing_matrix(config: ProblemConfig) -> SensingMatrix:
    if config.n_y > config.n_x:
        raise ValueError("cannot pick more DFT rows than the transform has")
    rng = child_stream(config.master_seed, "sensing")
    rows = rng.choice(config.n_x, size=config.n_y, replace=False)
    raw = dft_real_rows(config.n_x, rows)
    scale = 1.0 / spectral_norm(raw)
    return SensingMatrix(A=raw * scale, row_indices=tuple(int(r) for r in rows), scale=scale)


def _sample_targets(config: ProblemConfig, rng: np.random.Generator, m: int) -> np.ndarray:
    k = config.sparsity
    X = np.zeros((m, config.n_x))
    # argsort of iid uniforms is a uniformly random permutation per row
    support = np.argsort(rng.random((m, config.n_x)), axis=1)[:, :k]
    values = rng.uniform(-1.0, 1.0, size=(m, k))
    np.put_along_axis(X, support, values, axis=1)
    return X


def sample_target(config: ProblemConfig, rng: np.random.Generator) -> np.ndarray:
    return _sample_targets(config, rng, 1)[0]


def fingerprint(config: ProblemConfig, sensing: SensingMatrix) -> str:
    h = hashlib.sha256()
    h.update(
        struct.pack(
            "<IIddQ", config.n_x, config.n_y, config.rho, config.noise_std, config.master_seed
        )
    )
    h.update(np.ascontiguousarray(sensing.A, dtype="<f8").tobytes())
    return h.hexdigest()


def generate_dataset(
    config: ProblemConfig,
    sensing: SensingMatrix,
    m: int,
    role: str,
    stream_index: tuple[int, ...] = (),
) -> Dataset:
    """Draw ``m`` samples ``(x, y)``.

    The draw is a pure function of ``(config, role, stream_index)``; different
    ``stream_index`` values give independent datasets.
    """
    if m < 1:
        raise ValueError("a dataset needs at least one sample")
    if sensing.A.shape != (config.n_y, config.n_x):
        raise ValueError("sensing matrix shape does not match the configuration")
    rng = child_stream(config.master_seed, f"dataset:{role}", *stream_index)
    X = _sample_targets(config, rng, m)
    a = config.noise_halfwidth
    E = rng.uniform(-a, a, size=(m, config.n_y)) if a > 0 else np.zeros((m, config.n_y))
    Y = X @ sensing.A.T + E
    return Dataset(X=X, Y=Y, config_fingerprint=fingerprint(config, sensing), role=role, config=config)


def bound_B0(sensing: SensingMatrix, dataset: Dataset, rho: float | None = None) -> dict:
    """Empirical and analytic bounds on ``||A^T y||_1`` over the dataset.

    The analytic value needs the sparsity rate; it defaults to the dataset's
    configuration.
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    if rho is None:
        if dataset.config is None:
            raise ValueError("rho is required when the dataset carries no configuration")
        rho = dataset.config.rho
    A = sensing.A
    n_x = A.shape[1]
    empirical = float(np.abs(dataset.Y @ A).sum(axis=1).max())
    E = dataset.Y - dataset.X @ A.T
    noise_term = float(np.abs(E @ A).sum(axis=1).max())
    analytic = matrix_norms(A.T @ A).induced1 * rho * n_x + noise_term
    return {"empirical": empirical, "analytic": analytic}


# --- persistence -----------------------------------------------------------

_MAGIC = b"UNRLDSET"
_VERSION = 1
_HEADER = struct.Struct("<8sII")  # magic, version, reserved -> 16 bytes
_CONFIG = struct.Struct("<IIQddQB7x32s")


def save_dataset(dataset: Dataset, path) -> None:
    """Write a little-endian binary file.

    Layout: 16-byte header (magic, version, reserved), a fixed config block,
    then for each sample its ``x`` followed by its ``y`` as float64.
    """
    cfg = dataset.config
    if cfg is None:
        raise ValueError("only datasets carrying their configuration can be saved")
    m, n_x = dataset.X.shape
    n_y = dataset.Y.shape[1]
    role = {"train": 0, "test": 1}[dataset.role]
    payload = np.hstack([dataset.X, dataset.Y]).astype("<f8", copy=False)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, _VERSION, 0))
        fh.write(
            _CONFIG.pack(
                n_x, n_y, m, cfg.rho, cfg.noise_std, cfg.master_seed, role,
                bytes.fromhex(dataset.config_fingerprint),
            )
        )
        fh.write(np.ascontiguousarray(payload).tobytes())


def load_dataset(path) -> Dataset:
    raw = Path(path).read_bytes()
    magic, version, _ = _HEADER.unpack_from(raw, 0)
    if magic != _MAGIC:
        raise ValueError(f"{path}: not a dataset file")
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported dataset version {version}")
    n_x, n_y, m, rho, noise_std, seed, role, fp = _CONFIG.unpack_from(raw, _HEADER.size)
    offset = _HEADER.size + _CONFIG.size
    expected = m * (n_x + n_y) * 8
    if len(raw) - offset != expected:
        raise ValueError(f"{path}: truncated payload")
    payload = np.frombuffer(raw, dtype="<f8", offset=offset).reshape(m, n_x + n_y)
    payload = payload.astype(np.float64)
    cfg = ProblemConfig(n_x=n_x, n_y=n_y, rho=rho, noise_std=noise_std, master_seed=seed)
    return Dataset(
        X=payload[:, :n_x].copy(),
        Y=payload[:, n_x:].copy(),
        config_fingerprint=fp.hex(),
        role=("train", "test")[role],
        config=cfg,
    )


def export_dataset_csv(dataset: Dataset, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_index", "kind", "coord", "value"])
        for i, (x, y) in enumerate(zip(dataset.X, dataset.Y)):
            for j, v in enumerate(x):
                w.writerow([i, "x", j, repr(float(v))])
            for j, v in enumerate(y):
                w.writerow([i, "y", j, repr(float(v))])
