"""Empirical estimation-error sweeps and bound tables.

The estimation error of a class is approximated as in the classical
protocol: a proxy optimum ``h*`` is trained on ``m_star`` samples, an
empirical risk minimizer ``h_hat`` on ``m`` samples, and both are scored on a
shared held-out set. Every network is an independent job keyed by
``(arch, L, lambda, bias_mode, m, seed)``; ReLU networks ignore ``lambda`` and
are trained once per remaining key.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from functools import lru_cache
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .bounds import (
    BoundInputs,
    ee_bound,
    ee_fixed_point,
    ge_bound_admm,
    ge_bound_ista,
    ge_bound_relu,
)
from .networks import Arch, init_weights, load_checkpoint, weight_norms
from .problem import ProblemConfig, build_sensing_matrix, generate_dataset
from .rng import child_stream
from .training import TrainConfig, TrainingDiverged, evaluate, train

log = logging.getLogger(__name__)

DEFAULT_MS = (10, 25, 50, 100, 250, 500, 1000, 5000)
DEFAULT_LAMBDAS = (0.05, 0.1, 0.2, 0.4, 0.8)
DEFAULT_DEPTHS = (2, 4, 6, 8, 10)

# Fixed SGD-step budget so that small training sets are fit to (near) zero
# empirical risk, the regime the estimation error is defined for.
SWEEP_TRAIN = TrainConfig(
    learning_rate=0.3,
    epochs=10**9,
    batch_size=32,
    early_stop_window=0,
    max_steps=3000,
)

EE_COLUMNS = (
    "arch", "L", "lambda", "bias_mode", "m", "seed",
    "loss_hstar", "loss_hhat", "ee", "train_loss_final",
)


@dataclass(frozen=True)
class ExperimentSpec:
    problem: ProblemConfig = field(default_factory=ProblemConfig)
    archs: tuple = ("ista", "relu")
    depths: tuple = (10,)
    lambdas: tuple = DEFAULT_LAMBDAS
    ms: tuple = DEFAULT_MS
    bias_modes: tuple = ("constant",)
    seeds: tuple = (0, 1, 2, 3, 4)
    m_star: int = 10_000
    m_test: int = 10_000
    train: TrainConfig = SWEEP_TRAIN
    gamma: float = 1.0
    clip_output: bool = True
    perturb_scale: float = 0.0

    def __post_init__(self):
        for name in ("archs", "depths", "lambdas", "ms", "bias_modes", "seeds"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if any(m > self.m_star for m in self.ms):
            raise ValueError("every training size must be at most m_star")
        if any(m < 1 for m in self.ms) or self.m_test < 1:
            raise ValueError("sample counts must be positive")
        for a in self.archs:
            Arch(a)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["train"] = asdict(self.train)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown experiment keys: {sorted(unknown)}")
        if "problem" in d:
            d["problem"] = ProblemConfig(**d["problem"])
        if "train" in d:
            t = dict(d["train"])
            if t.get("projection") is not None:
                t["projection"] = tuple(t["projection"])
            d["train"] = replace(SWEEP_TRAIN, **t)
        return cls(**d)


@dataclass(frozen=True)
class EEResult:
    arch: str
    L: int
    lam: float
    bias_mode: str
    m: int
    seed: int
    loss_hstar: float
    loss_hhat: float
    ee: float
    train_loss_final: float

    def row(self) -> list:
        return [
            self.arch, self.L, repr(self.lam), self.bias_mode, self.m, self.seed,
            repr(self.loss_hstar), repr(self.loss_hhat), repr(self.ee),
            repr(self.train_loss_final),
        ]


@dataclass(frozen=True)
class _Job:
    arch: str
    L: int
    lam: float | None
    bias_mode: str
    m: int
    seed: int


def _job_key(arch: str, L: int, lam: float, bias_mode: str, m: int, seed: int) -> _Job:
    return _Job(arch, L, None if arch == Arch.RELU.value else lam, bias_mode, m, seed)


@lru_cache(maxsize=4)
def _instance(cfg: ProblemConfig, m_test: int):
    sensing = build_sensing_matrix(cfg)
    return sensing, generate_dataset(cfg, sensing, m_test, "test")


def train_cell(spec: ExperimentSpec, arch: str, L: int, lam: float, bias_mode: str, m: int, seed: int):
    """Train the network of one sweep cell exactly as the sweeps do.

    Returns ``(params, history, test_loss)``; may raise ``TrainingDiverged``.
    """
    cfg = spec.problem
    sensing, test = _instance(cfg, spec.m_test)
    # the training draw depends only on (seed, m): every class sees the same data
    data = generate_dataset(cfg, sensing, m, "train", (seed, m))
    rng = child_stream(cfg.master_seed, "init", seed)
    params = init_weights(
        arch, sensing, L, lam if arch != Arch.RELU.value else 0.0,
        perturb_scale=spec.perturb_scale, rng=rng if spec.perturb_scale > 0 else None,
        gamma=spec.gamma, bias_mode=bias_mode, clip_output=spec.clip_output,
    )
    tcfg = replace(spec.train, seed=_derive_seed(cfg.master_seed, seed, m))
    trained, history = train(params, sensing, data, tcfg)
    test_loss = evaluate(trained, sensing, test)
    if not math.isfinite(test_loss):
        raise TrainingDiverged("non-finite test loss")
    return trained, history, test_loss


def _run_job(spec: ExperimentSpec, job: _Job):
    """Train one network and score it; returns (job, test_loss, final_train_loss, error)."""
    lam = job.lam if job.lam is not None else 0.0
    try:
        _, history, test_loss = train_cell(spec, job.arch, job.L, lam, job.bias_mode, job.m, job.seed)
    except (TrainingDiverged, FloatingPointError) as exc:
        return job, math.nan, math.nan, str(exc)
    return job, test_loss, history[-1], None


def _derive_seed(master: int, seed: int, m: int) -> int:
    return int(child_stream(master, "train-seed", seed, m).integers(0, 2**63))


def _jobs_for(spec: ExperimentSpec, depths) -> list[_Job]:
    jobs = {}
    for L in depths:
        for arch in spec.archs:
            for lam in spec.lambdas:
                for bias in spec.bias_modes:
                    for seed in spec.seeds:
                        for m in (*spec.ms, spec.m_star):
                            k = _job_key(arch, L, lam, bias, m, seed)
                            jobs.setdefault(k, None)
    return list(jobs)


def _execute(spec: ExperimentSpec, jobs: list[_Job], workers: int) -> dict:
    if workers <= 1:
        out = [_run_job(spec, j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            out = list(pool.map(_run_job, [spec] * len(jobs), jobs))
    return {job: (test, tr, err) for job, test, tr, err in out}


def _assemble(spec: ExperimentSpec, depths, done: dict):
    results, failures = [], []
    for L in depths:
        for arch in spec.archs:
            for lam in spec.lambdas:
                for bias in spec.bias_modes:
                    for seed in spec.seeds:
                        star = done[_job_key(arch, L, lam, bias, spec.m_star, seed)]
                        for m in spec.ms:
                            hat = done[_job_key(arch, L, lam, bias, m, seed)]
                            cell = dict(arch=arch, L=L, lam=lam, bias_mode=bias, m=m, seed=seed)
                            err = star[2] or hat[2]
                            if err is not None:
                                failures.append({**cell, "error": err})
                                continue
                            results.append(
                                EEResult(
                                    **cell, loss_hstar=star[0], loss_hhat=hat[0],
                                    ee=hat[0] - star[0], train_loss_final=hat[1],
                                )
                            )
    results.sort(key=lambda r: (r.L, r.arch, r.lam, r.bias_mode, r.m, r.seed))
    return results, failures


def run_ee_experiment(spec: ExperimentSpec, workers: int = 1, depths=None):
    """Train and score every (arch, L, lambda, bias_mode, m, seed) cell.

    Returns ``(results, failures)``. Failed cells (non-finite loss) are left
    out of ``results`` and described in ``failures``.
    """
    depths = tuple(spec.depths if depths is None else depths)
    jobs = _jobs_for(spec, depths)
    log.info("running %d training jobs", len(jobs))
    done = _execute(spec, jobs, workers)
    return _assemble(spec, depths, done)


def run_depth_sweep(spec: ExperimentSpec, workers: int = 1, depths=None) -> dict:
    """Estimation-error sweep per depth; returns ``{L: (results, failures)}``."""
    depths = tuple(depths if depths is not None else (spec.depths or DEFAULT_DEPTHS))
    if not depths:
        raise ValueError("depth list is empty")
    jobs = _jobs_for(spec, depths)
    done = _execute(spec, jobs, workers)
    return {L: _assemble(spec, (L,), done) for L in depths}


def ee_rows_csv(results) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(EE_COLUMNS)
    for r in results:
        w.writerow(r.row())
    return buf.getvalue()


def summarize(results) -> list[dict]:
    """Mean and standard error of the estimation error per (arch, L, lambda, bias, m)."""
    groups: dict = {}
    for r in results:
        groups.setdefault((r.arch, r.L, r.lam, r.bias_mode, r.m), []).append(r)
    out = []
    for key in sorted(groups):
        rs = groups[key]
        ee = np.array([r.ee for r in rs])
        out.append(
            dict(
                arch=key[0], L=key[1], lam=key[2], bias_mode=key[3], m=key[4], n=len(rs),
                mean_ee=float(ee.mean()),
                se_ee=float(ee.std(ddof=1) / np.sqrt(len(rs))) if len(rs) > 1 else 0.0,
                mean_loss_hhat=float(np.mean([r.loss_hhat for r in rs])),
                mean_loss_hstar=float(np.mean([r.loss_hstar for r in rs])),
            )
        )
    return out


def summary_csv(results) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    cols = ["arch", "L", "lambda", "bias_mode", "m", "n", "mean_ee", "se_ee",
            "mean_loss_hhat", "mean_loss_hstar"]
    w.writerow(cols)
    for s in summarize(results):
        w.writerow([s["arch"], s["L"], repr(s["lam"]), s["bias_mode"], s["m"], s["n"],
                    repr(s["mean_ee"]), repr(s["se_ee"]), repr(s["mean_loss_hhat"]),
                    repr(s["mean_loss_hstar"])])
    return buf.getvalue()


# --- bound tables ----------------------------------------------------------

BOUND_COLUMNS = ("arch", "L", "m", "lambda", "gamma", "B", "T", "value", "valid")
# rows of run_bound_table carry the quantity name as a second column
ROW_COLUMNS = ("arch", "kind") + BOUND_COLUMNS[1:]


@dataclass(frozen=True)
class BoundGrid:
    """Cartesian grid of bound inputs; ``T`` is the per-layer (uniform) value."""

    archs: tuple = ("relu", "ista", "admm")
    depths: tuple = (10,)
    ms: tuple = DEFAULT_MS
    lambdas: tuple = DEFAULT_LAMBDAS
    Bs: tuple = (1.0,)
    Ts: tuple = (0.0, 1.0)
    B0: float = 1.0
    gamma: float = 1.0
    C: float = 1.0
    alpha: float = 1.0
    s: float = 1.0
    n_x: int = 64
    checkpoints: tuple = ()

    @classmethod
    def from_dict(cls, d: dict) -> "BoundGrid":
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


def _bound_cells(grid: BoundGrid):
    for L in grid.depths:
        for B in grid.Bs:
            yield L, [float(B)] * L, repr(float(B))
    for path in grid.checkpoints:
        params = load_checkpoint(path)
        yield params.L, weight_norms(params)["linf"], f"measured:{Path(path).name}"


def run_bound_table(grid: BoundGrid) -> tuple[list[list], list[dict]]:
    """Evaluate every applicable bound on the grid.

    Returns rows (``ROW_COLUMNS``; ``kind`` is ``ge``, ``r_star`` or ``ee``)
    and a JSON-ready list of reports with
    all intermediates. Checkpoints contribute rows whose per-layer ``B_l`` are
    the measured ``||W^l||_inf`` of the stored network.
    """
    rows, reports = [], []
    for L, B_layers, B_label in _bound_cells(grid):
        for m in grid.ms:
            for lam in grid.lambdas:
                for T in grid.Ts:
                    inp = BoundInputs(
                        B0=grid.B0, B=B_layers, lam=float(lam), gamma=grid.gamma, m=int(m),
                        L=L, T=[float(T)] * L, C=grid.C, alpha=grid.alpha, s=grid.s,
                        n_x=grid.n_x,
                    )
                    for arch in grid.archs:
                        for kind, rep in _bounds_for(arch, inp):
                            rows.append([arch, kind, L, m, repr(float(lam)), repr(grid.gamma),
                                         B_label, repr(float(T)), repr(rep.value), rep.valid])
                            reports.append(dict(arch=arch, kind=kind, L=L, m=m, lam=lam,
                                                B=B_label, T=T, **rep.to_dict()))
    return rows, reports


def _bounds_for(arch: str, inp: BoundInputs):
    ge = {"relu": ge_bound_relu, "ista": ge_bound_ista, "admm": ge_bound_admm}[arch]
    out = [("ge", ge(inp))]
    if arch != "admm" or inp.L >= 2:
        fp = ee_fixed_point(arch, inp)
        out.append(("r_star", fp))
        ee = ee_bound(fp.value, inp.C, inp.s, inp.m, inp.n_x)
        out.append(("ee", fp.derived(ee)))
    return out


def bounds_csv(rows, kind: str | None = "ge") -> str:
    """CSV of the rows of one ``kind`` in ``BOUND_COLUMNS``; ``kind=None`` keeps all, with a kind column."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if kind is None:
        w.writerow(ROW_COLUMNS)
        w.writerows(rows)
    else:
        w.writerow(BOUND_COLUMNS)
        w.writerows([r[:1] + r[2:] for r in rows if r[1] == kind])
    return buf.getvalue()


# --- output ----------------------------------------------------------------

def write_outputs(out_dir, files: dict, spec_echo: dict) -> Path:
    """Write ``files`` (name -> text or bytes) and a manifest with their SHA-256 hashes."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    hashes = {}
    for name, text in sorted(files.items()):
        data = text if isinstance(text, bytes) else text.encode("utf-8")
        (out / name).write_bytes(data)
        hashes[name] = hashlib.sha256(data).hexdigest()
    manifest = {"spec": spec_echo, "code_version": __version__, "files": hashes}
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=_json_default) + "\n")
    return path


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, tuple):
        return list(o)
    if hasattr(o, "value"):
        return o.value
    raise TypeError(f"cannot serialize {type(o).__name__}")
