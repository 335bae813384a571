"""Command line entry point: ``python -m unrollgen <command> --config cfg.json --out DIR``.

Every command reads a JSON document, writes its outputs into ``--out`` and
finishes with ``manifest.json`` (config echo, code version, SHA-256 per file).
"""

from __future__ import annotations

import argparse
import io
import json
import logging
import sys
import tempfile
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from .harness import (
    BoundGrid,
    ExperimentSpec,
    bounds_csv,
    ee_rows_csv,
    run_bound_table,
    run_depth_sweep,
    run_ee_experiment,
    summary_csv,
    train_cell,
    write_outputs,
)
from .networks import export_norms_csv, save_checkpoint
from .problem import ProblemConfig, build_sensing_matrix, export_dataset_csv, generate_dataset, save_dataset
from .rademacher import ClassArch, ClassSpec, RcConfig, estimate_T_indicator, thresholding_gap
from .rng import child_stream

log = logging.getLogger("unrollgen")


def _load(path) -> dict:
    if path is None:
        return {}
    with open(path) as fh:
        return json.load(fh)


def _spec(cfg: dict, seed: int | None) -> ExperimentSpec:
    spec = ExperimentSpec.from_dict(cfg)
    if seed is not None:
        spec = replace(spec, problem=replace(spec.problem, master_seed=seed))
    return spec


def _via_file(writer, *args) -> bytes:
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "f"
        writer(*args, path)
        return path.read_bytes()


def cmd_gen(args, cfg):
    spec = _spec(cfg, args.seed)
    sensing = build_sensing_matrix(spec.problem)
    files = {"sensing_matrix.csv": _matrix_csv(sensing.A)}
    sets = {"test": generate_dataset(spec.problem, sensing, spec.m_test, "test")}
    for seed in spec.seeds:
        for m in spec.ms:
            sets[f"train_m{m}_seed{seed}"] = generate_dataset(spec.problem, sensing, m, "train", (seed, m))
    for name, ds in sets.items():
        files[f"{name}.bin"] = _via_file(save_dataset, ds)
        files[f"{name}.csv"] = _via_file(export_dataset_csv, ds)
    return files, spec.to_dict()


def _matrix_csv(M) -> str:
    buf = io.StringIO()
    np.savetxt(buf, M, delimiter=",", fmt="%r")
    return buf.getvalue()


def cmd_train(args, cfg):
    spec = _spec(cfg, args.seed)
    cell = dict(arch=spec.archs[0], L=spec.depths[0], lam=spec.lambdas[0],
                bias_mode=spec.bias_modes[0], m=spec.ms[0], seed=spec.seeds[0])
    params, history, test_loss = train_cell(spec, **cell)
    hist = "epoch,train_loss\n" + "".join(f"{i},{v!r}\n" for i, v in enumerate(history, 1))
    result = {**cell, "test_loss": test_loss, "train_loss_final": history[-1]}
    files = {
        "checkpoint.bin": _via_file(save_checkpoint, params),
        "norms.csv": _via_file(export_norms_csv, params),
        "history.csv": hist,
        "result.json": json.dumps(result, indent=2) + "\n",
    }
    return files, spec.to_dict()


def _failures(failures) -> str:
    return json.dumps(failures, indent=2, sort_keys=True) + "\n"


def cmd_ee_sweep(args, cfg):
    spec = _spec(cfg, args.seed)
    results, failures = run_ee_experiment(spec, workers=args.workers)
    files = {
        "ee_results.csv": ee_rows_csv(results),
        "ee_summary.csv": summary_csv(results),
        "failures.json": _failures(failures),
    }
    return files, spec.to_dict()


def cmd_depth_sweep(args, cfg):
    cfg = dict(cfg)
    cfg.setdefault("depths", [2, 4, 6, 8, 10])
    spec = _spec(cfg, args.seed)
    per_depth = run_depth_sweep(spec, workers=args.workers)
    files, all_results, all_failures = {}, [], []
    for L, (results, failures) in per_depth.items():
        files[f"ee_results_L{L}.csv"] = ee_rows_csv(results)
        all_results += results
        all_failures += failures
    files["ee_results.csv"] = ee_rows_csv(all_results)
    files["ee_summary.csv"] = summary_csv(all_results)
    files["failures.json"] = _failures(all_failures)
    return files, spec.to_dict()


def cmd_bounds(args, cfg):
    grid = BoundGrid.from_dict(cfg)
    rows, reports = run_bound_table(grid)
    files = {
        "bounds.csv": bounds_csv(rows, "ge"),
        "ee_bounds.csv": bounds_csv([r for r in rows if r[1] != "ge"], None),
        "bounds_report.json": json.dumps(reports, indent=1, default=_plain) + "\n",
    }
    return files, asdict(grid)


def _plain(o):
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    raise TypeError(type(o).__name__)


RC_DEFAULTS = {
    "class": "linear", "L": 1, "B": 1.0, "B1": 1.0, "lam": 0.1, "j": 0,
    "n": 5, "m": 10, "lambdas": [0.0, 0.1, 0.5, 2.0], "estimate_T": False,
    "problem": {}, "rc": {},
}


def cmd_rc(args, cfg):
    unknown = set(cfg) - set(RC_DEFAULTS)
    if unknown:
        raise ValueError(f"unknown rc keys: {sorted(unknown)}")
    c = {**RC_DEFAULTS, **cfg}
    rc_cfg = RcConfig(**c["rc"])
    if args.seed is not None:
        rc_cfg = replace(rc_cfg, seed=args.seed)
    arch = ClassArch(c["class"])
    m = int(c["m"])
    if arch is ClassArch.LINEAR:
        inputs = child_stream(rc_cfg.seed, "rc-inputs", m).standard_normal((m, int(c["n"])))
        A = None
    else:
        problem = ProblemConfig(**c["problem"])
        sensing = build_sensing_matrix(problem)
        inputs = generate_dataset(problem, sensing, m, "train", (rc_cfg.seed,)).Y
        A = sensing.A
    spec = ClassSpec(arch=arch, L=int(c["L"]), B=float(c["B"]), B1=float(c["B1"]),
                     lam=float(c["lam"]), j=int(c["j"]), A=A)
    lines = ["class,lambda,m,mean,std_error,gap\n"]
    report = []
    base_done = False
    for lam in c["lambdas"]:
        res = thresholding_gap(spec, inputs, float(lam), rc_cfg)
        if not base_done:
            b = res["rc_base"]
            lines.append(f"{arch.value},,{m},{b.mean!r},{b.std_error!r},\n")
            base_done = True
        t = res["rc_thresholded"]
        lines.append(f"thresholded-{arch.value},{float(lam)!r},{m},{t.mean!r},{t.std_error!r},{res['gap']!r}\n")
        entry = {"lambda": float(lam), "rc_base": res["rc_base"].mean,
                 "rc_thresholded": t.mean, "gap": res["gap"], "gap_std_error": res["gap_std_error"],
                 "implied_T": res["implied_T"], "exhaustive_signs": t.exhaustive,
                 "note": "inner sups are lower bounds found by projected ascent"}
        if c["estimate_T"]:
            entry["T_heuristic"] = estimate_T_indicator(spec, inputs, float(lam), rc_cfg)
        report.append(entry)
    files = {"rc.csv": "".join(lines), "rc_report.json": json.dumps(report, indent=2) + "\n"}
    return files, {**c, "rc": asdict(rc_cfg)}


COMMANDS = {
    "gen": (cmd_gen, "generate the sensing matrix and train/test datasets"),
    "train": (cmd_train, "train the single network of the first grid cell"),
    "ee-sweep": (cmd_ee_sweep, "empirical estimation-error sweep"),
    "depth-sweep": (cmd_depth_sweep, "estimation-error sweep over depths"),
    "bounds": (cmd_bounds, "tabulate generalization and estimation error bounds"),
    "rc": (cmd_rc, "Monte-Carlo Rademacher complexity and the soft-thresholding check"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="unrollgen", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON configuration file (defaults apply when omitted)")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override the master seed")
        p.add_argument("--workers", type=int, default=1, help="worker processes for sweeps")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.workers < 1:
        print("error: --workers must be at least 1", file=sys.stderr)
        return 2
    try:
        files, echo = COMMANDS[args.command][0](args, _load(args.config))
    except (ValueError, TypeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    manifest = write_outputs(args.out, files, {"command": args.command, "config": echo})
    print(f"wrote {len(files)} files and {manifest}")
    return 0
