"""Command-line entry point: ``hadua gen-data|train|eval|sweep``.

Exit codes: 0 ok, 2 config, 3 IO, 4 leakage, 5 numeric failure.
Set ``HADUA_LOG`` (DEBUG, INFO, WARNING, ...) to change verbosity.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import io
from .config import ablation_name, config_to_dict, load_config
from .errors import ConfigError, ContractError, DataIOError, HaduaError
from .evaluation import compute_metrics, mi_feature_importance, write_confusion_csv
from .experiment import ExperimentConfig, Subjects, make_subjects, prepare_subjects
from .model import predict_proba
from .synthdata import generate_subjects, leave_one_subject_out, spec_dict
from .train import ABLATIONS, EPOCH_LOG_COLUMNS, fit

log = logging.getLogger("hadua")

PSEUDO_COLUMNS = ("epoch", "mu_t", "sigma2_t", "alpha_t", "mean_weight")
SWEEP_COLUMNS = ("tau", "alpha", "seed", "acc", "macro_f1", "auc")


def config_hash(cfg: ExperimentConfig) -> str:
    blob = json.dumps(config_to_dict(cfg), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_seed(args.seed)
    if getattr(args, "ablation", None) is not None:
        cfg = cfg.with_ablation(args.ablation)
    return cfg


def _load_data(cfg: ExperimentConfig, data_dir) -> tuple[Subjects, dict]:
    datasets, views, manifest = io.read_dataset(data_dir)
    for d in datasets + (views or []):
        if d.labels.size and (d.labels.min() < 0 or d.labels.max() >= cfg.synth.n_classes):
            raise DataIOError(f"subject {d.subject}: labels outside [0, {cfg.synth.n_classes})")
    views = None if views is None else prepare_subjects(views, cfg.features)
    return Subjects(prepare_subjects(datasets, cfg.features), views), manifest


def _header(cfg: ExperimentConfig, held_out: int, manifest: dict | None = None) -> dict:
    return {
        "run_id": cfg.run_id,
        "seed": cfg.seed,
        "held_out": held_out,
        "ablation": ablation_name(cfg.train.ablation),
        "switches": asdict(cfg.train.ablation),
        "config_hash": config_hash(cfg),
        "data_spec_hash": (manifest or {}).get("spec_hash"),
    }


def _fold_dir(out: Path, held_out: int) -> Path:
    return out / f"subject_{held_out:02d}"


def cmd_gen_data(config_path, out_dir, seed: int | None = None) -> int:
    cfg, _ = load_config(config_path)
    if seed is not None:
        cfg = cfg.with_seed(seed)
    datasets = generate_subjects(cfg.synth, seed=cfg.seed)
    view = cfg.synth.target_view()
    views = None if view is None else generate_subjects(view, seed=cfg.seed)
    manifest = {"run_id": cfg.run_id, "seed": cfg.seed, "spec_hash": cfg.synth.digest(), "synth": spec_dict(cfg.synth)}
    io.write_dataset(datasets, out_dir, manifest, views)
    log.info("wrote %d subjects to %s", len(datasets), out_dir)
    return 0


def run_train(cfg: ExperimentConfig, subjects: Subjects, held_out: int, out: Path, manifest: dict | None = None):
    source, target, target_labels = leave_one_subject_out(subjects.datasets, held_out, subjects.target_views)
    result = fit(cfg.train_config, source, target, target_eval_labels=target_labels, n_classes=cfg.synth.n_classes)
    header = {**_header(cfg, held_out, manifest), "best_epoch": result.best_epoch,
              "no_improvement": result.no_improvement}
    fold = _fold_dir(out, held_out)
    io.write_rows_csv(result.state.history, EPOCH_LOG_COLUMNS, fold / "epoch_log.csv")
    io.write_rows_csv(result.state.history, PSEUDO_COLUMNS, fold / "pseudo_stats.csv")
    io.save_checkpoint(result.state.params, fold / "checkpoint.json")
    with io.open_text(fold / "metrics.json") as fh:
        fh.write(result.report.to_json(header))
    write_confusion_csv(result.report, fold / "confusion.csv")
    return result


def cmd_train(config_path, data_dir, held_out: int, out_dir=None, seed=None, ablation=None) -> int:
    cfg, _ = load_config(config_path)
    cfg = _apply_overrides(cfg, argparse.Namespace(seed=seed, ablation=ablation))
    subjects, manifest = _load_data(cfg, data_dir)
    out = Path(out_dir) if out_dir is not None else Path(cfg.output_dir) / cfg.run_id
    result = run_train(cfg, subjects, held_out, out, manifest)
    print(f"subject {held_out}: accuracy {result.report.accuracy:.4f}")
    return 0


def cmd_eval(config_path, data_dir, held_out: int, out_dir=None, seed=None, ablation=None) -> int:
    """Re-score a saved checkpoint on the held-out subject and add feature importances."""
    cfg, _ = load_config(config_path)
    cfg = _apply_overrides(cfg, argparse.Namespace(seed=seed, ablation=ablation))
    subjects, manifest = _load_data(cfg, data_dir)
    out = Path(out_dir) if out_dir is not None else Path(cfg.output_dir) / cfg.run_id
    fold = _fold_dir(out, held_out)
    params = io.load_checkpoint(fold / "checkpoint.json")
    _, target, labels = leave_one_subject_out(subjects.datasets, held_out, subjects.target_views)
    probs = predict_proba(params, target.eeg, target.eye)
    report = compute_metrics(probs, labels, cfg.synth.n_classes)
    with io.open_text(fold / "eval_metrics.json") as fh:
        fh.write(report.to_json(_header(cfg, held_out, manifest)))
    write_confusion_csv(report, fold / "eval_confusion.csv")
    features = np.concatenate([target.eeg, target.eye], axis=1)
    names = [f"eeg_{i}" for i in range(target.eeg.shape[1])] + [f"eye_{i}" for i in range(target.eye.shape[1])]
    bins = 8 if features.shape[0] >= 80 else 4
    try:
        mi, degenerate = mi_feature_importance(features, probs, bins=bins)
        rows = [{"feature": n, "mi": float(v), "degenerate": bool(d)} for n, v, d in zip(names, mi, degenerate)]
        io.write_rows_csv(rows, ("feature", "mi", "degenerate"), fold / "mi_importance.csv")
    except ContractError as exc:
        log.warning("skipping feature importance: %s", exc)
    print(f"subject {held_out}: accuracy {report.accuracy:.4f}")
    return 0


def sweep_cell(cfg: ExperimentConfig, tau: float, alpha: float, seed: int, held_out, data_dir, out: Path) -> dict:
    """One grid cell: leave-one-subject-out average over ``held_out`` subjects."""
    cell_cfg = cfg.with_seed(seed)
    ua = replace(cell_cfg.train.ua, tau=tau, alpha0=alpha)
    cell_cfg = replace(cell_cfg, train=replace(cell_cfg.train, ua=ua))
    if data_dir is not None:
        subjects, manifest = _load_data(cell_cfg, data_dir)
    else:
        subjects, manifest = make_subjects(cell_cfg), None
    ids = list(held_out) if held_out is not None else subjects.ids
    cell_out = out / f"tau{tau:g}_alpha{alpha:g}_seed{seed}"
    reports = [run_train(cell_cfg, subjects, sid, cell_out, manifest).report for sid in ids]
    return {
        "tau": tau, "alpha": alpha, "seed": seed,
        "acc": float(np.mean([r.accuracy for r in reports])),
        "macro_f1": float(np.mean([r.macro_f1 for r in reports])),
        "auc": float(np.mean([r.auc for r in reports])),
    }


def _sweep_cell_safe(args) -> tuple[dict | None, str | None]:
    try:
        return sweep_cell(*args), None
    except HaduaError as exc:
        return None, f"{type(exc).__name__}: {exc}"


def cmd_sweep(config_path, out_dir=None, data_dir=None, jobs: int = 1, ablation=None) -> int:
    cfg, grid = load_config(config_path)
    cfg = _apply_overrides(cfg, argparse.Namespace(seed=None, ablation=ablation))
    if not grid.cells():
        raise ConfigError("sweep grid is empty")
    out = Path(out_dir) if out_dir is not None else Path(cfg.output_dir) / cfg.run_id
    tasks = [(cfg, t, a, s, grid.held_out, data_dir, out) for t, a, s in grid.cells()]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_sweep_cell_safe, tasks))  # map keeps grid order
    else:
        outcomes = [_sweep_cell_safe(t) for t in tasks]
    rows, failures = [], []
    for (_, t, a, s, *_), (row, err) in zip(tasks, outcomes):
        if err is not None:
            log.error("cell tau=%g alpha=%g seed=%d failed: %s", t, a, s, err)
            failures.append({"tau": t, "alpha": a, "seed": s, "error": err})
            row = {"tau": t, "alpha": a, "seed": s, "acc": float("nan"), "macro_f1": float("nan"), "auc": float("nan")}
        rows.append(row)
    io.write_rows_csv(rows, SWEEP_COLUMNS, out / "sweep.csv")
    if failures:
        io.write_rows_csv(failures, ("tau", "alpha", "seed", "error"), out / "sweep_failures.csv")
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hadua", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data_required: bool):
        p.add_argument("--config", required=True, help="experiment config JSON")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, help="override the config seed")
        if data_required is not None:
            p.add_argument("--data", required=data_required, help="dataset directory written by gen-data")

    p = sub.add_parser("gen-data", help="generate synthetic subjects")
    common(p, data_required=None)
    for name in ("train", "eval"):
        p = sub.add_parser(name, help=f"{name} on one held-out subject")
        common(p, data_required=True)
        p.add_argument("--held-out", type=int, required=True, help="target subject id")
        p.add_argument("--ablation", choices=sorted(ABLATIONS), help="ablation preset")
    p = sub.add_parser("sweep", help="tau/alpha sensitivity grid")
    common(p, data_required=False)
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.add_argument("--ablation", choices=sorted(ABLATIONS), help="ablation preset")
    return parser


def _configure_logging() -> None:
    level_name = os.environ.get("HADUA_LOG", "WARNING").upper()
    level = getattr(logging, level_name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def main(argv=None) -> int:
    _configure_logging()
    args = build_parser().parse_args(argv)
    try:
        if args.command == "gen-data":
            if args.out is None:
                raise ConfigError("gen-data needs --out")
            return cmd_gen_data(args.config, args.out, args.seed)
        if args.command == "train":
            return cmd_train(args.config, args.data, args.held_out, args.out, args.seed, args.ablation)
        if args.command == "eval":
            return cmd_eval(args.config, args.data, args.held_out, args.out, args.seed, args.ablation)
        if args.seed is not None:
            raise ConfigError("sweep takes its seeds from the config grid; --seed is not accepted")
        return cmd_sweep(args.config, args.out, args.data, args.jobs, args.ablation)
    except HaduaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
