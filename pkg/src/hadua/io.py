"""On-disk formats: subject CSVs, dataset manifest, checkpoints and training logs.

Floats are written with 17 significant digits so every file round-trips
bit-exactly. All text files are UTF-8 with LF line endings.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .errors import ContractError, DataIOError
from .model import ModelConfig, ModelParams, config_dict
from .synthdata import SubjectDataset

MANIFEST = "manifest.json"
CHECKPOINT_VERSION = 1


def fmt(x: float) -> str:
    return f"{x:.17g}"


def open_text(path):
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        return open(path, "w", encoding="utf-8", newline="\n")
    except OSError as exc:
        raise DataIOError(f"cannot write {path}: {exc}") from exc


def subject_filename(subject: int, prefix: str = "subject") -> str:
    return f"{prefix}_{subject:02d}.csv"


def write_subject_csv(ds: SubjectDataset, path) -> None:
    header = ["subject", "label", *(f"eeg_{i}" for i in range(ds.eeg.shape[1])),
              *(f"eye_{i}" for i in range(ds.eye.shape[1]))]
    with open_text(path) as fh:
        fh.write(",".join(header) + "\n")
        for lab, e, y in zip(ds.labels, ds.eeg, ds.eye):
            fh.write(",".join([str(ds.subject), str(int(lab)), *map(fmt, e), *map(fmt, y)]) + "\n")


def read_subject_csv(path) -> SubjectDataset:
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataIOError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise DataIOError(f"{path}: empty file")
    header = rows[0]
    if header[:2] != ["subject", "label"]:
        raise DataIOError(f"{path}: header must start with 'subject,label'")
    eeg_cols = [i for i, h in enumerate(header) if h.startswith("eeg_")]
    eye_cols = [i for i, h in enumerate(header) if h.startswith("eye_")]
    if len(eeg_cols) + len(eye_cols) + 2 != len(header) or not eeg_cols or not eye_cols:
        raise DataIOError(f"{path}: unexpected columns")
    try:
        body = np.array([[float(v) for v in r] for r in rows[1:]], dtype=np.float64).reshape(-1, len(header))
    except ValueError as exc:
        raise DataIOError(f"{path}: malformed row ({exc})") from exc
    subjects = np.unique(body[:, 0])
    if subjects.size != 1:
        raise DataIOError(f"{path}: expected a single subject id")
    return SubjectDataset(
        subject=int(subjects[0]), eeg=body[:, eeg_cols], eye=body[:, eye_cols], labels=body[:, 1].astype(np.int64)
    )


def write_json(obj, path) -> None:
    with open_text(path) as fh:
        fh.write(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise DataIOError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataIOError(f"{path}: invalid JSON ({exc})") from exc


def write_dataset(datasets: list[SubjectDataset], out_dir, manifest: dict,
                  target_views: list[SubjectDataset] | None = None) -> list[Path]:
    """One CSV per subject (plus held-out views, if any) and ``manifest.json`` listing them."""
    out = Path(out_dir)
    paths = []
    for ds in datasets:
        p = out / subject_filename(ds.subject)
        write_subject_csv(ds, p)
        paths.append(p)
    entries = {**manifest, "files": [p.name for p in paths]}
    if target_views is not None:
        view_paths = []
        for ds in target_views:
            p = out / subject_filename(ds.subject, prefix="target")
            write_subject_csv(ds, p)
            view_paths.append(p)
        entries["target_files"] = [p.name for p in view_paths]
        paths += view_paths
    write_json(entries, out / MANIFEST)
    return paths


def read_dataset(data_dir) -> tuple[list[SubjectDataset], list[SubjectDataset] | None, dict]:
    """Returns ``(subjects, held_out_views or None, manifest)``."""
    data_dir = Path(data_dir)
    manifest = read_json(data_dir / MANIFEST)
    files = manifest.get("files")
    if not isinstance(files, list) or not files:
        raise DataIOError(f"{data_dir / MANIFEST}: no files listed")
    datasets = [read_subject_csv(data_dir / f) for f in files]
    view_files = manifest.get("target_files")
    views = None if view_files is None else [read_subject_csv(data_dir / f) for f in view_files]
    return datasets, views, manifest


def save_checkpoint(params: ModelParams, path) -> None:
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "config": config_dict(params.config),
        "weights": {k: {"shape": list(v.shape), "data": v.ravel().tolist()} for k, v in sorted(params.weights.items())},
    }
    write_json(payload, path)


def load_checkpoint(path) -> ModelParams:
    payload = read_json(path)
    if payload.get("format_version") != CHECKPOINT_VERSION:
        raise DataIOError(f"{path}: unsupported checkpoint version {payload.get('format_version')!r}")
    try:
        cfg = ModelConfig(**payload["config"])
        weights = {k: np.array(w["data"], dtype=np.float64).reshape(w["shape"]) for k, w in payload["weights"].items()}
    except (KeyError, TypeError, ValueError) as exc:
        raise DataIOError(f"{path}: malformed checkpoint ({exc})") from exc
    return ModelParams(cfg, weights)


def write_rows_csv(rows: list[dict], columns, path) -> None:
    with open_text(path) as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            missing = [c for c in columns if c not in row]
            if missing:
                raise ContractError(f"row lacks columns {missing}")
            fh.write(",".join(_cell(row[c]) for c in columns) + "\n")


def _cell(v) -> str:
    if isinstance(v, (float, np.floating)):
        return fmt(float(v))
    return str(v)
