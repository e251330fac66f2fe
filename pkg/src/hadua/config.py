"""Experiment configuration: one JSON file fully determines a run.

Only ``run_id`` and ``seed`` are required; every other key falls back to the
dataclass default. Unknown keys are rejected at every nesting level.

Example::

    {
      "run_id": "bench",
      "seed": 0,
      "synth": {"eta": 1.0, "class_priors": [0.6, 0.3, 0.1]},
      "features": {"zscore": false},
      "train": {"lr": 0.001, "max_epochs": 15, "ablation": "no-ua",
                "ua": {"tau": 1.0}, "arch": {"d_model": 32}},
      "sweep": {"tau": [0.5, 1.0], "alpha": [0.0, 0.3], "seeds": [0, 1]},
      "output_dir": "runs"
    }
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields

import jsonschema

from .alignment import KernelConfig
from .errors import ConfigError, DataIOError
from .experiment import ExperimentConfig, FeatureSettings
from .pseudo import UAConfig
from .synthdata import SynthSpec, spec_dict
from .train import ABLATIONS, Ablation, AdamConfig, ArchConfig, TrainConfig

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_nonneg = {"type": "number", "minimum": 0}
_posint = {"type": "integer", "minimum": 1}
_bool = {"type": "boolean"}


def _obj(props: dict, required=()) -> dict:
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}


SCHEMA = _obj(
    {
        "run_id": {"type": "string", "minLength": 1, "pattern": r"^[A-Za-z0-9_.\-]+$"},
        "seed": {"type": "integer", "minimum": 0},
        "output_dir": {"type": "string"},
        "synth": _obj({
            "n_classes": {"type": "integer", "minimum": 2},
            "d_latent": _posint, "eeg_dim": _posint, "eye_dim": _posint,
            "n_subjects": _posint, "samples_per_class": _posint,
            "eta": _nonneg,
            "class_priors": {"oneOf": [{"type": "null"}, {"type": "array", "items": _nonneg, "minItems": 2}]},
            "target_priors": {"oneOf": [{"type": "null"}, {"type": "array", "items": _nonneg, "minItems": 2}]},
            "class_sep": _nonneg, "within_std": _nonneg, "rotation_scale": _nonneg,
            "translation_scale": _nonneg, "noise_eeg": _nonneg, "noise_eye": _nonneg,
        }),
        "features": _obj({"zscore": _bool}),
        "train": _obj({
            "lr": _pos, "weight_decay": _nonneg, "batch_size": {"type": "integer", "minimum": 2},
            "max_epochs": _posint, "early_stop_patience": {"type": "integer", "minimum": 0},
            "gamma_mmd": _nonneg, "gamma_cmmd": _nonneg,
            "momentum": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
            "lambda_max": _pos,
            "hard_threshold": {"oneOf": [{"type": "null"}, {"type": "number", "minimum": 0, "maximum": 1}]},
            "cmmd_labels": {"enum": ["interpolated", "aligned"]},
            "val_fraction": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
            "adam": _obj({"beta1": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                          "beta2": {"type": "number", "minimum": 0, "exclusiveMaximum": 1}, "eps": _pos}),
            "ablation": {"oneOf": [
                {"enum": sorted(ABLATIONS)},
                _obj({f.name: _bool for f in fields(Ablation)}),
            ]},
            "ua": _obj({
                "tau": _nonneg, "alpha0": {"type": "number", "minimum": 0, "maximum": 1}, "T0": _num,
                "k_decay": _pos, "schedule": {"enum": ["sigmoid", "linear"]}, "total_epochs": _posint,
            }),
            "kernel": _obj({"sigma": _pos, "bandwidth_mode": {"enum": ["fixed", "median"]}}),
            "arch": _obj({
                "d_model": _posint, "n_tokens": _posint, "heads": _posint,
                "encoder_hidden": _posint, "classifier_hidden": _posint,
                "fusion": {"enum": ["eeg_cross", "eeg_eye_cross"]},
            }),
        }),
        "sweep": _obj({
            "tau": {"type": "array", "items": _nonneg, "minItems": 1},
            "alpha": {"type": "array", "items": {"type": "number", "minimum": 0, "maximum": 1}, "minItems": 1},
            "seeds": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
            "held_out": {"oneOf": [{"type": "null"}, {"type": "array", "items": {"type": "integer"}, "minItems": 1}]},
        }),
    },
    required=("run_id", "seed"),
)


@dataclass(frozen=True)
class SweepGrid:
    tau: tuple[float, ...] = (0.5, 1.0, 1.5, 2.0)
    alpha: tuple[float, ...] = (0.0, 0.3, 0.5, 0.9)
    seeds: tuple[int, ...] = (0,)
    held_out: tuple[int, ...] | None = None  # None: every subject (leave-one-subject-out average)

    def cells(self) -> list[tuple[float, float, int]]:
        return [(t, a, s) for t in self.tau for a in self.alpha for s in self.seeds]


def _describe(err: jsonschema.ValidationError) -> str:
    where = "/".join(str(p) for p in err.absolute_path) or "<root>"
    if err.validator == "required":
        missing = [k for k in err.validator_value if k not in err.instance]
        return f"{where}: missing required key(s) {', '.join(repr(k) for k in missing)}"
    if err.validator == "additionalProperties":
        extra = sorted(set(err.instance) - set(err.schema.get("properties", {})))
        return f"{where}: unknown key(s) {', '.join(repr(k) for k in extra)}"
    return f"{where}: {err.message}"


def validate(raw: dict) -> None:
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        raise ConfigError("invalid config:\n  " + "\n  ".join(_describe(e) for e in errors))


def _ablation(value) -> Ablation:
    if isinstance(value, str):
        return ABLATIONS[value]
    return Ablation(**value)


def parse_config(raw: dict) -> tuple[ExperimentConfig, SweepGrid]:
    validate(raw)
    try:
        synth_raw = dict(raw.get("synth", {}))
        for key in ("class_priors", "target_priors"):
            if synth_raw.get(key) is not None:
                synth_raw[key] = tuple(synth_raw[key])
        train_raw = dict(raw.get("train", {}))
        nested = {
            "adam": AdamConfig(**train_raw.pop("adam", {})),
            "ua": UAConfig(**train_raw.pop("ua", {})),
            "kernel": KernelConfig(**train_raw.pop("kernel", {})),
            "arch": ArchConfig(**train_raw.pop("arch", {})),
            "ablation": _ablation(train_raw.pop("ablation", "full")),
        }
        cfg = ExperimentConfig(
            run_id=raw["run_id"],
            seed=raw["seed"],
            synth=SynthSpec(**synth_raw),
            train=TrainConfig(**train_raw, **nested, seed=raw["seed"]),
            features=FeatureSettings(**raw.get("features", {})),
            output_dir=raw.get("output_dir", "runs"),
        )
        sweep_raw = raw.get("sweep", {})
        grid = SweepGrid(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in sweep_raw.items()})
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config: {exc}") from exc
    return cfg, grid


def load_config(path) -> tuple[ExperimentConfig, SweepGrid]:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise DataIOError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    return parse_config(raw)


def ablation_name(ablation: Ablation) -> str | None:
    for name, preset in ABLATIONS.items():
        if preset == ablation:
            return name
    return None


def config_to_dict(cfg: ExperimentConfig) -> dict:
    """Fully expanded JSON-ready form; ``parse_config`` of the result gives back ``cfg``."""
    train = asdict(cfg.train)
    train.pop("seed")
    return {
        "run_id": cfg.run_id,
        "seed": cfg.seed,
        "output_dir": cfg.output_dir,
        "synth": spec_dict(cfg.synth),
        "features": asdict(cfg.features),
        "train": train,
    }
