"""Leave-one-subject-out runs on generated subjects, with ablation presets."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .evaluation import MetricsReport
from .features import zscore_per_subject
from .synthdata import SubjectDataset, SynthSpec, generate_subjects, leave_one_subject_out
from .train import ABLATIONS, Ablation, FitResult, TrainConfig, fit

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FeatureSettings:
    zscore: bool = True


@dataclass(frozen=True)
class ExperimentConfig:
    run_id: str
    seed: int
    synth: SynthSpec = SynthSpec()
    train: TrainConfig = TrainConfig()
    features: FeatureSettings = FeatureSettings()
    output_dir: str = "runs"

    def with_ablation(self, ablation: str | Ablation) -> "ExperimentConfig":
        abl = ABLATIONS[ablation] if isinstance(ablation, str) else ablation
        return replace(self, train=replace(self.train, ablation=abl))

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, seed=seed)

    @property
    def train_config(self) -> TrainConfig:
        # one seed drives both data generation and training
        return replace(self.train, seed=self.seed)


def prepare_subjects(datasets: list[SubjectDataset], settings: FeatureSettings) -> list[SubjectDataset]:
    if not settings.zscore:
        return datasets
    return [SubjectDataset(d.subject, zscore_per_subject(d.eeg), zscore_per_subject(d.eye), d.labels)
            for d in datasets]


@dataclass
class Subjects:
    """Generated subjects plus, under label shift, their held-out views."""

    datasets: list[SubjectDataset]
    target_views: list[SubjectDataset] | None = None

    @property
    def ids(self) -> list[int]:
        return [d.subject for d in self.datasets]


def make_subjects(cfg: ExperimentConfig) -> Subjects:
    datasets = prepare_subjects(generate_subjects(cfg.synth, seed=cfg.seed), cfg.features)
    view = cfg.synth.target_view()
    views = None if view is None else prepare_subjects(generate_subjects(view, seed=cfg.seed), cfg.features)
    return Subjects(datasets, views)


def run_fold(cfg: ExperimentConfig, subjects: Subjects, held_out: int) -> FitResult:
    source, target, target_labels = leave_one_subject_out(subjects.datasets, held_out, subjects.target_views)
    return fit(cfg.train_config, source, target, target_eval_labels=target_labels, n_classes=cfg.synth.n_classes)


@dataclass
class LosoResult:
    folds: dict[int, MetricsReport] = field(default_factory=dict)

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean([r.accuracy for r in self.folds.values()]))

    @property
    def mean_per_class_std(self) -> float:
        return float(np.mean([r.per_class_std for r in self.folds.values()]))

    def mean(self, metric: str) -> float:
        return float(np.mean([getattr(r, metric) for r in self.folds.values()]))


def run_loso(cfg: ExperimentConfig, subjects: Subjects | None = None,
             held_out: list[int] | None = None) -> LosoResult:
    subjects = make_subjects(cfg) if subjects is None else subjects
    ids = subjects.ids if held_out is None else held_out
    result = LosoResult()
    for sid in ids:
        fold = run_fold(cfg, subjects, sid)
        result.folds[sid] = fold.report
        log.info("%s seed %d subject %d: acc %.4f", cfg.run_id, cfg.seed, sid, fold.report.accuracy)
    return result
