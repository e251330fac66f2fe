"""Multi-subject bimodal synthetic data with controllable inter-subject shift.

Every subject shares one class-mean skeleton in a latent space. A subject
applies its own random rotation (angle scaled by ``eta``) and translation
(scaled by ``eta``) to the latent codes, which are then mapped to EEG-like
and eye-like feature spaces by shared affine maps plus isotropic noise.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, replace

import numpy as np
from scipy.linalg import expm

from .errors import ConfigError, ContractError, LeakageError


@dataclass(frozen=True)
class SynthSpec:
    n_classes: int = 3
    d_latent: int = 8
    eeg_dim: int = 40
    eye_dim: int = 12
    n_subjects: int = 6
    samples_per_class: int = 300
    eta: float = 1.0
    class_priors: tuple[float, ...] | None = None
    # class priors of the held-out subject in leave-one-subject-out runs (None: same as class_priors)
    target_priors: tuple[float, ...] | None = None
    class_sep: float = 2.0
    within_std: float = 1.0
    rotation_scale: float = 0.5
    translation_scale: float = 1.0
    noise_eeg: float = 0.5
    noise_eye: float = 1.0

    def __post_init__(self):
        if self.n_classes < 2:
            raise ConfigError("synth.n_classes must be >= 2")
        if self.d_latent < 1 or self.eeg_dim < 1 or self.eye_dim < 1:
            raise ConfigError("synth dimensions must be positive")
        if self.n_subjects < 1 or self.samples_per_class < 1:
            raise ConfigError("synth spec produces no samples")
        if self.eta < 0:
            raise ConfigError("synth.eta must be >= 0")
        for name in ("class_priors", "target_priors"):
            value = getattr(self, name)
            if value is None:
                continue
            pri = np.asarray(value, dtype=np.float64)
            if pri.shape != (self.n_classes,) or np.any(pri < 0) or abs(pri.sum() - 1.0) > 1e-9:
                raise ConfigError(f"synth.{name} must be n_classes nonnegative values summing to 1")

    @property
    def priors(self) -> np.ndarray:
        if self.class_priors is None:
            return np.full(self.n_classes, 1.0 / self.n_classes)
        return np.asarray(self.class_priors, dtype=np.float64)

    def target_view(self) -> "SynthSpec | None":
        """Same subjects and shifts with labels drawn from the held-out priors; None when unset."""
        if self.target_priors is None:
            return None
        return replace(self, class_priors=self.target_priors, target_priors=None)

    @property
    def rows_per_subject(self) -> int:
        return self.samples_per_class * self.n_classes

    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


@dataclass
class SubjectDataset:
    subject: int
    eeg: np.ndarray
    eye: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        n = self.labels.shape[0]
        if self.eeg.shape[0] != n or self.eye.shape[0] != n:
            raise ContractError(f"subject {self.subject}: inconsistent row counts")


@dataclass
class LabeledSet:
    eeg: np.ndarray
    eye: np.ndarray
    labels: np.ndarray
    subjects: np.ndarray


@dataclass
class UnlabeledSet:
    """Target-domain features. Deliberately has no label field."""

    eeg: np.ndarray
    eye: np.ndarray
    subject: int

    def __setattr__(self, name, value):
        if name in ("labels", "y", "targets"):
            raise LeakageError("an UnlabeledSet cannot carry labels")
        super().__setattr__(name, value)


@dataclass
class _Skeleton:
    class_means: np.ndarray
    w_eeg: np.ndarray
    b_eeg: np.ndarray
    w_eye: np.ndarray
    b_eye: np.ndarray


def _skeleton(spec: SynthSpec, rng: np.random.Generator) -> _Skeleton:
    d = spec.d_latent
    return _Skeleton(
        class_means=rng.normal(scale=spec.class_sep, size=(spec.n_classes, d)),
        w_eeg=rng.normal(scale=1.0 / np.sqrt(d), size=(d, spec.eeg_dim)),
        b_eeg=rng.normal(size=spec.eeg_dim),
        w_eye=rng.normal(scale=1.0 / np.sqrt(d), size=(d, spec.eye_dim)),
        b_eye=rng.normal(size=spec.eye_dim),
    )


def subject_shift(spec: SynthSpec, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Random rotation exp(eta * s * A) (A skew-symmetric) and translation eta * t * N(0, I)."""
    d = spec.d_latent
    a = rng.normal(size=(d, d))
    skew = (a - a.T) / np.sqrt(2 * d)
    rotation = expm(spec.eta * spec.rotation_scale * skew)
    translation = spec.eta * spec.translation_scale * rng.normal(size=d)
    return rotation, translation


def generate_subjects(spec: SynthSpec, n_subjects: int | None = None, seed: int = 0) -> list[SubjectDataset]:
    n_subjects = spec.n_subjects if n_subjects is None else n_subjects
    if n_subjects < 1:
        raise ConfigError("need at least one subject")
    root = np.random.SeedSequence(seed)
    skel_seq, *subject_seqs = root.spawn(n_subjects + 1)
    skel = _skeleton(spec, np.random.default_rng(skel_seq))
    priors = spec.priors
    out = []
    for sid, seq in enumerate(subject_seqs):
        shift_rng, sample_rng = (np.random.default_rng(s) for s in seq.spawn(2))
        rotation, translation = subject_shift(spec, shift_rng)
        n = spec.rows_per_subject
        labels = sample_rng.choice(spec.n_classes, size=n, p=priors)
        z = skel.class_means[labels] + spec.within_std * sample_rng.normal(size=(n, spec.d_latent))
        z = z @ rotation.T + translation
        eeg = z @ skel.w_eeg + skel.b_eeg + spec.noise_eeg * sample_rng.normal(size=(n, spec.eeg_dim))
        eye = z @ skel.w_eye + skel.b_eye + spec.noise_eye * sample_rng.normal(size=(n, spec.eye_dim))
        out.append(SubjectDataset(subject=sid, eeg=eeg, eye=eye, labels=labels.astype(np.int64)))
    return out


def leave_one_subject_out(
    datasets: list[SubjectDataset], held_out: int, target_views: list[SubjectDataset] | None = None,
) -> tuple[LabeledSet, UnlabeledSet, np.ndarray]:
    """Split into labeled source (all other subjects, input order), unlabeled target and sequestered target labels.

    ``target_views``, when given, supplies the held-out subject's rows instead of ``datasets``.
    """
    ids = [d.subject for d in datasets]
    if len(set(ids)) != len(ids):
        raise ContractError(f"duplicate subject ids: {ids}")
    if held_out not in ids:
        raise ContractError(f"unknown subject id {held_out}; available: {ids}")
    src = [d for d in datasets if d.subject != held_out]
    pool = datasets if target_views is None else target_views
    tgt = next((d for d in pool if d.subject == held_out), None)
    if tgt is None:
        raise ContractError(f"no target view for subject {held_out}")
    if not src:
        raise ContractError("leave-one-subject-out needs at least two subjects")
    source = LabeledSet(
        eeg=np.concatenate([d.eeg for d in src]),
        eye=np.concatenate([d.eye for d in src]),
        labels=np.concatenate([d.labels for d in src]),
        subjects=np.concatenate([np.full(d.labels.shape[0], d.subject) for d in src]),
    )
    if np.any(source.subjects == held_out):
        raise LeakageError("held-out subject rows found in the source set")
    target = UnlabeledSet(eeg=tgt.eeg.copy(), eye=tgt.eye.copy(), subject=held_out)
    return source, target, tgt.labels.copy()


def spec_dict(spec: SynthSpec) -> dict:
    d = asdict(spec)
    for key in ("class_priors", "target_priors"):
        if d[key] is not None:
            d[key] = list(d[key])
    return d
