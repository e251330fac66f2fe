"""Joint optimization: source cross-entropy + MMD + pseudo-label-weighted CMMD.

One :func:`train_step` runs the model on a paired source/target batch,
refines target pseudo-labels, differentiates the total loss, applies an
AdamW update and advances the confidence statistics.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .alignment import KernelConfig, WeightedSoftAssignment, cmmd2, mmd2, resolve_sigma
from .errors import ContractError, DegenerateError, NumericError
from .evaluation import MetricsReport, compute_metrics
from .model import ModelConfig, ModelParams, cross_entropy, init_params, model_forward, predict_proba
from .pseudo import ConfidenceStats, UAConfig, alpha_schedule, refine_pseudo_labels, update_confidence_stats
from .synthdata import LabeledSet, UnlabeledSet

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Ablation:
    attention: bool = True
    mmd: bool = True
    cmmd: bool = True
    gaussian_weight: bool = True
    ua: bool = True


ABLATIONS = {
    "full": Ablation(),
    "no-ua": Ablation(ua=False),
    "no-gaussian": Ablation(gaussian_weight=False),
    "no-cmmd": Ablation(cmmd=False),
    "no-mmd": Ablation(mmd=False),
    "no-attention": Ablation(attention=False),
    "source-only": Ablation(mmd=False, cmmd=False, gaussian_weight=False, ua=False),
    "ffn": Ablation(attention=False, mmd=False, cmmd=False, gaussian_weight=False, ua=False),
}

# Components added one at a time, from a plain feedforward network to the full method.
LADDER = (
    ("ffn", Ablation(attention=False, mmd=False, cmmd=False, gaussian_weight=False, ua=False)),
    ("+attention", Ablation(attention=True, mmd=False, cmmd=False, gaussian_weight=False, ua=False)),
    ("+mmd", Ablation(attention=True, mmd=True, cmmd=False, gaussian_weight=False, ua=False)),
    ("+gaussian", Ablation(attention=True, mmd=True, cmmd=True, gaussian_weight=True, ua=False)),
    ("+ua", Ablation()),
)


@dataclass(frozen=True)
class AdamConfig:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass(frozen=True)
class ArchConfig:
    d_model: int = 64
    n_tokens: int = 8
    heads: int = 2
    encoder_hidden: int = 64
    classifier_hidden: int = 64
    fusion: str = "eeg_cross"


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    weight_decay: float = 5e-5
    batch_size: int = 64
    max_epochs: int = 100
    early_stop_patience: int = 15
    gamma_mmd: float = 0.5
    gamma_cmmd: float = 0.5
    adam: AdamConfig = AdamConfig()
    seed: int = 0
    ablation: Ablation = Ablation()
    ua: UAConfig = UAConfig()
    kernel: KernelConfig = KernelConfig()
    momentum: float = 0.9
    lambda_max: float = 1.0
    hard_threshold: float | None = None
    cmmd_labels: str = "interpolated"
    val_fraction: float = 0.1
    arch: ArchConfig = ArchConfig()

    def __post_init__(self):
        if not (self.lr >= 0 and self.weight_decay >= 0):
            raise ContractError("learning rate and weight decay must be nonnegative")
        if self.gamma_mmd < 0 or self.gamma_cmmd < 0:
            raise ContractError("loss weights must be nonnegative")
        if self.batch_size < 2 or self.max_epochs < 1 or self.early_stop_patience < 0:
            raise ContractError("batch_size >= 2, max_epochs >= 1 and patience >= 0 are required")
        if not 0.0 < self.val_fraction < 1.0:
            raise ContractError("val_fraction must lie in (0, 1)")
        if self.cmmd_labels not in ("interpolated", "aligned"):
            raise ContractError("cmmd_labels must be 'interpolated' or 'aligned'")

    @property
    def weighting(self) -> str:
        if self.ablation.gaussian_weight:
            return "gaussian"
        return "hard" if self.hard_threshold is not None else "none"

    def model_config(self, eeg_dim: int, eye_dim: int, n_classes: int) -> ModelConfig:
        a = self.arch
        return ModelConfig(
            eeg_dim=eeg_dim, eye_dim=eye_dim, n_classes=n_classes, d_model=a.d_model, n_tokens=a.n_tokens,
            heads=a.heads, encoder_hidden=a.encoder_hidden, classifier_hidden=a.classifier_hidden,
            fusion=a.fusion, attention=self.ablation.attention,
        )


@dataclass
class TrainState:
    config: TrainConfig
    params: ModelParams
    adam_m: dict[str, np.ndarray]
    adam_v: dict[str, np.ndarray]
    stats: ConfidenceStats
    step: int = 0
    epoch: int = 0
    history: list[dict] = field(default_factory=list)

    @classmethod
    def create(cls, config: TrainConfig, model_config: ModelConfig) -> "TrainState":
        params = init_params(model_config, config.seed)
        zeros = {k: np.zeros_like(v) for k, v in params.weights.items()}
        return cls(
            config=config, params=params, adam_m=zeros, adam_v={k: v.copy() for k, v in zeros.items()},
            stats=ConfidenceStats.initial(model_config.n_classes, config.momentum),
        )


@dataclass
class StepRecord:
    loss: float
    cls: float
    mmd: float
    cmmd: float
    mean_weight: float


def total_loss(
    src_features, src_logits, src_labels, tgt_features, assignment: WeightedSoftAssignment | None,
    cfg: TrainConfig, n_classes: int, sigma: float | None = None,
) -> tuple[ad.Tensor, dict[str, float]]:
    """L = L_cls + gamma_mmd * L_MMD + gamma_cmmd * L_CMMD, with the parts reported separately.

    Disabled terms (ablation off or zero weight) are not computed and report 0.
    """
    l_cls = cross_entropy(src_logits, src_labels)
    total = l_cls
    parts = {"cls": l_cls.item(), "mmd": 0.0, "cmmd": 0.0}
    if sigma is None and (cfg.ablation.mmd or cfg.ablation.cmmd):
        sigma = resolve_sigma(cfg.kernel, src_features, tgt_features)
    if cfg.ablation.mmd and cfg.gamma_mmd > 0:
        l_mmd = mmd2(src_features, tgt_features, cfg.kernel, sigma=sigma)
        parts["mmd"] = l_mmd.item()
        total = total + l_mmd * cfg.gamma_mmd
    if cfg.ablation.cmmd and cfg.gamma_cmmd > 0 and assignment is not None:
        try:
            l_cmmd = cmmd2(src_features, src_labels, tgt_features, assignment, cfg.kernel, n_classes,
                           sigma=sigma, require_all_classes=False)
        except DegenerateError:
            l_cmmd = None
        if l_cmmd is not None:
            parts["cmmd"] = l_cmmd.item()
            total = total + l_cmmd * cfg.gamma_cmmd
    for name, value in parts.items():
        if not math.isfinite(value):
            raise NumericError(f"loss component {name} is not finite")
    parts["total"] = total.item()
    return total, parts


def adam_update(state: TrainState, grads: dict[str, np.ndarray]) -> TrainState:
    """AdamW: bias-corrected Adam step plus decoupled weight decay on the weights."""
    cfg = state.config
    b1, b2, eps = cfg.adam.beta1, cfg.adam.beta2, cfg.adam.eps
    t = state.step + 1
    c1, c2 = 1.0 - b1 ** t, 1.0 - b2 ** t
    new_w, new_m, new_v = {}, {}, {}
    for k, w in state.params.weights.items():
        g = grads[k]
        m = b1 * state.adam_m[k] + (1.0 - b1) * g
        v = b2 * state.adam_v[k] + (1.0 - b2) * g * g
        new_w[k] = w - cfg.lr * ((m / c1) / (np.sqrt(v / c2) + eps) + cfg.weight_decay * w)
        new_m[k], new_v[k] = m, v
    return replace(state, params=ModelParams(state.params.config, new_w), adam_m=new_m, adam_v=new_v, step=t)


def current_alpha(state: TrainState) -> float:
    return alpha_schedule(state.epoch, state.config.ua)


def refine_for_step(state: TrainState, target_probs: np.ndarray):
    cfg = state.config
    return refine_pseudo_labels(
        target_probs, state.stats, current_alpha(state), cfg.ua if cfg.ablation.ua else None,
        weighting=cfg.weighting, lambda_max=cfg.lambda_max,
        hard_threshold=cfg.hard_threshold if cfg.hard_threshold is not None else 0.95,
        cmmd_labels=cfg.cmmd_labels,
    )


def train_step(state: TrainState, source_batch, target_batch) -> tuple[TrainState, StepRecord]:
    """One optimization step on ``(eeg, eye, labels)`` source and ``(eeg, eye)`` target batches."""
    s_eeg, s_eye, s_y = source_batch
    t_eeg, t_eye = target_batch[:2]
    ns, nt = len(s_y), len(t_eeg)
    if ns < 1 or nt < 2:
        raise ContractError("train_step needs a non-empty source batch and at least 2 target rows")
    cfg = state.config
    leaves = {k: ad.Tensor(v, requires_grad=True) for k, v in state.params.weights.items()}
    out = model_forward(np.concatenate([s_eeg, t_eeg]), np.concatenate([s_eye, t_eye]), state.params, leaves)
    z_s, z_t = out.features[:ns], out.features[ns:]
    probs_t = out.probs.data[ns:]

    refined = refine_for_step(state, probs_t)
    assignment = WeightedSoftAssignment(refined.soft_labels, refined.weights, cfg.lambda_max)
    loss, parts = total_loss(z_s, out.logits[:ns], s_y, z_t, assignment, cfg, state.params.config.n_classes)

    names = list(leaves)
    grads = dict(zip(names, ad.grad(loss, [leaves[k] for k in names])))
    new_state = adam_update(state, grads)
    new_state.stats = update_confidence_stats(state.stats, probs_t)
    record = StepRecord(parts["total"], parts["cls"], parts["mmd"], parts["cmmd"], float(refined.weights.mean()))
    return new_state, record


def stratified_split(labels, fraction: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Indices ``(train, val)`` with ``fraction`` of every class held out for validation."""
    labels = np.asarray(labels)
    train, val = [], []
    for c in np.unique(labels):
        idx = rng.permutation(np.nonzero(labels == c)[0])
        k = max(1, int(round(fraction * idx.size))) if idx.size > 1 else 0
        val.append(idx[:k])
        train.append(idx[k:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(val))


def epoch_batches(n_source: int, n_target: int, batch_size: int, rng_s: np.random.Generator,
                  rng_t: np.random.Generator) -> list[tuple[np.ndarray, np.ndarray]]:
    """Independent shuffles of both domains; the shorter stream is recycled."""
    n_steps = max(math.ceil(n_source / batch_size), math.ceil(n_target / batch_size), 1)
    bs_s, bs_t = min(batch_size, n_source), min(batch_size, n_target)
    s_stream = np.concatenate([rng_s.permutation(n_source) for _ in range(math.ceil(n_steps * bs_s / n_source))])
    t_stream = np.concatenate([rng_t.permutation(n_target) for _ in range(math.ceil(n_steps * bs_t / n_target))])
    return [(s_stream[i * bs_s:(i + 1) * bs_s], t_stream[i * bs_t:(i + 1) * bs_t]) for i in range(n_steps)]


def accuracy(params: ModelParams, eeg, eye, labels) -> float:
    if len(labels) == 0:
        return float("nan")
    pred = np.argmax(predict_proba(params, eeg, eye), axis=1)
    return float(np.mean(pred == np.asarray(labels)))


def domain_mmd(params: ModelParams, source: LabeledSet, target: UnlabeledSet, cfg: KernelConfig,
               n: int = 256, seed: int = 0) -> float:
    """MMD^2 between fused source and target features on fixed seeded subsamples."""
    rng = np.random.default_rng(seed)
    si = rng.choice(len(source.labels), size=min(n, len(source.labels)), replace=False)
    ti = rng.choice(len(target.eeg), size=min(n, len(target.eeg)), replace=False)
    zs = model_forward(source.eeg[si], source.eye[si], params).features
    zt = model_forward(target.eeg[ti], target.eye[ti], params).features
    return mmd2(zs, zt, cfg).item()


EPOCH_LOG_COLUMNS = ("epoch", "L", "L_cls", "L_MMD", "L_CMMD", "mu_t", "sigma2_t", "alpha_t",
                     "mean_weight", "val_acc", "target_acc")


@dataclass
class FitResult:
    state: TrainState
    report: MetricsReport | None
    best_epoch: int
    no_improvement: bool
    target_probs: np.ndarray


def fit(cfg: TrainConfig, source: LabeledSet, target: UnlabeledSet,
        target_eval_labels=None, n_classes: int | None = None) -> FitResult:
    """Train with early stopping on a stratified source validation split.

    Target labels, when given, are used only to log and report target accuracy.
    """
    if isinstance(target, LabeledSet):
        from .errors import LeakageError

        raise LeakageError("target passed with labels; use an UnlabeledSet")
    C = n_classes if n_classes is not None else int(np.max(source.labels)) + 1
    missing = set(range(C)) - set(np.unique(source.labels).tolist())
    if missing:
        raise ContractError(f"source lacks classes {sorted(missing)}")
    root = np.random.SeedSequence(cfg.seed)
    split_seq, shuffle_s_seq, shuffle_t_seq = root.spawn(3)
    tr, va = stratified_split(source.labels, cfg.val_fraction, np.random.default_rng(split_seq))
    rng_s, rng_t = np.random.default_rng(shuffle_s_seq), np.random.default_rng(shuffle_t_seq)

    model_cfg = cfg.model_config(source.eeg.shape[1], source.eye.shape[1], C)
    state = TrainState.create(cfg, model_cfg)
    x_eeg, x_eye, y = source.eeg[tr], source.eye[tr], source.labels[tr]
    v_eeg, v_eye, v_y = source.eeg[va], source.eye[va], source.labels[va]

    best_val = accuracy(state.params, v_eeg, v_eye, v_y)
    best_params, best_epoch = state.params, 0
    since_improvement = 0
    for epoch in range(1, cfg.max_epochs + 1):
        state.epoch = epoch
        records = []
        for si, ti in epoch_batches(len(y), len(target.eeg), cfg.batch_size, rng_s, rng_t):
            state, rec = train_step(state, (x_eeg[si], x_eye[si], y[si]), (target.eeg[ti], target.eye[ti]))
            records.append(rec)
        val_acc = accuracy(state.params, v_eeg, v_eye, v_y)
        tgt_acc = (accuracy(state.params, target.eeg, target.eye, target_eval_labels)
                   if target_eval_labels is not None else float("nan"))
        state.history.append({
            "epoch": epoch,
            "L": float(np.mean([r.loss for r in records])),
            "L_cls": float(np.mean([r.cls for r in records])),
            "L_MMD": float(np.mean([r.mmd for r in records])),
            "L_CMMD": float(np.mean([r.cmmd for r in records])),
            "mu_t": state.stats.mu,
            "sigma2_t": state.stats.sigma2,
            "alpha_t": current_alpha(state),
            "mean_weight": float(np.mean([r.mean_weight for r in records])),
            "val_acc": val_acc,
            "target_acc": tgt_acc,
        })
        log.debug("epoch %d: %s", epoch, state.history[-1])
        if val_acc > best_val:
            since_improvement = 0
        else:
            since_improvement += 1
        # ties move the checkpoint forward so later adaptation is kept
        if val_acc >= best_val:
            best_val, best_params, best_epoch = val_acc, state.params, epoch
        if since_improvement >= cfg.early_stop_patience:
            break

    no_improvement = best_epoch == 0
    if no_improvement:
        log.warning("validation accuracy never improved; returning the initial checkpoint")
    final = replace(state, params=best_params)
    target_probs = predict_proba(best_params, target.eeg, target.eye)
    report = compute_metrics(target_probs, target_eval_labels, C) if target_eval_labels is not None else None
    return FitResult(final, report, best_epoch, no_improvement, target_probs)
