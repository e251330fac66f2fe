"""Modality encoders, hierarchical attention fusion and the shared classifier."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .attention import AttentionParams, multi_head_attention
from .autodiff import Tensor
from .errors import ConfigError, ContractError, ShapeError

FUSIONS = ("eeg_cross", "eeg_eye_cross")


@dataclass(frozen=True)
class ModelConfig:
    eeg_dim: int
    eye_dim: int
    n_classes: int
    d_model: int = 64
    n_tokens: int = 8
    heads: int = 2
    encoder_hidden: int = 64
    classifier_hidden: int = 64
    fusion: str = "eeg_cross"
    attention: bool = True

    def __post_init__(self):
        for name in ("eeg_dim", "eye_dim", "d_model", "n_tokens", "heads", "encoder_hidden", "classifier_hidden"):
            if getattr(self, name) < 1:
                raise ConfigError(f"model.{name} must be positive")
        if self.n_classes < 2:
            raise ConfigError("model needs at least 2 classes")
        if self.d_model % self.n_tokens:
            raise ConfigError(f"d_model={self.d_model} not divisible by n_tokens={self.n_tokens}")
        if self.token_width % self.heads:
            raise ConfigError(f"token width {self.token_width} not divisible by heads={self.heads}")
        if self.fusion not in FUSIONS:
            raise ConfigError(f"unknown fusion {self.fusion!r}; choose from {FUSIONS}")

    @property
    def token_width(self) -> int:
        return self.d_model // self.n_tokens

    @property
    def fused_dim(self) -> int:
        if not self.attention:
            return 2 * self.d_model
        return (3 if self.fusion == "eeg_eye_cross" else 2) * self.d_model


@dataclass
class ModelParams:
    config: ModelConfig
    weights: dict[str, np.ndarray] = field(default_factory=dict)

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: v.copy() for k, v in self.weights.items()})

    def n_parameters(self) -> int:
        return int(sum(v.size for v in self.weights.values()))


@dataclass
class FusedBatch:
    features: Tensor
    logits: Tensor
    probs: Tensor


def _layer_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    shapes = {
        "eeg.w1": (cfg.eeg_dim, cfg.encoder_hidden), "eeg.b1": (1, cfg.encoder_hidden),
        "eeg.w2": (cfg.encoder_hidden, cfg.d_model), "eeg.b2": (1, cfg.d_model),
        "eye.w1": (cfg.eye_dim, cfg.encoder_hidden), "eye.b1": (1, cfg.encoder_hidden),
        "eye.w2": (cfg.encoder_hidden, cfg.d_model), "eye.b2": (1, cfg.d_model),
        "cls.w1": (cfg.fused_dim, cfg.classifier_hidden), "cls.b1": (1, cfg.classifier_hidden),
        "cls.w2": (cfg.classifier_hidden, cfg.n_classes), "cls.b2": (1, cfg.n_classes),
    }
    if cfg.attention:
        d, h = cfg.token_width, cfg.heads
        for block in ("attn_eeg", "attn_eye", "attn_cross"):
            for kind in ("q", "k", "v"):
                for i in range(h):
                    shapes[f"{block}.w_{kind}{i}"] = (d, d // h)
            shapes[f"{block}.w_o"] = (d, d)
    return shapes


def _fan_in(name: str, shape: tuple[int, ...], cfg: ModelConfig) -> int:
    if name.endswith(tuple(f".b{i}" for i in (1, 2))):
        # a bias shares the fan-in of its weight matrix
        return {"eeg.b1": cfg.eeg_dim, "eeg.b2": cfg.encoder_hidden, "eye.b1": cfg.eye_dim,
                "eye.b2": cfg.encoder_hidden, "cls.b1": cfg.fused_dim, "cls.b2": cfg.classifier_hidden}[name]
    return shape[0]


def init_params(config: ModelConfig, seed: int) -> ModelParams:
    """Seeded uniform(+-1/sqrt(fan_in)) initialization in a fixed parameter order."""
    rng = np.random.default_rng(seed)
    weights = {}
    for name, shape in _layer_shapes(config).items():
        bound = 1.0 / math.sqrt(_fan_in(name, shape, config))
        weights[name] = rng.uniform(-bound, bound, size=shape)
    return ModelParams(config, weights)


def _affine(x: Tensor, w, b) -> Tensor:
    # explicit bias expansion: ones(B,1) @ b(1,d)
    return ad.matmul(x, w) + ad.matmul(ad.ones((x.shape[0], 1)), b)


def _encode(x: Tensor, p, prefix: str) -> Tensor:
    h = ad.relu(_affine(x, p[f"{prefix}.w1"], p[f"{prefix}.b1"]))
    return _affine(h, p[f"{prefix}.w2"], p[f"{prefix}.b2"])


def _attn(p, block: str, cfg: ModelConfig) -> AttentionParams:
    return AttentionParams.from_mapping(p, block, cfg.heads)


def model_forward(eeg, eye, params: ModelParams, leaves: dict[str, Tensor] | None = None) -> FusedBatch:
    """Forward pass. ``leaves`` substitutes differentiable Tensors for named weights."""
    cfg = params.config
    eeg, eye = ad.as_tensor(eeg), ad.as_tensor(eye)
    if eeg.ndim != 2 or eye.ndim != 2:
        raise ShapeError("eeg and eye inputs must be 2-D")
    if eeg.shape[0] != eye.shape[0]:
        raise ContractError(f"row count mismatch: eeg {eeg.shape[0]} vs eye {eye.shape[0]}")
    if eeg.shape[1] != cfg.eeg_dim or eye.shape[1] != cfg.eye_dim:
        raise ShapeError(f"input widths {eeg.shape[1]}/{eye.shape[1]} != {cfg.eeg_dim}/{cfg.eye_dim}")
    p = {k: (leaves[k] if leaves and k in leaves else ad.Tensor(v)) for k, v in params.weights.items()}

    f_eeg = _encode(eeg, p, "eeg")
    f_eye = _encode(eye, p, "eye")
    if cfg.attention:
        n = cfg.n_tokens
        h_eeg = f_eeg + multi_head_attention(f_eeg, f_eeg, _attn(p, "attn_eeg", cfg), n_tokens=n)
        h_eye = f_eye + multi_head_attention(f_eye, f_eye, _attn(p, "attn_eye", cfg), n_tokens=n)
        # unidirectional guidance: EEG queries, eye keys/values
        h_cross = h_eeg + multi_head_attention(h_eeg, h_eye, _attn(p, "attn_cross", cfg), n_tokens=n)
        parts = [h_eeg, h_cross] if cfg.fusion == "eeg_cross" else [h_eeg, h_eye, h_cross]
    else:
        parts = [f_eeg, f_eye]
    fused = ad.concat(parts)
    hidden = ad.relu(_affine(fused, p["cls.w1"], p["cls.b1"]))
    logits = _affine(hidden, p["cls.w2"], p["cls.b2"])
    return FusedBatch(features=fused, logits=logits, probs=ad.softmax(logits))


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean cross-entropy of integer ``labels`` under softmax(``logits``)."""
    labels = np.asarray(labels)
    onehot = np.zeros(logits.shape)
    onehot[np.arange(labels.shape[0]), labels] = 1.0
    picked = ad.sum_(logits * ad.Tensor(onehot), axis=1)
    return ad.mean(ad.logsumexp(logits) - picked)


def predict_proba(params: ModelParams, eeg, eye, batch_size: int = 1024) -> np.ndarray:
    eeg, eye = np.asarray(eeg, dtype=np.float64), np.asarray(eye, dtype=np.float64)
    out = [model_forward(eeg[i:i + batch_size], eye[i:i + batch_size], params).probs.data
           for i in range(0, eeg.shape[0], batch_size)]
    return np.concatenate(out) if out else np.zeros((0, params.config.n_classes))


def config_dict(cfg: ModelConfig) -> dict:
    return asdict(cfg)
