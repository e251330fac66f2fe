"""Multi-head scaled dot-product attention built on :mod:`hadua.autodiff`.

Two layouts are supported by :func:`multi_head_attention`:

* sequence mode (``n_tokens=None``): a 2-D input ``n x d`` is one sequence of
  ``n`` tokens, exactly the textbook formulation.
* token mode: each row of a ``B x d_model`` input is split into ``n_tokens``
  tokens of width ``d_model // n_tokens`` and attention runs independently
  per row, so batch elements never attend to each other.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ShapeError


@dataclass
class AttentionParams:
    """Per-head projections ``w_q[i], w_k[i], w_v[i]`` (``d x d_h``) and output ``w_o`` (``d x d``).

    Entries may be numpy arrays or autodiff Tensors (the latter when
    gradients are wanted).
    """

    w_q: list
    w_k: list
    w_v: list
    w_o: object

    @property
    def heads(self) -> int:
        return len(self.w_q)

    @property
    def d_model(self) -> int:
        return int(np.shape(_raw(self.w_o))[0])

    @property
    def d_head(self) -> int:
        return self.d_model // self.heads

    def validate(self) -> None:
        d, h = self.d_model, self.heads
        if h < 1 or d % h:
            raise ConfigError(f"d_model={d} is not divisible by heads={h}")
        if not (len(self.w_k) == len(self.w_v) == h):
            raise ConfigError("query/key/value head counts differ")
        for w in (*self.w_q, *self.w_k, *self.w_v):
            if np.shape(_raw(w)) != (d, d // h):
                raise ConfigError(f"head projection has shape {np.shape(_raw(w))}, expected {(d, d // h)}")
        if np.shape(_raw(self.w_o)) != (d, d):
            raise ConfigError(f"output projection must be {(d, d)}")

    def arrays(self, prefix: str) -> dict[str, np.ndarray]:
        out = {}
        for name, ws in (("q", self.w_q), ("k", self.w_k), ("v", self.w_v)):
            for i, w in enumerate(ws):
                out[f"{prefix}.w_{name}{i}"] = np.asarray(_raw(w))
        out[f"{prefix}.w_o"] = np.asarray(_raw(self.w_o))
        return out

    @classmethod
    def from_mapping(cls, mapping, prefix: str, heads: int) -> "AttentionParams":
        return cls(
            w_q=[mapping[f"{prefix}.w_q{i}"] for i in range(heads)],
            w_k=[mapping[f"{prefix}.w_k{i}"] for i in range(heads)],
            w_v=[mapping[f"{prefix}.w_v{i}"] for i in range(heads)],
            w_o=mapping[f"{prefix}.w_o"],
        )


def _raw(w):
    return w.data if isinstance(w, Tensor) else w


def init_attention(d_model: int, heads: int, rng: np.random.Generator) -> AttentionParams:
    """Uniform initialization in +-1/sqrt(d_model)."""
    if heads < 1 or d_model % heads:
        raise ConfigError(f"d_model={d_model} is not divisible by heads={heads}")
    d_h = d_model // heads
    bound = 1.0 / math.sqrt(d_model)

    def draw(shape):
        return rng.uniform(-bound, bound, size=shape)

    return AttentionParams(
        w_q=[draw((d_model, d_h)) for _ in range(heads)],
        w_k=[draw((d_model, d_h)) for _ in range(heads)],
        w_v=[draw((d_model, d_h)) for _ in range(heads)],
        w_o=draw((d_model, d_model)),
    )


def scaled_dot_attention(Q, K, V, return_weights: bool = False):
    """softmax(Q K^T / sqrt(d_h)) V over the last two axes.

    Accepts 2-D tensors or 3-D tensors with a shared leading batch axis.
    """
    Q, K, V = ad.as_tensor(Q), ad.as_tensor(K), ad.as_tensor(V)
    if Q.shape[-1] != K.shape[-1]:
        raise ShapeError(f"attention: query width {Q.shape[-1]} != key width {K.shape[-1]}")
    if K.shape[-2] != V.shape[-2]:
        raise ShapeError(f"attention: {K.shape[-2]} keys but {V.shape[-2]} values")
    scores = ad.matmul(Q, ad.transpose(K)) * (1.0 / math.sqrt(Q.shape[-1]))
    weights = ad.softmax(scores)
    out = ad.matmul(weights, V)
    return (out, weights) if return_weights else out


def multi_head_attention(query_src, kv_src, params: AttentionParams, n_tokens: int | None = None) -> Tensor:
    """Concat(head_1..head_H) W^O with head_i = Attention(X_q W^Q_i, X_kv W^K_i, X_kv W^V_i)."""
    params.validate()
    q_in, kv_in = ad.as_tensor(query_src), ad.as_tensor(kv_src)
    if q_in.ndim != 2 or kv_in.ndim != 2:
        raise ShapeError("multi_head_attention expects 2-D inputs")

    if n_tokens is None:
        d = q_in.shape[1]
        if kv_in.shape[1] != d or d != params.d_model:
            raise ShapeError(f"input widths {q_in.shape[1]}/{kv_in.shape[1]} != d_model {params.d_model}")
        q_flat, kv_flat = q_in, kv_in
        seq = None
    else:
        B, width = q_in.shape
        if kv_in.shape != q_in.shape:
            raise ShapeError(f"query and key/value sources differ in shape: {q_in.shape} vs {kv_in.shape}")
        if width % n_tokens or width // n_tokens != params.d_model:
            raise ShapeError(f"width {width} does not split into {n_tokens} tokens of {params.d_model}")
        q_flat = ad.reshape(q_in, (B * n_tokens, params.d_model))
        kv_flat = q_flat if kv_src is query_src else ad.reshape(kv_in, (B * n_tokens, params.d_model))
        seq = (B, n_tokens)

    heads = []
    d_h = params.d_head
    for w_q, w_k, w_v in zip(params.w_q, params.w_k, params.w_v):
        q = ad.matmul(q_flat, ad.as_tensor(w_q))
        k = ad.matmul(kv_flat, ad.as_tensor(w_k))
        v = ad.matmul(kv_flat, ad.as_tensor(w_v))
        if seq is not None:
            q = ad.reshape(q, (*seq, d_h))
            k = ad.reshape(k, (*seq, d_h))
            v = ad.reshape(v, (*seq, d_h))
        heads.append(scaled_dot_attention(q, k, v))
    merged = heads[0] if len(heads) == 1 else ad.concat(heads)
    if seq is not None:
        merged = ad.reshape(merged, (seq[0] * seq[1], params.d_model))
    out = ad.matmul(merged, ad.as_tensor(params.w_o))
    if seq is not None:
        out = ad.reshape(out, (seq[0], seq[1] * params.d_model))
    return out
