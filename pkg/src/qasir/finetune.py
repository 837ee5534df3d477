"""Trainable head over frozen embeddings.

Vision/text residual adapters, a single post-norm self-attention encoder
layer with sinusoidal positional encoding on the vision side, symmetric
contrastive loss over in-batch negatives, and a deterministic training
loop with decoupled-weight-decay adaptive-moment updates. All gradients
are analytic and checked against central finite differences in the tests.

Two implementations of the forward pass coexist on purpose: clean
single-instance functions (`adapter_forward`, `temporal_forward`,
`full_forward`) and a batched engine used by training; the tests assert
they agree.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, InvalidInputError
from .kernels import PackedCorpus, corpus_scores
from .scoring import Scorer, attend
from .store import EmbeddingStore

__all__ = [
    "LN_EPS",
    "AdapterParams",
    "TemporalParams",
    "ModelParams",
    "LossConfig",
    "TrainConfig",
    "positional_encoding",
    "pe_matrix",
    "adapter_forward",
    "temporal_forward",
    "full_forward",
    "symmetric_loss",
    "batch_loss",
    "batch_forward_backward",
    "init_params",
    "train",
    "FinetunedScorer",
    "save_checkpoint",
    "load_checkpoint",
    "write_history",
]

LN_EPS = 1e-5
_NEG_BIG = 1e30


# --- parameter containers ---


@dataclass
class AdapterParams:
    """ReLU MLP blended with the input: beta*MLP(z) + (1-beta)*z.

    Two linear layers by default; extra hidden-to-hidden layers slot in
    between for deeper variants. Biases live inside the MLP term, so beta
    scales them too.
    """

    W1: np.ndarray  # (hidden, d)
    b1: np.ndarray  # (hidden,)
    W2: np.ndarray  # (d, hidden)
    b2: np.ndarray  # (d,)
    beta: float = 0.2
    mid: tuple[tuple[np.ndarray, np.ndarray], ...] = ()  # (hidden, hidden) pairs

    def named(self, prefix: str):
        yield f"{prefix}/W1", self.W1
        yield f"{prefix}/b1", self.b1
        for i, (w, b) in enumerate(self.mid, start=1):
            yield f"{prefix}/Wm{i}", w
            yield f"{prefix}/bm{i}", b
        yield f"{prefix}/W2", self.W2
        yield f"{prefix}/b2", self.b2


@dataclass
class TemporalParams:
    """One post-norm encoder layer: multi-head self-attention and a ReLU
    feed-forward block, each with residual + layer norm. Projection and
    feed-forward blocks are bias-free; the layer norms carry gain/bias."""

    Wq: np.ndarray  # (d, d)
    Wk: np.ndarray  # (d, d)
    Wv: np.ndarray  # (d, d)
    Wo: np.ndarray  # (d, d)
    W1f: np.ndarray  # (d, ff)
    W2f: np.ndarray  # (ff, d)
    ln1_g: np.ndarray
    ln1_b: np.ndarray
    ln2_g: np.ndarray
    ln2_b: np.ndarray
    heads: int = 8

    def __post_init__(self):
        d = self.Wq.shape[0]
        if d % self.heads != 0:
            raise InvalidInputError(f"heads {self.heads} must divide dim {d}")

    def named(self, prefix: str = "temporal"):
        for name in ("Wq", "Wk", "Wv", "Wo", "W1f", "W2f", "ln1_g", "ln1_b", "ln2_g", "ln2_b"):
            yield f"{prefix}/{name}", getattr(self, name)


@dataclass
class ModelParams:
    vision: AdapterParams
    text: AdapterParams
    temporal: TemporalParams | None = None

    def named(self):
        yield from self.vision.named("vision")
        yield from self.text.named("text")
        if self.temporal is not None:
            yield from self.temporal.named("temporal")

    def as_dict(self) -> dict[str, np.ndarray]:
        return dict(self.named())


@dataclass(frozen=True)
class LossConfig:
    """infonce replaces raw cosines with exp(cos/tau) inside the printed
    log-ratio; literal keeps the raw cosines, clamped to >= eps so the
    logarithms stay defined. The returned value is the quantity the
    optimizer minimizes (the negated log-ratio total)."""

    mode: str = "infonce"
    temperature: float = 0.07
    negatives: str = "in_batch"
    clamp_eps: float = 1e-6

    def __post_init__(self):
        if self.mode not in ("literal", "infonce"):
            raise InvalidInputError(f"unknown loss mode {self.mode!r}")
        if self.temperature <= 0:
            raise InvalidInputError("temperature must be positive")
        if self.negatives != "in_batch":
            raise InvalidInputError("only in-batch negatives are supported")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 64
    epochs: int = 1
    seed: int = 0
    hidden: int = 192
    adapter_depth: int = 2
    beta_v: float = 0.2
    beta_t: float = 0.2
    heads: int = 8
    ff_mult: int = 4
    temporal: bool = True
    loss: LossConfig = field(default_factory=LossConfig)
    weight_decay: float = 0.01
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.learning_rate < 0 or self.batch_size < 1 or self.epochs < 0:
            raise InvalidInputError("learning_rate, batch_size, epochs must be nonnegative")


# --- building blocks ---


def positional_encoding(index: int, dim: int) -> np.ndarray:
    """Sinusoidal position code: entry 2i = sin(k / 10000^(2i/d)),
    entry 2i+1 = cos(k / 10000^(2i/d))."""
    if index < 0:
        raise InvalidInputError("index must be >= 0")
    if dim < 2 or dim % 2 != 0:
        raise InvalidInputError("dim must be a positive even number")
    half = np.arange(dim // 2, dtype=np.float64)
    angle = index / np.power(10000.0, 2.0 * half / dim)
    out = np.empty(dim, dtype=np.float64)
    out[0::2] = np.sin(angle)
    out[1::2] = np.cos(angle)
    return out


def pe_matrix(count: int, dim: int) -> np.ndarray:
    return np.stack([positional_encoding(k, dim) for k in range(count)])


def adapter_forward(params: AdapterParams, z: np.ndarray) -> np.ndarray:
    """Works on a single vector or any (..., d) stack."""
    z = np.asarray(z, dtype=np.float64)
    hidden = np.maximum(z @ params.W1.T + params.b1, 0.0)
    for w, b in params.mid:
        hidden = np.maximum(hidden @ w.T + b, 0.0)
    mlp = hidden @ params.W2.T + params.b2
    return params.beta * mlp + (1.0 - params.beta) * z


def _layer_norm(x: np.ndarray, gain: np.ndarray, bias: np.ndarray) -> np.ndarray:
    mean = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return gain * (x - mean) / np.sqrt(var + LN_EPS) + bias


def _softmax_last(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-1, keepdims=True)
    expd = np.exp(shifted)
    return expd / expd.sum(axis=-1, keepdims=True)


def temporal_forward(params: TemporalParams, sequence: np.ndarray) -> np.ndarray:
    """Reference single-sequence path: add PE, run the encoder layer.

    Deterministic; no dropout anywhere.
    """
    sequence = np.asarray(sequence, dtype=np.float64)
    if sequence.ndim != 2 or sequence.shape[0] < 1:
        raise InvalidInputError("sequence must be K x d with K >= 1")
    k, d = sequence.shape
    x = sequence + pe_matrix(k, d)
    dh = d // params.heads
    q_all = x @ params.Wq
    k_all = x @ params.Wk
    v_all = x @ params.Wv
    mixed = np.empty_like(x)
    for h in range(params.heads):
        cols = slice(h * dh, (h + 1) * dh)
        scores = q_all[:, cols] @ k_all[:, cols].T / np.sqrt(dh)
        mixed[:, cols] = _softmax_last(scores) @ v_all[:, cols]
    x1 = x + mixed @ params.Wo
    z1 = _layer_norm(x1, params.ln1_g, params.ln1_b)
    ff = np.maximum(z1 @ params.W1f, 0.0) @ params.W2f
    return _layer_norm(z1 + ff, params.ln2_g, params.ln2_b)


def full_forward(
    params: ModelParams, matrix: np.ndarray, query: np.ndarray, temperature: float = 1.0
) -> tuple[float, np.ndarray, np.ndarray]:
    """Adapted rows -> temporal encoder -> query-attentive aggregation with
    the adapted query -> cosine against the adapted query.

    Returns (score, attended vector, adapted query).
    """
    rows = adapter_forward(params.vision, matrix)
    if params.temporal is not None:
        rows = temporal_forward(params.temporal, rows)
    adapted_query = adapter_forward(params.text, np.asarray(query, dtype=np.float64))
    result = attend(rows, adapted_query, temperature)
    return result.score, result.aggregated, adapted_query


# --- symmetric contrastive loss over a B x B score matrix ---
# Convention: scores[i, j] pairs video i with query j; the diagonal holds
# the positive pairs. Transposing the matrix swaps the two loss directions.


def _loss_and_grad(scores: np.ndarray, config: LossConfig) -> tuple[float, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] != s.shape[1] or s.shape[0] < 1:
        raise InvalidInputError("scores must be a square B x B matrix")
    b = s.shape[0]
    eye = np.eye(b)
    if config.mode == "infonce":
        t = s / config.temperature
        # columns: one query against all videos; rows: one video against all queries
        p_col = _softmax_last(t.T).T
        p_row = _softmax_last(t)
        lse_col = t.max(axis=0) + np.log(np.exp(t - t.max(axis=0)).sum(axis=0))
        lse_row = t.max(axis=1) + np.log(np.exp(t - t.max(axis=1)[:, None]).sum(axis=1))
        log_ratio = (np.diag(t) - lse_col).mean() + (np.diag(t) - lse_row).mean()
        grad = ((p_col - eye) + (p_row - eye)) / (b * config.temperature)
        return -log_ratio, grad
    clamped = np.maximum(s, config.clamp_eps)
    gate = (s > config.clamp_eps).astype(np.float64)
    col_sum = clamped.sum(axis=0)
    row_sum = clamped.sum(axis=1)
    log_ratio = (np.log(np.diag(clamped)) - np.log(col_sum)).mean()
    log_ratio += (np.log(np.diag(clamped)) - np.log(row_sum)).mean()
    grad_clamped = -(eye / np.diag(clamped)[None, :] - 1.0 / col_sum[None, :]) / b
    grad_clamped += -(eye / np.diag(clamped)[:, None] - 1.0 / row_sum[:, None]) / b
    return -log_ratio, grad_clamped * gate


def symmetric_loss(scores: np.ndarray, config: LossConfig | None = None) -> float:
    """Minimization objective: the negated symmetric log-ratio total."""
    loss, _ = _loss_and_grad(scores, config or LossConfig())
    return loss


# --- batched engine (training path) ---


def _stack_batch(matrices: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    b = len(matrices)
    kmax = max(m.shape[0] for m in matrices)
    d = matrices[0].shape[1]
    stack = np.zeros((b, kmax, d))
    mask = np.zeros((b, kmax))
    for i, m in enumerate(matrices):
        stack[i, : m.shape[0]] = m
        mask[i, : m.shape[0]] = 1.0
    return stack, mask


def _adapter_batch_forward(p: AdapterParams, z: np.ndarray) -> dict:
    pre = z @ p.W1.T + p.b1
    hidden = np.maximum(pre, 0.0)
    mids = []
    for w, b in p.mid:
        mid_pre = hidden @ w.T + b
        mids.append({"input": hidden, "pre": mid_pre})
        hidden = np.maximum(mid_pre, 0.0)
    mlp = hidden @ p.W2.T + p.b2
    out = p.beta * mlp + (1.0 - p.beta) * z
    return {"z": z, "pre": pre, "mids": mids, "hidden": hidden, "out": out}


def _flatten2(x: np.ndarray) -> np.ndarray:
    return x.reshape(-1, x.shape[-1])


def _adapter_batch_backward(p: AdapterParams, cache: dict, d_out: np.ndarray):
    d_mlp = p.beta * d_out
    grads = {
        "W2": _flatten2(d_mlp).T @ _flatten2(cache["hidden"]),
        "b2": _flatten2(d_mlp).sum(axis=0),
    }
    d_hidden = d_mlp @ p.W2
    for i in range(len(p.mid) - 1, -1, -1):
        w, _ = p.mid[i]
        mid = cache["mids"][i]
        d_mid_pre = d_hidden * (mid["pre"] > 0)
        grads[f"Wm{i + 1}"] = _flatten2(d_mid_pre).T @ _flatten2(mid["input"])
        grads[f"bm{i + 1}"] = _flatten2(d_mid_pre).sum(axis=0)
        d_hidden = d_mid_pre @ w
    d_pre = d_hidden * (cache["pre"] > 0)
    grads["W1"] = _flatten2(d_pre).T @ _flatten2(cache["z"])
    grads["b1"] = _flatten2(d_pre).sum(axis=0)
    d_z = (1.0 - p.beta) * d_out + d_pre @ p.W1
    return grads, d_z


def _ln_forward(x: np.ndarray, gain: np.ndarray, bias: np.ndarray) -> dict:
    mean = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = (x - mean) * inv
    return {"xhat": xhat, "inv": inv, "out": gain * xhat + bias}


def _ln_backward(cache: dict, gain: np.ndarray, d_out: np.ndarray):
    xhat, inv = cache["xhat"], cache["inv"]
    d_xhat = d_out * gain
    d_x = inv * (
        d_xhat
        - d_xhat.mean(axis=-1, keepdims=True)
        - xhat * (d_xhat * xhat).mean(axis=-1, keepdims=True)
    )
    axes = tuple(range(d_out.ndim - 1))
    return d_x, (d_out * xhat).sum(axis=axes), d_out.sum(axis=axes)


def _split_heads(x: np.ndarray, heads: int) -> np.ndarray:
    b, k, d = x.shape
    return x.reshape(b, k, heads, d // heads).transpose(0, 2, 1, 3)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    b, h, k, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, k, h * dh)


def _temporal_batch_forward(p: TemporalParams, u: np.ndarray, mask: np.ndarray) -> dict:
    heads, d = p.heads, u.shape[-1]
    dh = d // heads
    q = _split_heads(u @ p.Wq, heads)
    k = _split_heads(u @ p.Wk, heads)
    v = _split_heads(u @ p.Wv, heads)
    logits = q @ k.transpose(0, 1, 3, 2) / np.sqrt(dh)
    logits = logits + (mask[:, None, None, :] - 1.0) * _NEG_BIG
    attn = _softmax_last(logits)
    mixed = _merge_heads(attn @ v)
    x1 = u + mixed @ p.Wo
    ln1 = _ln_forward(x1, p.ln1_g, p.ln1_b)
    ff_pre = ln1["out"] @ p.W1f
    ff_hidden = np.maximum(ff_pre, 0.0)
    ff_out = ff_hidden @ p.W2f
    ln2 = _ln_forward(ln1["out"] + ff_out, p.ln2_g, p.ln2_b)
    return {
        "u": u, "q": q, "k": k, "v": v, "attn": attn, "mixed": mixed,
        "ln1": ln1, "ff_pre": ff_pre, "ff_hidden": ff_hidden, "ln2": ln2,
        "out": ln2["out"],
    }


def _temporal_batch_backward(p: TemporalParams, cache: dict, d_out: np.ndarray):
    heads = p.heads
    d = d_out.shape[-1]
    dh = d // heads
    grads: dict[str, np.ndarray] = {}

    d_x2, grads["ln2_g"], grads["ln2_b"] = _ln_backward(cache["ln2"], p.ln2_g, d_out)
    d_z1 = d_x2.copy()
    d_ffh = d_x2 @ p.W2f.T
    grads["W2f"] = np.einsum("bkf,bkd->fd", cache["ff_hidden"], d_x2)
    d_ffpre = d_ffh * (cache["ff_pre"] > 0)
    grads["W1f"] = np.einsum("bkd,bkf->df", cache["ln1"]["out"], d_ffpre)
    d_z1 += d_ffpre @ p.W1f.T

    d_x1, grads["ln1_g"], grads["ln1_b"] = _ln_backward(cache["ln1"], p.ln1_g, d_z1)
    d_u = d_x1.copy()
    d_mixed = d_x1 @ p.Wo.T
    grads["Wo"] = np.einsum("bkd,bke->de", cache["mixed"], d_x1)

    d_headmix = _split_heads(d_mixed, heads)
    attn = cache["attn"]
    d_attn = d_headmix @ cache["v"].transpose(0, 1, 3, 2)
    d_v = attn.transpose(0, 1, 3, 2) @ d_headmix
    d_logits = attn * (d_attn - (d_attn * attn).sum(axis=-1, keepdims=True))
    d_q = d_logits @ cache["k"] / np.sqrt(dh)
    d_k = d_logits.transpose(0, 1, 3, 2) @ cache["q"] / np.sqrt(dh)

    for name, grad_heads, weight in (
        ("Wq", d_q, p.Wq), ("Wk", d_k, p.Wk), ("Wv", d_v, p.Wv)
    ):
        d_flat = _merge_heads(grad_heads)
        grads[name] = np.einsum("bkd,bke->de", cache["u"], d_flat)
        d_u += d_flat @ weight.T
    return grads, d_u


def _pool_scores_forward(
    rows: np.ndarray, mask: np.ndarray, queries: np.ndarray
) -> dict:
    """Query-attentive pooling of every video against every query.

    rows: (B, K, d) encoded video rows; queries: (B, d). Produces the
    B x B cosine matrix (video i, query j)."""
    logits = np.einsum("ikd,jd->ijk", rows, queries)
    logits = logits + (mask[:, None, :] - 1.0) * _NEG_BIG
    alpha = _softmax_last(logits)
    attended = np.einsum("ijk,ikd->ijd", alpha, rows)
    att_norm = np.linalg.norm(attended, axis=-1)
    q_norm = np.linalg.norm(queries, axis=-1)
    dots = np.einsum("ijd,jd->ij", attended, queries)
    scores = dots / (att_norm * q_norm[None, :])
    return {
        "rows": rows, "mask": mask, "queries": queries, "alpha": alpha,
        "attended": attended, "att_norm": att_norm, "q_norm": q_norm,
        "dots": dots, "scores": scores,
    }


def _pool_scores_backward(cache: dict, d_scores: np.ndarray):
    rows, queries, alpha = cache["rows"], cache["queries"], cache["alpha"]
    attended, att_norm, q_norm = cache["attended"], cache["att_norm"], cache["q_norm"]
    dots = cache["dots"]

    denom = att_norm * q_norm[None, :]
    d_attended = d_scores[:, :, None] * (
        queries[None, :, :] / denom[:, :, None]
        - (dots / (att_norm**2 * denom))[:, :, None] * attended
    )
    d_queries = np.einsum(
        "ij,ijd->jd",
        d_scores,
        attended / denom[:, :, None]
        - (dots / (q_norm[None, :] ** 2 * denom))[:, :, None] * queries[None, :, :],
    )

    d_alpha = np.einsum("ijd,ikd->ijk", d_attended, rows)
    d_rows = np.einsum("ijk,ijd->ikd", alpha, d_attended)
    d_logits = alpha * (d_alpha - (d_alpha * alpha).sum(axis=-1, keepdims=True))
    d_rows += np.einsum("ijk,jd->ikd", d_logits, queries)
    d_queries += np.einsum("ijk,ikd->jd", d_logits, rows)
    return d_rows, d_queries


def batch_forward(
    params: ModelParams,
    matrices: list[np.ndarray],
    queries: np.ndarray,
    loss_config: LossConfig,
) -> tuple[float, dict]:
    """Loss over a batch of (video rows, query vector) positive pairs with
    in-batch negatives. Returns the loss and the cache for backward."""
    if len(matrices) != queries.shape[0]:
        raise InvalidInputError("one query per video required")
    stack, mask = _stack_batch([np.asarray(m, dtype=np.float64) for m in matrices])
    queries = np.asarray(queries, dtype=np.float64)

    vis = _adapter_batch_forward(params.vision, stack)
    encoded = vis["out"]
    temporal_cache = None
    if params.temporal is not None:
        u = encoded + pe_matrix(stack.shape[1], stack.shape[2])[None, :, :]
        temporal_cache = _temporal_batch_forward(params.temporal, u, mask)
        encoded = temporal_cache["out"]
    txt = _adapter_batch_forward(params.text, queries)
    pool = _pool_scores_forward(encoded, mask, txt["out"])
    loss, d_scores = _loss_and_grad(pool["scores"], loss_config)
    return loss, {
        "vision": vis, "temporal": temporal_cache, "text": txt,
        "pool": pool, "d_scores": d_scores,
    }


def batch_backward(params: ModelParams, cache: dict) -> dict[str, np.ndarray]:
    """Analytic gradients for every adapter and temporal parameter."""
    d_rows, d_queries = _pool_scores_backward(cache["pool"], cache["d_scores"])
    grads: dict[str, np.ndarray] = {}

    if params.temporal is not None:
        tgrads, d_rows = _temporal_batch_backward(params.temporal, cache["temporal"], d_rows)
        for name, g in tgrads.items():
            grads[f"temporal/{name}"] = g
        # positional encoding is parameter-free; gradient passes through
    vgrads, _ = _adapter_batch_backward(params.vision, cache["vision"], d_rows)
    for name, g in vgrads.items():
        grads[f"vision/{name}"] = g
    tgrads, _ = _adapter_batch_backward(params.text, cache["text"], d_queries)
    for name, g in tgrads.items():
        grads[f"text/{name}"] = g
    return grads


def batch_loss(
    params: ModelParams,
    matrices: list[np.ndarray],
    queries: np.ndarray,
    loss_config: LossConfig,
) -> float:
    loss, _ = batch_forward(params, matrices, queries, loss_config)
    return loss


def batch_forward_backward(
    params: ModelParams,
    matrices: list[np.ndarray],
    queries: np.ndarray,
    loss_config: LossConfig,
) -> tuple[float, dict[str, np.ndarray]]:
    loss, cache = batch_forward(params, matrices, queries, loss_config)
    return loss, batch_backward(params, cache)


# --- initialization, optimizer, training loop ---


def _init_adapter(rng: np.random.Generator, dim: int, hidden: int, beta: float,
                  zero_residual: bool, depth: int = 2) -> AdapterParams:
    if depth < 2:
        raise InvalidInputError("adapter depth must be >= 2 linear layers")
    scale = 1.0 / np.sqrt(dim)
    hscale = 1.0 / np.sqrt(hidden)
    return AdapterParams(
        W1=rng.normal(0.0, scale, size=(hidden, dim)),
        b1=np.zeros(hidden),
        W2=np.zeros((dim, hidden)) if zero_residual
        else rng.normal(0.0, hscale, size=(dim, hidden)),
        b2=np.zeros(dim),
        beta=beta,
        mid=tuple(
            (rng.normal(0.0, hscale, size=(hidden, hidden)), np.zeros(hidden))
            for _ in range(depth - 2)
        ),
    )


def _init_temporal(rng: np.random.Generator, dim: int, heads: int, ff_dim: int,
                   zero_residual: bool) -> TemporalParams:
    scale = 1.0 / np.sqrt(dim)
    def w(shape, zero=False):
        return np.zeros(shape) if zero else rng.normal(0.0, scale, size=shape)
    return TemporalParams(
        Wq=w((dim, dim)), Wk=w((dim, dim)), Wv=w((dim, dim)),
        Wo=w((dim, dim), zero=zero_residual),
        W1f=w((dim, ff_dim)),
        W2f=np.zeros((ff_dim, dim)) if zero_residual
        else rng.normal(0.0, 1.0 / np.sqrt(ff_dim), size=(ff_dim, dim)),
        ln1_g=np.ones(dim), ln1_b=np.zeros(dim),
        ln2_g=np.ones(dim), ln2_b=np.zeros(dim),
        heads=heads,
    )


def init_params(
    rng: np.random.Generator,
    dim: int,
    hidden: int = 192,
    beta_v: float = 0.2,
    beta_t: float = 0.2,
    heads: int = 8,
    ff_dim: int | None = None,
    temporal: bool = True,
    zero_residual: bool = True,
    adapter_depth: int = 2,
) -> ModelParams:
    """Residual branches start at zero so the initial model stays close to
    the frozen-embedding behaviour; set zero_residual=False for fully
    random parameters (gradient checking)."""
    return ModelParams(
        vision=_init_adapter(rng, dim, hidden, beta_v, zero_residual, adapter_depth),
        text=_init_adapter(rng, dim, hidden, beta_t, zero_residual, adapter_depth),
        temporal=_init_temporal(rng, dim, heads, ff_dim or 4 * dim, zero_residual)
        if temporal
        else None,
    )


class AdamW:
    """Decoupled weight decay + adaptive moments."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, weight_decay: float = 0.01):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.step_count += 1
        t = self.step_count
        for name, value in params.items():
            g = grads[name]
            m = self.m.setdefault(name, np.zeros_like(value))
            v = self.v.setdefault(name, np.zeros_like(value))
            m += (1.0 - self.beta1) * (g - m)
            v += (1.0 - self.beta2) * (g * g - v)
            mhat = m / (1.0 - self.beta1**t)
            vhat = v / (1.0 - self.beta2**t)
            value -= self.lr * (mhat / (np.sqrt(vhat) + self.eps) + self.weight_decay * value)


def train(
    store: EmbeddingStore, config: TrainConfig
) -> tuple[ModelParams, np.ndarray]:
    """Deterministic loop over in-batch-negative batches of (video, query)
    positive pairs. Returns the parameters and the per-step loss history."""
    pairs = [
        (qid, store.queries[qid].video_id)
        for qid in store.query_ids()
        if store.queries[qid].video_id in store.videos
    ]
    if len(pairs) < config.batch_size:
        raise InvalidInputError(
            f"need at least batch_size={config.batch_size} pairs, have {len(pairs)}"
        )
    rng = np.random.default_rng(config.seed)
    params = init_params(
        rng,
        dim=store.dim,
        hidden=config.hidden,
        beta_v=config.beta_v,
        beta_t=config.beta_t,
        heads=config.heads,
        ff_dim=config.ff_mult * store.dim,
        temporal=config.temporal,
        adapter_depth=config.adapter_depth,
    )
    optimizer = AdamW(
        lr=config.learning_rate,
        beta1=config.adam_beta1,
        beta2=config.adam_beta2,
        eps=config.adam_eps,
        weight_decay=config.weight_decay,
    )
    flat = params.as_dict()
    history: list[float] = []
    per_epoch = len(pairs) // config.batch_size
    for _ in range(config.epochs):
        order = rng.permutation(len(pairs))
        for b in range(per_epoch):
            chosen = order[b * config.batch_size : (b + 1) * config.batch_size]
            matrices = [store.videos[pairs[i][1]].matrix for i in chosen]
            queries = np.stack([store.queries[pairs[i][0]].vector for i in chosen])
            loss, grads = batch_forward_backward(params, matrices, queries, config.loss)
            optimizer.step(flat, grads)
            history.append(loss)
    return params, np.asarray(history)


class FinetunedScorer(Scorer):
    """Corpus scorer that routes matrices and queries through the trained
    head, then pools with query attention."""

    mode = "attn"

    def __init__(self, params: ModelParams, temperature: float = 1.0):
        self.params = params
        self.temperature = temperature

    def prepare_video(self, matrix: np.ndarray) -> np.ndarray:
        rows = adapter_forward(self.params.vision, matrix)
        if self.params.temporal is not None:
            rows = temporal_forward(self.params.temporal, rows)
        return rows

    def prepare_query(self, vector: np.ndarray) -> np.ndarray:
        return adapter_forward(self.params.text, np.asarray(vector, dtype=np.float64))

    def score_packed(self, packed: PackedCorpus, query_vec: np.ndarray) -> np.ndarray:
        return corpus_scores(packed, query_vec, mode="attn", temperature=self.temperature)


# --- checkpoint serialization ---

CKPT_MAGIC = b"QCKPT"
CKPT_VERSION = 1


def save_checkpoint(params: ModelParams, path: str | Path) -> None:
    """Named float32 tensors: magic, version, count, then per tensor
    name length/bytes, rank, dims, little-endian payload."""
    tensors = list(params.named())
    tensors.append(("meta/beta_v", np.array(params.vision.beta)))
    tensors.append(("meta/beta_t", np.array(params.text.beta)))
    if params.temporal is not None:
        tensors.append(("meta/heads", np.array(float(params.temporal.heads))))
    parts = [CKPT_MAGIC, struct.pack("<HI", CKPT_VERSION, len(tensors))]
    for name, arr in tensors:
        raw = name.encode("utf-8")
        arr = np.asarray(arr, dtype="<f4")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path: str | Path) -> ModelParams:
    data = Path(path).read_bytes()
    if data[:5] != CKPT_MAGIC:
        raise FormatError(f"bad checkpoint magic {data[:5]!r}", offset=0)
    pos = 5
    version, count = struct.unpack_from("<HI", data, pos)
    pos += 6
    if version != CKPT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", offset=5)
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        if pos + 2 > len(data):
            raise FormatError("truncated tensor name length", offset=pos)
        (name_len,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos : pos + name_len].decode("utf-8")
        pos += name_len
        (rank,) = struct.unpack_from("<B", data, pos)
        pos += 1
        dims = struct.unpack_from(f"<{rank}I", data, pos)
        pos += 4 * rank
        size = int(np.prod(dims)) if rank else 1
        if pos + 4 * size > len(data):
            raise FormatError(f"truncated payload for {name!r}", offset=pos)
        arr = np.frombuffer(data, dtype="<f4", count=size, offset=pos).reshape(dims)
        pos += 4 * size
        tensors[name] = arr.astype(np.float64)

    def need(name: str) -> np.ndarray:
        if name not in tensors:
            raise FormatError(f"checkpoint missing tensor {name!r}")
        return tensors[name]

    def mid_layers(prefix: str):
        out = []
        i = 1
        while f"{prefix}/Wm{i}" in tensors:
            out.append((need(f"{prefix}/Wm{i}"), need(f"{prefix}/bm{i}")))
            i += 1
        return tuple(out)

    vision = AdapterParams(
        W1=need("vision/W1"), b1=need("vision/b1"),
        W2=need("vision/W2"), b2=need("vision/b2"),
        beta=float(need("meta/beta_v")), mid=mid_layers("vision"),
    )
    text = AdapterParams(
        W1=need("text/W1"), b1=need("text/b1"),
        W2=need("text/W2"), b2=need("text/b2"),
        beta=float(need("meta/beta_t")), mid=mid_layers("text"),
    )
    temporal = None
    if "temporal/Wq" in tensors:
        temporal = TemporalParams(
            Wq=need("temporal/Wq"), Wk=need("temporal/Wk"),
            Wv=need("temporal/Wv"), Wo=need("temporal/Wo"),
            W1f=need("temporal/W1f"), W2f=need("temporal/W2f"),
            ln1_g=need("temporal/ln1_g"), ln1_b=need("temporal/ln1_b"),
            ln2_g=need("temporal/ln2_g"), ln2_b=need("temporal/ln2_b"),
            heads=int(need("meta/heads")),
        )
    return ModelParams(vision=vision, text=text, temporal=temporal)


def write_history(history: np.ndarray, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("step,loss\n")
        for step, loss in enumerate(history):
            fh.write(f"{step},{float(loss)!r}\n")
