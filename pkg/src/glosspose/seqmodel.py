"""Transformer backbone: gloss encoder, recursive pose decoder, MAE fit loss.

All trainable math runs on :mod:`glosspose.diffcore` tensors so one taped
backward pass covers the whole model. Sequences are processed one sample
at a time as rank-2 matrices (positions x features); batching is the
trainer's job.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from functools import lru_cache
from typing import Optional

import numpy as np

from . import diffcore as dc
from ._binio import read_container, write_container
from .diffcore import Tensor

PAD_ID = 0
BOS_ID = 1
EOS_ID = 2
_RESERVED = ("<pad>", "<bos>", "<eos>")

_MASKED = -1e30  # additive attention bias for forbidden positions


class InputError(ValueError):
    """An argument violates an operation's precondition."""


class GlossVocab:
    """Bijective token-string <-> contiguous-id map with reserved ids 0..2."""

    def __init__(self, content_tokens):
        tokens = list(_RESERVED) + list(content_tokens)
        if len(set(tokens)) != len(tokens):
            raise InputError("duplicate tokens in vocabulary")
        if len(tokens) < 4:
            raise InputError("vocabulary needs at least one content token")
        self._tokens = tokens
        self._ids = {tok: i for i, tok in enumerate(tokens)}

    def __len__(self):
        return len(self._tokens)

    def id_of(self, token: str) -> int:
        return self._ids[token]

    def token_of(self, idx: int) -> str:
        return self._tokens[idx]

    @property
    def content_ids(self):
        return range(len(_RESERVED), len(self._tokens))


@dataclass
class GlossSequence:
    """Token ids of one gloss sentence, PAD-free."""

    ids: np.ndarray

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int32)
        if self.ids.ndim != 1 or len(self.ids) < 1:
            raise InputError("gloss sequence must hold at least one id")
        if np.any(self.ids == PAD_ID):
            raise InputError("PAD must not appear inside a gloss sequence")

    def __len__(self):
        return len(self.ids)


@dataclass
class PoseSequence:
    """Time-ordered frames of flattened 3D joint coordinates, M x (J*3)."""

    frames: np.ndarray

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2 or self.frames.shape[0] < 1:
            raise InputError("pose sequence must be a non-empty M x (J*3) matrix")
        if not np.all(np.isfinite(self.frames)):
            raise InputError("pose coordinates must be finite")

    def __len__(self):
        return self.frames.shape[0]


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    joints: int
    embed_dim: int = 512
    layers: int = 2
    heads: int = 4
    ff_dim: int = 0  # 0 means 4 * embed_dim
    layer_norm_eps: float = 1e-5

    def __post_init__(self):
        if self.embed_dim % self.heads != 0:
            raise InputError("embed_dim must be divisible by heads")
        if self.ff_dim == 0:
            object.__setattr__(self, "ff_dim", 4 * self.embed_dim)

    @property
    def pose_dim(self) -> int:
        return 3 * self.joints


class ModelParams:
    """Named parameter tensors plus the config that shaped them."""

    def __init__(self, config: ModelConfig, tensors: dict[str, Tensor]):
        self.config = config
        self.tensors = tensors
        for name, t in tensors.items():
            if not np.all(np.isfinite(t.data)):
                raise InputError(f"non-finite parameter tensor {name}")

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def names(self):
        return sorted(self.tensors)


def _xavier(r: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return r.uniform(-limit, limit, size=(fan_in, fan_out))


def init_params(config: ModelConfig, seed: int = 0) -> ModelParams:
    """Uniform Xavier projections, zero biases, unit/zero layer-norm affine."""
    r = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(101,)))
    d, dk = config.embed_dim, config.embed_dim // config.heads
    f = config.ff_dim
    t: dict[str, Tensor] = {}

    def w(name, fan_in, fan_out):
        t[name] = Tensor(_xavier(r, fan_in, fan_out), requires_grad=True)

    def b(name, dim):
        t[name] = Tensor(np.zeros((1, dim)), requires_grad=True)

    def ln(prefix, dim):
        t[f"{prefix}.gain"] = Tensor(np.ones((1, dim)), requires_grad=True)
        t[f"{prefix}.bias"] = Tensor(np.zeros((1, dim)), requires_grad=True)

    def mha(prefix):
        # head projections packed column-wise: head h owns columns
        # [h*dk, (h+1)*dk) of wq/wk/wv and the matching rows of wo
        w(f"{prefix}.wq", d, d)
        w(f"{prefix}.wk", d, d)
        w(f"{prefix}.wv", d, d)
        w(f"{prefix}.wo", d, d)
        b(f"{prefix}.bias", d)

    def ff(prefix):
        w(f"{prefix}.w1", d, f)
        b(f"{prefix}.b1", f)
        w(f"{prefix}.w2", f, d)
        b(f"{prefix}.b2", d)

    # embedding tables carry a sqrt(D) factor so token/pose content starts
    # at the same scale as the positional code instead of 4x below it
    t["gloss_embed.w"] = Tensor(np.sqrt(d) * _xavier(r, config.vocab_size, d),
                                requires_grad=True)
    b("gloss_embed.b", d)
    t["pose_embed.w"] = Tensor(np.sqrt(d) * _xavier(r, config.pose_dim, d),
                               requires_grad=True)
    b("pose_embed.b", d)
    for l in range(config.layers):
        mha(f"enc.{l}.attn")
        ln(f"enc.{l}.ln1", d)
        ff(f"enc.{l}.ff")
        ln(f"enc.{l}.ln2", d)
    for l in range(config.layers):
        mha(f"dec.{l}.self_attn")
        ln(f"dec.{l}.ln1", d)
        ff(f"dec.{l}.ff1")
        ln(f"dec.{l}.ln2", d)
        mha(f"dec.{l}.cross_attn")
        ln(f"dec.{l}.ln3", d)
        ff(f"dec.{l}.ff2")
        ln(f"dec.{l}.ln4", d)
    w("out_proj.w", d, config.pose_dim)
    b("out_proj.b", config.pose_dim)
    return ModelParams(config, t)


# ---------------------------------------------------------------------------
# positional encoding and embeddings


@lru_cache(maxsize=64)
def _pe_table(length: int, dim: int) -> np.ndarray:
    pos = np.arange(length)[:, None].astype(np.float64)
    i = np.arange(dim)[None, :].astype(np.float64)
    angle = pos / np.power(10000.0, 2.0 * np.floor(i / 2.0) / dim)
    table = np.empty((length, dim))
    table[:, 0::2] = np.sin(angle[:, 0::2])
    table[:, 1::2] = np.cos(angle[:, 1::2])
    return table


def positional_encoding(length: int, dim: int) -> np.ndarray:
    """Sine/cosine table; row p is the encoding of position p."""
    return _pe_table(length, dim).copy()


def embed_gloss_ids(ids, params: ModelParams) -> Tensor:
    """Embed a raw id array (PAD allowed; padded batches come through here)."""
    cfg = params.config
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 1 or len(ids) < 1:
        raise InputError("need a non-empty 1-D id array")
    if np.any(ids < 0) or np.any(ids >= cfg.vocab_size):
        raise InputError("gloss id outside the vocabulary")
    n = len(ids)
    onehot = np.zeros((n, cfg.vocab_size))
    onehot[np.arange(n), ids] = 1.0
    emb = dc.matmul(dc.constant(onehot), params["gloss_embed.w"])
    emb = dc.add(emb, dc.broadcast_rows(params["gloss_embed.b"], n))
    return dc.add(emb, dc.constant(_pe_table(n, cfg.embed_dim)))


def embed_gloss(seq: GlossSequence, params: ModelParams) -> Tensor:
    """Rows: embedding-table row of each token, plus bias and position code."""
    return embed_gloss_ids(seq.ids, params)


def embed_pose(pose, params: ModelParams) -> Tensor:
    """Linear map of pose frames into model space plus position code."""
    frames = pose.frames if isinstance(pose, PoseSequence) else pose
    if isinstance(frames, Tensor):
        mat = frames
    else:
        mat = dc.constant(np.asarray(frames, dtype=np.float64))
    cfg = params.config
    if mat.shape[1] != cfg.pose_dim:
        raise InputError(f"pose width {mat.shape[1]} does not match J*3={cfg.pose_dim}")
    m = mat.shape[0]
    emb = dc.matmul(mat, params["pose_embed.w"])
    emb = dc.add(emb, dc.broadcast_rows(params["pose_embed.b"], m))
    return dc.add(emb, dc.constant(_pe_table(m, cfg.embed_dim)))


# ---------------------------------------------------------------------------
# attention blocks


@lru_cache(maxsize=256)
def _causal_bias(m: int) -> np.ndarray:
    bias = np.zeros((m, m))
    bias[np.triu_indices(m, k=1)] = _MASKED
    return bias


def _attention_bias(tq: int, tk: int, key_mask, causal: bool):
    bias = None
    if causal:
        if tq != tk:
            raise InputError("causal attention needs square score shape")
        bias = _causal_bias(tq).copy()
    if key_mask is not None:
        key_mask = np.asarray(key_mask, dtype=bool)
        if key_mask.shape != (tk,):
            raise InputError("key mask length must match key count")
        if not key_mask.all():
            if bias is None:
                bias = np.zeros((tq, tk))
            bias[:, ~key_mask] = _MASKED
    return bias


def _mha(queries: Tensor, keys: Tensor, prefix: str, params: ModelParams,
         key_mask=None, causal: bool = False, attn_out: Optional[list] = None) -> Tensor:
    cfg = params.config
    tq, tk = queries.shape[0], keys.shape[0]
    dk = cfg.embed_dim // cfg.heads
    inv_sqrt_dk = 1.0 / np.sqrt(dk)
    bias = _attention_bias(tq, tk, key_mask, causal)
    bias_t = dc.constant(bias) if bias is not None else None
    q_all = dc.matmul(queries, params[f"{prefix}.wq"])
    k_all = dc.matmul(keys, params[f"{prefix}.wk"])
    v_all = dc.matmul(keys, params[f"{prefix}.wv"])
    contexts = []
    for h in range(cfg.heads):
        q = dc.slice_cols(q_all, h * dk, dk)
        k = dc.slice_cols(k_all, h * dk, dk)
        v = dc.slice_cols(v_all, h * dk, dk)
        scores = dc.scale(dc.matmul(q, dc.transpose(k)), inv_sqrt_dk)
        if bias_t is not None:
            scores = dc.add(scores, bias_t)
        attn = dc.softmax_rows(scores)
        if attn_out is not None:
            attn_out.append(attn.data)
        contexts.append(dc.matmul(attn, v))
    merged = contexts[0] if cfg.heads == 1 else dc.concat_cols(contexts)
    out = dc.matmul(merged, params[f"{prefix}.wo"])
    return dc.add(out, dc.broadcast_rows(params[f"{prefix}.bias"], tq))


def _ffn(x: Tensor, prefix: str, params: ModelParams) -> Tensor:
    n = x.shape[0]
    h = dc.add(dc.matmul(x, params[f"{prefix}.w1"]),
               dc.broadcast_rows(params[f"{prefix}.b1"], n))
    h = dc.relu(h)
    return dc.add(dc.matmul(h, params[f"{prefix}.w2"]),
                  dc.broadcast_rows(params[f"{prefix}.b2"], n))


def _ln(x: Tensor, prefix: str, params: ModelParams) -> Tensor:
    return dc.layer_norm(x, params[f"{prefix}.gain"], params[f"{prefix}.bias"],
                         params.config.layer_norm_eps)


@dataclass
class EncoderOutput:
    features: Tensor          # N x D
    mask: np.ndarray          # bool, True at real positions
    attention: list = field(default_factory=list)  # per layer/head weights


@dataclass
class DecoderState:
    z: Tensor                 # M x D intermediate features (last layer)
    pred: Tensor              # M x (J*3) predicted frames
    cross_attention: np.ndarray  # M x N, head-averaged, last layer


def encode(embedded: Tensor, params: ModelParams, mask=None) -> EncoderOutput:
    """Self-attention encoder stack; PAD positions are never attended to."""
    n = embedded.shape[0]
    if mask is None:
        mask = np.ones(n, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (n,):
        raise InputError("mask length must match sequence length")
    x = embedded
    attn_all: list = []
    for l in range(params.config.layers):
        layer_attn: list = []
        a = _mha(x, x, f"enc.{l}.attn", params, key_mask=mask, attn_out=layer_attn)
        h = _ln(dc.add(x, a), f"enc.{l}.ln1", params)
        x = _ln(dc.add(h, _ffn(h, f"enc.{l}.ff", params)), f"enc.{l}.ln2", params)
        attn_all.append(layer_attn)
    return EncoderOutput(features=x, mask=mask, attention=attn_all)


def decode(pose_embedded: Tensor, enc: EncoderOutput, params: ModelParams) -> DecoderState:
    """Causally masked self-attention over the pose prefix, feed-forward
    (this block's output is the intermediate feature sequence), then
    cross-attention into the encoded glosses and a final projection.

    The last layer's head-averaged cross-attention matrix is retained for
    heatmap export.
    """
    a = pose_embedded
    z_last = None
    cross_last: Optional[np.ndarray] = None
    for l in range(params.config.layers):
        sa = _mha(a, a, f"dec.{l}.self_attn", params, causal=True)
        s = _ln(dc.add(a, sa), f"dec.{l}.ln1", params)
        z = _ln(dc.add(s, _ffn(s, f"dec.{l}.ff1", params)), f"dec.{l}.ln2", params)
        cross_attn: list = []
        ca = _mha(z, enc.features, f"dec.{l}.cross_attn", params,
                  key_mask=enc.mask, attn_out=cross_attn)
        c = _ln(dc.add(z, ca), f"dec.{l}.ln3", params)
        a = _ln(dc.add(c, _ffn(c, f"dec.{l}.ff2", params)), f"dec.{l}.ln4", params)
        z_last = z
        cross_last = np.mean(cross_attn, axis=0)
    m = a.shape[0]
    pred = dc.add(dc.matmul(a, params["out_proj.w"]),
                  dc.broadcast_rows(params["out_proj.b"], m))
    return DecoderState(z=z_last, pred=pred, cross_attention=cross_last)


def bos_frame(config: ModelConfig) -> np.ndarray:
    """All-zeros start-of-sequence pose frame."""
    return np.zeros(config.pose_dim)


def decode_autoregressive(bos, enc: EncoderOutput, params: ModelParams,
                          max_len: int) -> PoseSequence:
    """Feed each predicted frame back as input; stops at ``max_len``."""
    if max_len < 1:
        raise InputError("max_len must be at least 1")
    frames = [np.asarray(bos, dtype=np.float64).reshape(-1)]
    preds: list[np.ndarray] = []
    for _ in range(max_len):
        emb = embed_pose(np.stack(frames), params)
        state = decode(emb, enc, params)
        nxt = state.pred.data[-1].copy()
        preds.append(nxt)
        frames.append(nxt)
    return PoseSequence(np.stack(preds))


# ---------------------------------------------------------------------------
# pose fitting loss


def loss_acc(pred, target, mask=None) -> Tensor:
    """Mean absolute error per frame (summed over coordinates), averaged
    over unmasked frames."""
    pred_t = pred if isinstance(pred, Tensor) else dc.constant(
        pred.frames if isinstance(pred, PoseSequence) else pred)
    target_np = np.asarray(
        target.frames if isinstance(target, PoseSequence) else target, dtype=np.float64)
    if pred_t.shape != target_np.shape:
        raise InputError(f"pred shape {pred_t.shape} != target shape {target_np.shape}")
    m = pred_t.shape[0]
    if mask is None:
        mask = np.ones(m, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    count = int(mask.sum())
    if count == 0:
        raise InputError("mask removes every frame")
    diff = dc.sub(pred_t, dc.constant(target_np))
    absval = dc.add(dc.relu(diff), dc.relu(dc.neg(diff)))
    keep = np.repeat(mask[:, None], pred_t.shape[1], axis=1).astype(np.float64)
    masked = dc.mul(absval, dc.constant(keep))
    return dc.scale(dc.reduce("sum", masked), 1.0 / count)


# ---------------------------------------------------------------------------
# checkpointing


_CHECKPOINT_MAGIC = b"GPCK"
_CHECKPOINT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


def save_params(params: ModelParams, path, extra_meta: Optional[dict] = None,
                extra_arrays: Optional[dict[str, np.ndarray]] = None):
    """Write a versioned binary checkpoint; read/write is bit-exact."""
    meta = {
        "kind": "params" if not extra_arrays else "train_state",
        "config": asdict(params.config),
    }
    if extra_meta:
        meta.update(extra_meta)
    arrays = {f"param/{k}": v.data for k, v in params.tensors.items()}
    if extra_arrays:
        arrays.update(extra_arrays)
    write_container(path, _CHECKPOINT_MAGIC, _CHECKPOINT_VERSION, meta, arrays)


def load_checkpoint(path):
    """Return (ModelParams, meta, extra arrays) from a checkpoint file."""
    try:
        meta, arrays = read_container(path, _CHECKPOINT_MAGIC, _CHECKPOINT_VERSION)
    except ValueError as e:
        raise CheckpointError(str(e)) from e
    config = ModelConfig(**meta["config"])
    tensors = {}
    extras = {}
    for name, arr in arrays.items():
        if name.startswith("param/"):
            tensors[name[len("param/"):]] = Tensor(arr, requires_grad=True)
        else:
            extras[name] = arr
    return ModelParams(config, tensors), meta, extras


def load_params(path) -> ModelParams:
    return load_checkpoint(path)[0]
