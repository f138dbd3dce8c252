"""Trainable small text encoder with exact reverse-mode gradients.

A learned sentinel token is prepended at position 0 and its output row
serves as the utterance-level embedding; the remaining rows align with the
input tokens. Blocks are pre-norm self-attention plus a tanh feed-forward,
with a final layer norm. There is no dropout, so forward passes are
deterministic.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

CHECKPOINT_VERSION = 1
LN_EPS = 1e-5


class EncoderError(Exception):
    pass


@dataclass(frozen=True)
class EncoderConfig:
    dim: int = 64
    ff_dim: int = 128
    n_layers: int = 1
    max_len: int = 32  # includes the sentinel position

    def __post_init__(self):
        if min(self.dim, self.ff_dim, self.n_layers, self.max_len) <= 0:
            raise ValueError("encoder dimensions must be positive")


@dataclass
class EncoderParams:
    config: EncoderConfig
    vocab_size: int
    tensors: dict = field(repr=False)  # name -> autodiff parameter

    def named(self):
        return self.tensors

    def arrays(self) -> dict:
        return {k: t.data for k, t in self.tensors.items()}


def _layer_names(i: int):
    p = f"layer{i}."
    return [p + n for n in (
        "ln1_gain", "ln1_bias", "wq", "wk", "wv",
        "ln2_gain", "ln2_bias", "ff_w1", "ff_b1", "ff_w2", "ff_b2")]


def init_params(vocab_size: int, config: EncoderConfig = EncoderConfig(),
                rng: np.random.Generator | None = None) -> EncoderParams:
    """Uniform[-0.1, 0.1] embeddings; projections scaled by 1/sqrt(dim)."""
    if rng is None:
        rng = np.random.default_rng(0)
    d, f = config.dim, config.ff_dim

    def emb(*shape):
        return ad.parameter(rng.uniform(-0.1, 0.1, size=shape))

    def proj(*shape):
        return ad.parameter(rng.uniform(-0.1, 0.1, size=shape) / np.sqrt(d))

    tensors = {
        "token_table": emb(vocab_size, d),
        "pos_table": emb(config.max_len, d),
        "sentinel": emb(1, d),
    }
    for i in range(config.n_layers):
        names = _layer_names(i)
        vals = [
            ad.parameter(np.ones(d)), ad.parameter(np.zeros(d)),
            proj(d, d), proj(d, d), proj(d, d),
            ad.parameter(np.ones(d)), ad.parameter(np.zeros(d)),
            proj(d, f), ad.parameter(np.zeros(f)),
            proj(f, d), ad.parameter(np.zeros(d)),
        ]
        tensors.update(zip(names, vals))
    tensors["lnf_gain"] = ad.parameter(np.ones(d))
    tensors["lnf_bias"] = ad.parameter(np.zeros(d))
    return EncoderParams(config=config, vocab_size=vocab_size, tensors=tensors)


@dataclass
class EncoderOutput:
    utterance_embedding: Tensor  # shape (dim,)
    token_embeddings: Tensor     # shape (n, dim)
    _consumed: bool = field(default=False, repr=False)


def _layer_norm(x: Tensor, gain: Tensor, bias: Tensor) -> Tensor:
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    return (xc / ad.sqrt(var + LN_EPS)) * gain + bias


def _softmax_rows(s: Tensor) -> Tensor:
    shift = ad.constant(s.data.max(axis=1, keepdims=True))  # detached
    e = ad.exp(s - shift)
    return e / e.sum(axis=1, keepdims=True)


def encode(params: EncoderParams, token_ids) -> EncoderOutput:
    """Deterministic forward pass over one token-id sequence."""
    ids = np.asarray(token_ids, dtype=np.intp)
    cfg = params.config
    if ids.size == 0:
        raise EncoderError("empty token sequence")
    if ids.min() < 0 or ids.max() >= params.vocab_size:
        raise EncoderError(
            f"token id out of range (vocab size {params.vocab_size}); "
            "callers must map unknown tokens to the reserved UNK id")
    if ids.size + 1 > cfg.max_len:
        raise EncoderError(
            f"sequence of {ids.size} tokens exceeds max length {cfg.max_len - 1}")

    t = params.tensors
    rows = ad.take_rows(t["token_table"], ids)
    x = ad.concat([t["sentinel"], rows], axis=0)
    x = x + ad.take_rows(t["pos_table"], np.arange(ids.size + 1))
    scale = 1.0 / np.sqrt(cfg.dim)
    for i in range(cfg.n_layers):
        (ln1g, ln1b, wq, wk, wv, ln2g, ln2b, w1, b1, w2, b2) = (
            t[n] for n in _layer_names(i))
        h = _layer_norm(x, ln1g, ln1b)
        attn = _softmax_rows((h @ wq) @ (h @ wk).T * scale)
        x = x + attn @ (h @ wv)
        h2 = _layer_norm(x, ln2g, ln2b)
        x = x + ad.tanh(h2 @ w1 + b1) @ w2 + b2
    x = _layer_norm(x, t["lnf_gain"], t["lnf_bias"])
    n = ids.size
    return EncoderOutput(
        utterance_embedding=ad.take_rows(x, [0]).reshape((cfg.dim,)),
        token_embeddings=ad.take_rows(x, np.arange(1, n + 1)),
    )


def backward(params: EncoderParams, output: EncoderOutput,
             d_utterance: np.ndarray, d_tokens: np.ndarray) -> dict:
    """Exact gradients of <upstream, output> w.r.t. every parameter."""
    if output._consumed:
        raise EncoderError("gradient tape already consumed for this output")
    output._consumed = True
    ad.zero_grad(params.tensors.values())
    ad.backward([
        (output.utterance_embedding, np.asarray(d_utterance, dtype=np.float64)),
        (output.token_embeddings, np.asarray(d_tokens, dtype=np.float64)),
    ])
    return {k: (np.zeros_like(v.data) if v.grad is None else v.grad.copy())
            for k, v in params.tensors.items()}


def save_params(params: EncoderParams, path) -> None:
    """Versioned checkpoint: npz tensor dump plus a JSON meta entry."""
    meta = {
        "version": CHECKPOINT_VERSION,
        "vocab_size": params.vocab_size,
        "dim": params.config.dim,
        "ff_dim": params.config.ff_dim,
        "n_layers": params.config.n_layers,
        "max_len": params.config.max_len,
    }
    arrays = {k: t.data for k, t in params.tensors.items()}
    arrays["__meta__"] = np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_params(path) -> EncoderParams:
    with np.load(path) as data:
        if "__meta__" not in data:
            raise EncoderError("not an encoder checkpoint (missing meta entry)")
        meta = json.loads(bytes(data["__meta__"]).decode("utf-8"))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise EncoderError(f"unsupported checkpoint version {meta.get('version')}")
        config = EncoderConfig(dim=meta["dim"], ff_dim=meta["ff_dim"],
                               n_layers=meta["n_layers"], max_len=meta["max_len"])
        fresh = init_params(meta["vocab_size"], config, np.random.default_rng(0))
        tensors = {}
        for name, ref in fresh.tensors.items():
            if name not in data:
                raise EncoderError(f"checkpoint missing tensor {name!r}")
            arr = data[name]
            if arr.shape != ref.data.shape:
                raise EncoderError(
                    f"tensor {name!r} has shape {arr.shape}, expected {ref.data.shape}")
            tensors[name] = ad.parameter(arr.astype(np.float64))
    return EncoderParams(config=config, vocab_size=meta["vocab_size"], tensors=tensors)
