"""Minimal causal-attention decoder used only as the efficiency foil: same
widths, heads, norms, and relu^2 feedforward as the recurrent stack, but
sequence mixing is plain dot-product attention over a key/value cache that
grows one row per token (no rotary terms, forward only, nothing trainable).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .numerics import SeededRng
from .rwkv import BlockConfig, CHANNEL_EXPANSION, INIT_STD, NORM_EPS, _rms


@dataclass
class AttnLayerParams:
    ln1: np.ndarray
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray
    ln2: np.ndarray
    w_up: np.ndarray
    w_down: np.ndarray


@dataclass
class AttnParams:
    cfg: BlockConfig
    layers: list[AttnLayerParams]


def init_attn_params(cfg: BlockConfig, rng: SeededRng, dtype=np.float32) -> AttnParams:
    d = cfg.d_model
    layers = []
    for l in range(cfg.n_layers):
        r = rng.child(200 + l)
        layers.append(AttnLayerParams(
            ln1=np.ones(d, dtype=dtype),
            w_q=r.child(0).normal((d, d), std=INIT_STD, dtype=dtype),
            w_k=r.child(1).normal((d, d), std=INIT_STD, dtype=dtype),
            w_v=r.child(2).normal((d, d), std=INIT_STD, dtype=dtype),
            w_o=r.child(3).normal((d, d), std=INIT_STD, dtype=dtype),
            ln2=np.ones(d, dtype=dtype),
            w_up=r.child(4).normal((CHANNEL_EXPANSION * d, d), std=INIT_STD, dtype=dtype),
            w_down=r.child(5).normal((d, CHANNEL_EXPANSION * d), std=INIT_STD, dtype=dtype),
        ))
    return AttnParams(cfg, layers)


class KvCache:
    """Per-layer stacked keys and values; every step reallocates one row
    bigger, so nbytes is exactly linear in the tokens held."""

    def __init__(self, cfg: BlockConfig, dtype=np.float32):
        self.cfg = cfg
        self.k = [np.zeros((0, cfg.d_model), dtype=dtype) for _ in range(cfg.n_layers)]
        self.v = [np.zeros((0, cfg.d_model), dtype=dtype) for _ in range(cfg.n_layers)]

    @property
    def length(self) -> int:
        return self.k[0].shape[0] if self.k else 0

    @property
    def nbytes(self) -> int:
        return sum(a.nbytes for a in self.k) + sum(a.nbytes for a in self.v)

    def snapshot(self):
        return list(self.k), list(self.v)

    def restore(self, snap) -> None:
        self.k, self.v = list(snap[0]), list(snap[1])


def attn_step(params: AttnParams, x_t: np.ndarray, cache: KvCache) -> np.ndarray:
    """One decode position: append k/v, attend over everything cached."""
    cfg = params.cfg
    if x_t.shape != (cfg.d_model,):
        raise ShapeError(f"expected input of length {cfg.d_model}, got {x_t.shape}")
    h, n = cfg.n_heads, cfg.head_dim
    scale = x_t.dtype.type(1.0 / np.sqrt(n))
    x = x_t
    for l, layer in enumerate(params.layers):
        xn, _ = _rms(x, layer.ln1)
        q = (layer.w_q @ xn).reshape(h, n)
        cache.k[l] = np.concatenate([cache.k[l], (layer.w_k @ xn)[None, :]], axis=0)
        cache.v[l] = np.concatenate([cache.v[l], (layer.w_v @ xn)[None, :]], axis=0)
        keys = cache.k[l].reshape(-1, h, n)
        vals = cache.v[l].reshape(-1, h, n)
        scores = np.einsum("thn,hn->ht", keys, q) * scale
        scores -= scores.max(axis=1, keepdims=True)
        probs = np.exp(scores)
        probs /= probs.sum(axis=1, keepdims=True)
        ctx = np.einsum("ht,thn->hn", probs, vals).reshape(-1)
        x = x + layer.w_o @ ctx
        xn2, _ = _rms(x, layer.ln2)
        x = x + layer.w_down @ np.square(np.maximum(layer.w_up @ xn2, 0))
    return x
