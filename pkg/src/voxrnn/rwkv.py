"""Recurrent block stack with a matrix-valued delta-rule state.

Each block is a pre-norm residual pair: a time-mixing sublayer whose per-head
state S follows

    S' = S (diag(w) - khat (a * khat)^T) + v k^T,   y = S' r

with khat the eps-safe L2-normalized key, and a channel-mixing sublayer
``W_down relu(W_up shifted)^2``. Both sublayers read a token-shift buffer
holding the previous position's (normed) input, so inference carries O(1)
state regardless of sequence length.

``stack_sequence`` is defined as the fold of ``stack_step`` over positions;
the two are bitwise identical by construction, and the trainer's batched
backward consumes the cache this fold records.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError, ShapeError, UsageError
from .numerics import SeededRng

KEY_EPS = 1e-6    # eps-safe key normalization in the state update
NORM_EPS = 1e-5   # RMS norm denominators
CHANNEL_EXPANSION = 4
# decay bias so exp(-exp(b)) = 0.9 when the projection output is ~0 at init
DECAY_BIAS_INIT = float(np.log(-np.log(0.9)))
INIT_STD = 0.02


@dataclass(frozen=True)
class BlockConfig:
    d_model: int
    n_heads: int
    n_layers: int

    def __post_init__(self):
        if self.d_model < 1 or self.n_heads < 1 or self.n_layers < 0:
            raise ParameterError(f"bad block config {self}")
        if self.d_model % self.n_heads != 0:
            raise ParameterError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads


@dataclass
class LayerParams:
    """One block's tensors; all d x d projections unless noted."""

    ln1: np.ndarray        # (d,) pre-time-mixing norm gain
    ln2: np.ndarray        # (d,) pre-channel-mixing norm gain
    mu_time: np.ndarray    # (d,) token-shift mix, kept in [0, 1]
    mu_channel: np.ndarray
    w_r: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_w: np.ndarray        # decay projection; decay = exp(-exp(w_w x + b_w))
    b_w: np.ndarray        # (d,)
    w_a: np.ndarray        # in-context rate projection; rate = sigmoid(.)
    w_g: np.ndarray        # output gate projection; gate = sigmoid(.)
    ln_wkv: np.ndarray     # (d,) per-head norm gain on the wkv read
    w_out: np.ndarray
    w_up: np.ndarray       # (4d, d)
    w_down: np.ndarray     # (d, 4d)


@dataclass
class BlockParams:
    cfg: BlockConfig
    layers: list[LayerParams]


class RecurrentState:
    """Per-layer wkv matrices plus token-shift buffers; size depends only on
    the block config, never on how many tokens have been consumed."""

    def __init__(self, wkv: np.ndarray, shift_time: np.ndarray, shift_channel: np.ndarray):
        self.wkv = wkv                    # (L, H, N, N)
        self.shift_time = shift_time      # (L, d)
        self.shift_channel = shift_channel

    @classmethod
    def zeros(cls, cfg: BlockConfig, dtype=np.float32) -> "RecurrentState":
        l, h, n, d = cfg.n_layers, cfg.n_heads, cfg.head_dim, cfg.d_model
        return cls(
            np.zeros((l, h, n, n), dtype=dtype),
            np.zeros((l, d), dtype=dtype),
            np.zeros((l, d), dtype=dtype),
        )

    def clone(self) -> "RecurrentState":
        return RecurrentState(self.wkv.copy(), self.shift_time.copy(), self.shift_channel.copy())

    @property
    def nbytes(self) -> int:
        return self.wkv.nbytes + self.shift_time.nbytes + self.shift_channel.nbytes

    def allclose(self, other: "RecurrentState") -> bool:
        return (
            np.array_equal(self.wkv, other.wkv)
            and np.array_equal(self.shift_time, other.shift_time)
            and np.array_equal(self.shift_channel, other.shift_channel)
        )


def init_block_params(cfg: BlockConfig, rng: SeededRng, dtype=np.float32) -> BlockParams:
    d = cfg.d_model

    def proj(key_rng):
        return key_rng.normal((d, d), std=INIT_STD, dtype=dtype)

    layers = []
    for l in range(cfg.n_layers):
        r = rng.child(100 + l)
        layers.append(LayerParams(
            ln1=np.ones(d, dtype=dtype),
            ln2=np.ones(d, dtype=dtype),
            mu_time=np.full(d, 0.5, dtype=dtype),
            mu_channel=np.full(d, 0.5, dtype=dtype),
            w_r=r.child(0).normal((d, d), std=INIT_STD, dtype=dtype),
            w_k=r.child(1).normal((d, d), std=INIT_STD, dtype=dtype),
            w_v=r.child(2).normal((d, d), std=INIT_STD, dtype=dtype),
            w_w=r.child(3).normal((d, d), std=INIT_STD, dtype=dtype),
            b_w=np.full(d, DECAY_BIAS_INIT, dtype=dtype),
            w_a=r.child(4).normal((d, d), std=INIT_STD, dtype=dtype),
            w_g=r.child(5).normal((d, d), std=INIT_STD, dtype=dtype),
            ln_wkv=np.ones(d, dtype=dtype),
            w_out=r.child(6).normal((d, d), std=INIT_STD, dtype=dtype),
            w_up=r.child(7).normal((CHANNEL_EXPANSION * d, d), std=INIT_STD, dtype=dtype),
            w_down=r.child(8).normal((d, CHANNEL_EXPANSION * d), std=INIT_STD, dtype=dtype),
        ))
    return BlockParams(cfg, layers)


def named_layer_params(params: BlockParams):
    """Fixed iteration order shared by checkpoints, optimizer state, and grads."""
    for l, layer in enumerate(params.layers):
        for name in ("ln1", "mu_time", "w_r", "w_k", "w_v", "w_w", "b_w", "w_a",
                     "w_g", "ln_wkv", "w_out", "ln2", "mu_channel", "w_up", "w_down"):
            yield f"layers.{l}.{name}", getattr(layer, name)


def cast_block_params(params: BlockParams, dtype) -> BlockParams:
    layers = [LayerParams(**{k: np.asarray(v, dtype=dtype) for k, v in vars(layer).items()})
              for layer in params.layers]
    return BlockParams(params.cfg, layers)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _rms(x: np.ndarray, gain: np.ndarray):
    sigma = np.sqrt(np.mean(np.square(x, dtype=np.float64)) + NORM_EPS)
    sigma = x.dtype.type(sigma)
    return x * gain / sigma, sigma


def token_shift(x_t: np.ndarray, prev: np.ndarray, mu: np.ndarray) -> np.ndarray:
    """mu * x_t + (1 - mu) * prev; the caller rolls prev := x_t afterwards."""
    x_t = np.asarray(x_t)
    prev = np.asarray(prev)
    mu = np.asarray(mu)
    if not (x_t.shape == prev.shape == mu.shape):
        raise ShapeError(f"token_shift length mismatch: {x_t.shape}, {prev.shape}, {mu.shape}")
    return mu * x_t + (1.0 - mu) * prev


def wkv_step(state: np.ndarray, w: np.ndarray, k: np.ndarray, v: np.ndarray,
             a: np.ndarray, r: np.ndarray):
    """One head's state update and read; validates the gate ranges.

    Returns (y, S'). Out-of-range w or a indicates a bug upstream of the
    bounded activations and raises rather than propagating garbage.
    """
    n = state.shape[0]
    if state.shape != (n, n) or any(vec.shape != (n,) for vec in (w, k, v, a, r)):
        raise ShapeError(f"wkv_step operands disagree with head_dim {n}")
    # closed bounds: float32 saturation of the bounded activations can pin
    # w or a to exactly 0 or 1; anything beyond signals an upstream bug
    if np.any(w < 0) or np.any(w > 1):
        raise ParameterError("decay w outside [0, 1]")
    if np.any(a < 0) or np.any(a > 1):
        raise ParameterError("in-context rate a outside [0, 1]")
    kn = np.asarray(np.sqrt(np.sum(np.square(k, dtype=np.float64))), dtype=k.dtype)
    khat = k / (kn + k.dtype.type(KEY_EPS))
    s_new = state * w[None, :] - np.outer(state @ khat, a * khat) + np.outer(v, k)
    return s_new @ r, s_new


def _wkv_update_heads(s: np.ndarray, wh, kh, vh, ah, rh):
    """Batched-head fast path of wkv_step (no validation). s is (H, N, N)."""
    kn = np.sqrt(np.sum(np.square(kh, dtype=np.float64), axis=1)).astype(kh.dtype)
    khat = kh / (kn + kh.dtype.type(KEY_EPS))[:, None]
    b = np.einsum("hij,hj->hi", s, khat)
    s_new = s * wh[:, None, :] - b[:, :, None] * (ah * khat)[:, None, :] + vh[:, :, None] * kh[:, None, :]
    y = np.einsum("hij,hj->hi", s_new, rh)
    return y, s_new, khat, kn, b


class StackCache:
    """Per-step activations recorded by a cached forward, stacked on demand."""

    def __init__(self, cfg: BlockConfig, state: RecurrentState):
        self.cfg = cfg
        self.steps = 0
        self.s0 = state.wkv.copy()
        self.shift0_time = state.shift_time.copy()
        self.shift0_channel = state.shift_channel.copy()
        self.per_layer = [dict((k, []) for k in (
            "x1", "sig1", "xn1", "r", "k", "v", "w", "e_u", "a", "gsig",
            "khat", "knorm", "b_read", "s_post", "y", "sigy",
            "x2", "sig2", "xn2", "pre")) for _ in range(cfg.n_layers)]
        self._frozen = None

    def push(self, l: int, **vals):
        buf = self.per_layer[l]
        for k, v in vals.items():
            buf[k].append(v)

    def frozen(self):
        if self._frozen is None:
            self._frozen = [
                {k: np.stack(v) if v else None for k, v in buf.items()}
                for buf in self.per_layer
            ]
        return self._frozen


def _time_mix_step(cfg: BlockConfig, layer: LayerParams, xn, state: RecurrentState,
                   l: int, cache: StackCache | None):
    h, n = cfg.n_heads, cfg.head_dim
    shifted = layer.mu_time * xn + (1.0 - layer.mu_time) * state.shift_time[l]
    state.shift_time[l] = xn
    r = layer.w_r @ shifted
    k = layer.w_k @ shifted
    v = layer.w_v @ shifted
    e_u = np.exp(layer.w_w @ shifted + layer.b_w)
    w = np.exp(-e_u)
    a = _sigmoid(layer.w_a @ shifted)
    gsig = _sigmoid(layer.w_g @ shifted)

    y, s_new, khat, kn, b = _wkv_update_heads(
        state.wkv[l], w.reshape(h, n), k.reshape(h, n), v.reshape(h, n),
        a.reshape(h, n), r.reshape(h, n))
    state.wkv[l] = s_new

    sigy = np.sqrt(np.mean(np.square(y, dtype=np.float64), axis=1) + NORM_EPS).astype(y.dtype)
    ynorm = (y / sigy[:, None]).reshape(-1) * layer.ln_wkv
    out = layer.w_out @ (gsig * ynorm)

    if cache is not None:
        cache.push(l, r=r, k=k, v=v, w=w, e_u=e_u, a=a, gsig=gsig,
                   khat=khat, knorm=kn, b_read=b, s_post=s_new, y=y, sigy=sigy)
    return out


def _channel_mix_step(cfg: BlockConfig, layer: LayerParams, xn, state: RecurrentState,
                      l: int, cache: StackCache | None):
    shifted = layer.mu_channel * xn + (1.0 - layer.mu_channel) * state.shift_channel[l]
    state.shift_channel[l] = xn
    pre = layer.w_up @ shifted
    hidden = np.square(np.maximum(pre, 0))
    out = layer.w_down @ hidden
    if cache is not None:
        cache.push(l, pre=pre)
    return out


def time_mixing_forward(cfg: BlockConfig, layer: LayerParams, x_t: np.ndarray,
                        state: RecurrentState, l: int = 0) -> np.ndarray:
    """Single time-mixing sublayer on an already-normed input; updates state."""
    if x_t.shape != (cfg.d_model,):
        raise ShapeError(f"expected input of length {cfg.d_model}, got {x_t.shape}")
    return _time_mix_step(cfg, layer, x_t, state, l, None)


def channel_mixing_forward(cfg: BlockConfig, layer: LayerParams, x_t: np.ndarray,
                           state: RecurrentState, l: int = 0) -> np.ndarray:
    if x_t.shape != (cfg.d_model,):
        raise ShapeError(f"expected input of length {cfg.d_model}, got {x_t.shape}")
    return _channel_mix_step(cfg, layer, x_t, state, l, None)


def stack_step(params: BlockParams, x_t: np.ndarray, state: RecurrentState,
               cache: StackCache | None = None) -> np.ndarray:
    """Advance every block one position; returns the residual stream."""
    cfg = params.cfg
    if x_t.shape != (cfg.d_model,):
        raise ShapeError(f"expected input of length {cfg.d_model}, got {x_t.shape}")
    x = x_t
    for l, layer in enumerate(params.layers):
        xn1, sig1 = _rms(x, layer.ln1)
        if cache is not None:
            cache.push(l, x1=x, sig1=sig1, xn1=xn1)
        x = x + _time_mix_step(cfg, layer, xn1, state, l, cache)
        xn2, sig2 = _rms(x, layer.ln2)
        if cache is not None:
            cache.push(l, x2=x, sig2=sig2, xn2=xn2)
        x = x + _channel_mix_step(cfg, layer, xn2, state, l, cache)
    if cache is not None:
        cache.steps += 1
    return x


def stack_sequence(params: BlockParams, xs: np.ndarray, state: RecurrentState,
                   cache: StackCache | None = None) -> np.ndarray:
    """Fold stack_step over rows of xs; bitwise equal to stepping manually."""
    xs = np.asarray(xs)
    if xs.ndim != 2 or xs.shape[1] != params.cfg.d_model:
        raise ShapeError(f"expected T x {params.cfg.d_model} input, got {xs.shape}")
    if xs.shape[0] < 1:
        raise ShapeError("stack_sequence needs at least one position")
    hs = np.empty_like(xs)
    for t in range(xs.shape[0]):
        hs[t] = stack_step(params, xs[t], state, cache)
    return hs


def stack_sequence_batched(params: BlockParams, xs: np.ndarray, state: RecurrentState,
                           cache: StackCache | None = None) -> np.ndarray:
    """Training-path forward: identical math to the stack_step fold, but the
    projections run as one matmul per layer over all positions, so only the
    state recurrence itself loops. Agrees with the fold to rounding (the two
    sum in different orders); the fold remains the bitwise reference.
    """
    cfg = params.cfg
    xs = np.asarray(xs)
    if xs.ndim != 2 or xs.shape[1] != cfg.d_model:
        raise ShapeError(f"expected T x {cfg.d_model} input, got {xs.shape}")
    if xs.shape[0] < 1:
        raise ShapeError("stack_sequence_batched needs at least one position")
    t_len = xs.shape[0]
    h, n = cfg.n_heads, cfg.head_dim
    frozen = [] if cache is not None else None
    x = xs

    for l, layer in enumerate(params.layers):
        x1 = x
        sig1 = np.sqrt(np.mean(np.square(x, dtype=np.float64), axis=1) + NORM_EPS).astype(x.dtype)
        xn1 = x * layer.ln1 / sig1[:, None]
        sh = layer.mu_time * xn1 + (1.0 - layer.mu_time) * np.vstack(
            [state.shift_time[l][None, :], xn1[:-1]])
        r = sh @ layer.w_r.T
        k = sh @ layer.w_k.T
        v = sh @ layer.w_v.T
        e_u = np.exp(sh @ layer.w_w.T + layer.b_w)
        w = np.exp(-e_u)
        a = _sigmoid(sh @ layer.w_a.T)
        gsig = _sigmoid(sh @ layer.w_g.T)

        from ._scan import wkv_scan_forward

        kh = np.ascontiguousarray(k.reshape(t_len, h, n))
        vh = np.ascontiguousarray(v.reshape(t_len, h, n))
        rh = np.ascontiguousarray(r.reshape(t_len, h, n))
        wh = np.ascontiguousarray(w.reshape(t_len, h, n))
        ah = np.ascontiguousarray(a.reshape(t_len, h, n))
        kn = np.sqrt(np.sum(np.square(kh, dtype=np.float64), axis=2)).astype(k.dtype)
        khat = kh / (kn + kh.dtype.type(KEY_EPS))[:, :, None]

        s = state.wkv[l].copy()
        y = np.empty_like(kh)
        b_read = np.empty_like(kh)
        n_post = t_len if cache is not None else 0
        s_post = np.empty((n_post, h, n, n), dtype=x.dtype)
        wkv_scan_forward(s, wh, kh, vh, ah, khat, rh, y, b_read, s_post)
        state.wkv[l] = s
        state.shift_time[l] = xn1[-1]

        sigy = np.sqrt(np.mean(np.square(y, dtype=np.float64), axis=2) + NORM_EPS).astype(y.dtype)
        ynorm = (y / sigy[:, :, None]).reshape(t_len, -1) * layer.ln_wkv
        x2 = x + (gsig * ynorm) @ layer.w_out.T

        sig2 = np.sqrt(np.mean(np.square(x2, dtype=np.float64), axis=1) + NORM_EPS).astype(x.dtype)
        xn2 = x2 * layer.ln2 / sig2[:, None]
        sh2 = layer.mu_channel * xn2 + (1.0 - layer.mu_channel) * np.vstack(
            [state.shift_channel[l][None, :], xn2[:-1]])
        pre = sh2 @ layer.w_up.T
        x = x2 + np.square(np.maximum(pre, 0)) @ layer.w_down.T
        state.shift_channel[l] = xn2[-1]

        if cache is not None:
            frozen.append(dict(x1=x1, sig1=sig1, xn1=xn1, r=r, k=k, v=v, w=w, e_u=e_u,
                               a=a, gsig=gsig, khat=khat, knorm=kn, b_read=b_read,
                               s_post=s_post, y=y, sigy=sigy, x2=x2, sig2=sig2,
                               xn2=xn2, pre=pre))

    if cache is not None:
        cache.steps = t_len
        cache._frozen = frozen
    return x


def _rms_backward(dxn, x, sigma, gain):
    # xn = x * gain / sigma with sigma = sqrt(mean(x^2) + eps), sigma shape (T,)
    d = x.shape[-1]
    q = dxn * gain
    dot = np.sum(q * x, axis=-1, keepdims=True)
    dx = q / sigma[:, None] - x * dot / (d * sigma[:, None] ** 3)
    dgain = np.sum(dxn * x / sigma[:, None], axis=0)
    return dx, dgain


def _shift_backward(dshifted, xn, shift0, mu):
    # shifted[t] = mu * xn[t] + (1-mu) * xn_prev[t], xn_prev = [shift0, xn[:-1]]
    xn_prev = np.vstack([shift0[None, :], xn[:-1]])
    dxn = mu * dshifted
    dxn[:-1] += (1.0 - mu) * dshifted[1:]
    dmu = np.sum(dshifted * (xn - xn_prev), axis=0)
    return dxn, dmu, xn_prev


def _wkv_backward(cfg: BlockConfig, lc: dict, s0_l: np.ndarray, dy: np.ndarray):
    """Reverse-time sweep of the state recurrence for one layer.

    dy is (T, H, N). Returns gradients for r, k, v, w, a as (T, H, N).
    """
    from ._scan import wkv_scan_backward

    t_len = dy.shape[0]
    h, n = cfg.n_heads, cfg.head_dim
    w = np.ascontiguousarray(lc["w"].reshape(t_len, h, n))
    k = np.ascontiguousarray(lc["k"].reshape(t_len, h, n))
    v = np.ascontiguousarray(lc["v"].reshape(t_len, h, n))
    a = np.ascontiguousarray(lc["a"].reshape(t_len, h, n))
    r = np.ascontiguousarray(lc["r"].reshape(t_len, h, n))
    khat, kn, b_read, s_post = lc["khat"], lc["knorm"], lc["b_read"], lc["s_post"]

    dr = np.zeros_like(r)
    dk = np.zeros_like(k)
    dv = np.zeros_like(v)
    dw = np.zeros_like(w)
    da = np.zeros_like(a)
    wkv_scan_backward(s0_l, s_post, w, k, v, a, khat, kn, b_read, r,
                      np.ascontiguousarray(dy), dr, dk, dv, dw, da)
    return dr, dk, dv, dw, da


def stack_backward(params: BlockParams, cache: StackCache, dh: np.ndarray):
    """Gradients of a cached forward run.

    Returns (dX, grads) with grads keyed like named_layer_params. Two
    sigmoid-derivative identities are used throughout: d sigmoid = s(1-s),
    and for decay w = exp(-e_u): dw_raw = -dw * w * e_u.
    """
    if cache is None or cache.steps == 0:
        raise UsageError("stack_backward needs the cache of a forward run")
    cfg = params.cfg
    dh = np.asarray(dh)
    if dh.shape != (cache.steps, cfg.d_model):
        raise ShapeError(f"dH must be {cache.steps} x {cfg.d_model}, got {dh.shape}")
    t_len = cache.steps
    h, n = cfg.n_heads, cfg.head_dim
    frozen = cache.frozen()
    grads: dict[str, np.ndarray] = {}

    dx = dh.copy()
    for l in range(cfg.n_layers - 1, -1, -1):
        layer = params.layers[l]
        lc = frozen[l]

        # channel sublayer: x_out = x2 + W_down relu(W_up shifted)^2
        pre = lc["pre"]
        hid_r = np.maximum(pre, 0)
        dhid = dx @ layer.w_down
        grads[f"layers.{l}.w_down"] = dx.T @ np.square(hid_r)
        dpre = dhid * 2.0 * hid_r
        shifted2 = layer.mu_channel * lc["xn2"] + (1.0 - layer.mu_channel) * np.vstack(
            [cache.shift0_channel[l][None, :], lc["xn2"][:-1]])
        grads[f"layers.{l}.w_up"] = dpre.T @ shifted2
        dshifted2 = dpre @ layer.w_up
        dxn2, dmu_c, _ = _shift_backward(dshifted2, lc["xn2"], cache.shift0_channel[l], layer.mu_channel)
        grads[f"layers.{l}.mu_channel"] = dmu_c
        dx2, dln2 = _rms_backward(dxn2, lc["x2"], lc["sig2"], layer.ln2)
        grads[f"layers.{l}.ln2"] = dln2
        dx = dx + dx2

        # time sublayer: x2 = x1 + W_out (gate * ynorm)
        y, sigy, gsig = lc["y"], lc["sigy"], lc["gsig"]
        ynorm_flat = (y / sigy[:, :, None]).reshape(t_len, -1) * layer.ln_wkv
        gated = gsig * ynorm_flat
        dgated = dx @ layer.w_out
        grads[f"layers.{l}.w_out"] = dx.T @ gated
        dynorm_flat = dgated * gsig
        dgsig = dgated * ynorm_flat
        # per-head rms norm: ynorm = y * gain / sigy
        q = (dynorm_flat * layer.ln_wkv).reshape(t_len, h, n)
        grads[f"layers.{l}.ln_wkv"] = np.sum(dynorm_flat * (y / sigy[:, :, None]).reshape(t_len, -1), axis=0)
        dot = np.sum(q * y, axis=2, keepdims=True)
        dy = q / sigy[:, :, None] - y * dot / (n * sigy[:, :, None] ** 3)

        dr, dk, dv, dw, da = _wkv_backward(cfg, lc, cache.s0[l], dy)

        dwraw = -(dw.reshape(t_len, -1)) * lc["w"] * lc["e_u"]
        daraw = da.reshape(t_len, -1) * lc["a"] * (1.0 - lc["a"])
        dgraw = dgsig * gsig * (1.0 - gsig)
        dr_flat = dr.reshape(t_len, -1)
        dk_flat = dk.reshape(t_len, -1)
        dv_flat = dv.reshape(t_len, -1)

        shifted1 = layer.mu_time * lc["xn1"] + (1.0 - layer.mu_time) * np.vstack(
            [cache.shift0_time[l][None, :], lc["xn1"][:-1]])
        dshifted1 = np.zeros_like(shifted1)
        for name, dproj, weight in (
            ("w_r", dr_flat, layer.w_r), ("w_k", dk_flat, layer.w_k),
            ("w_v", dv_flat, layer.w_v), ("w_w", dwraw, layer.w_w),
            ("w_a", daraw, layer.w_a), ("w_g", dgraw, layer.w_g),
        ):
            grads[f"layers.{l}.{name}"] = dproj.T @ shifted1
            dshifted1 += dproj @ weight
        grads[f"layers.{l}.b_w"] = np.sum(dwraw, axis=0)

        dxn1, dmu_t, _ = _shift_backward(dshifted1, lc["xn1"], cache.shift0_time[l], layer.mu_time)
        grads[f"layers.{l}.mu_time"] = dmu_t
        dx1, dln1 = _rms_backward(dxn1, lc["x1"], lc["sig1"], layer.ln1)
        grads[f"layers.{l}.ln1"] = dln1
        dx = dx + dx1

    return dx, grads
