"""Dense numeric kernels: matrices as numpy arrays, seeded RNG, softmax,
masked cross-entropy, RMS normalization, and the central-difference gradient
oracle used by every backward-pass test.

Conventions: matrices are row-major 2-D ``float32`` ndarrays, vectors 1-D.
Reductions (sums, norms, losses) accumulate in 64-bit before the result is
cast back to the working precision.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import EmptyLossError, DataError, OracleError, ParameterError, ShapeError

RNG_ALGORITHM = "philox4x64"


class SeededRng:
    """Deterministic random stream: identical seeds give identical draws on
    every platform. Child streams are derived by spawn keys, never by
    consuming the parent stream."""

    def __init__(self, seed: int, algorithm: str = RNG_ALGORITHM, _key: tuple[int, ...] = ()):
        if algorithm != RNG_ALGORITHM:
            raise ParameterError(f"unsupported rng algorithm {algorithm!r}, only {RNG_ALGORITHM!r} is available")
        self.seed = int(seed)
        self.algorithm = algorithm
        self.key = tuple(int(k) for k in _key)
        self._ss = np.random.SeedSequence(entropy=self.seed, spawn_key=self.key)
        self.gen = np.random.Generator(np.random.Philox(self._ss))

    def child(self, *keys: int) -> "SeededRng":
        """Independent stream keyed by (seed, parent key, *keys); stable
        across runs and independent of how much the parent has drawn."""
        return SeededRng(self.seed, self.algorithm, _key=self.key + keys)

    def derive_seed(self, *keys: int) -> int:
        """A 64-bit seed derived statelessly from (seed, parent key, *keys)."""
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=self.key + tuple(int(k) for k in keys))
        return int(ss.generate_state(1, np.uint64)[0])

    def normal(self, shape, std: float = 1.0, dtype=np.float32) -> np.ndarray:
        return (self.gen.standard_normal(shape) * std).astype(dtype)

    def uniform(self, low: float, high: float, shape=None, dtype=np.float32) -> np.ndarray:
        return self.gen.uniform(low, high, shape).astype(dtype)

    def integers(self, low: int, high: int, shape=None) -> np.ndarray:
        return self.gen.integers(low, high, size=shape)

    def random(self) -> float:
        return float(self.gen.random())


def as_matrix(data, rows: int | None = None, cols: int | None = None) -> np.ndarray:
    """Coerce to a 2-D float32 C-order array, checking shape and finiteness."""
    m = np.ascontiguousarray(data, dtype=np.float32)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got ndim={m.ndim}")
    if rows is not None and m.shape[0] != rows:
        raise ShapeError(f"expected {rows} rows, got {m.shape[0]}")
    if cols is not None and m.shape[1] != cols:
        raise ShapeError(f"expected {cols} cols, got {m.shape[1]}")
    if not np.isfinite(m).all():
        raise DataError("matrix contains non-finite entries")
    return m


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with explicit conformance checking."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return a @ b


def softmax(x: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """Temperature softmax with max-subtraction; sums accumulate in float64."""
    if not temperature > 0:
        raise ParameterError(f"temperature must be > 0, got {temperature}")
    x = np.asarray(x)
    if not np.isfinite(x).all():
        raise DataError("softmax input contains non-finite entries")
    z = (x - x.max(axis=-1, keepdims=True)) / x.dtype.type(temperature)
    e = np.exp(z)
    total = np.sum(e, axis=-1, keepdims=True, dtype=np.float64)
    return (e / total).astype(x.dtype)


def log_softmax_row(row: np.ndarray) -> np.ndarray:
    m = row.max()
    shifted = row.astype(np.float64) - float(m)
    lse = np.log(np.sum(np.exp(shifted)))
    return shifted - lse


def cross_entropy(logits: np.ndarray, targets: np.ndarray, mask: np.ndarray) -> tuple[float, int]:
    """Mean negative log-likelihood over masked-in rows.

    ``targets`` and ``mask`` have one entry per logits row; target ids at
    masked-out rows are never read. Returns ``(loss, masked_count)``.
    """
    logits = np.asarray(logits)
    targets = np.asarray(targets)
    mask = np.asarray(mask, dtype=bool)
    if logits.ndim != 2:
        raise ShapeError(f"logits must be T x V, got {logits.shape}")
    t, v = logits.shape
    if targets.shape != (t,) or mask.shape != (t,):
        raise ShapeError(f"targets/mask must have length {t}, got {targets.shape} and {mask.shape}")
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        raise EmptyLossError("cross_entropy over zero masked-in positions")
    picked = targets[idx]
    if picked.min() < 0 or picked.max() >= v:
        bad = picked[(picked < 0) | (picked >= v)][0]
        raise DataError(f"target id {bad} out of range for vocabulary of {v}")
    rows = logits[idx].astype(np.float64)
    m = rows.max(axis=1, keepdims=True)
    lse = np.log(np.sum(np.exp(rows - m), axis=1, dtype=np.float64)) + m[:, 0]
    nll = lse - rows[np.arange(idx.size), picked]
    return float(np.mean(nll)), int(idx.size)


def finite_diff_grad(f: Callable[[np.ndarray], float], x: np.ndarray, h: float) -> np.ndarray:
    """Central-difference gradient of a scalar function, probed coordinate-wise."""
    if not h > 0:
        raise ParameterError(f"step h must be > 0, got {h}")
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(x))
        flat[i] = orig - h
        fm = float(f(x))
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise OracleError(f"non-finite objective at probe coordinate {i}")
        out[i] = (fp - fm) / (2.0 * h)
    return grad


def rms_norm(x: np.ndarray, gain: np.ndarray, eps: float) -> np.ndarray:
    """x * gain / sqrt(mean(x^2) + eps), mean accumulated in float64."""
    if not eps > 0:
        raise ParameterError(f"eps must be > 0, got {eps}")
    x = np.asarray(x)
    gain = np.asarray(gain)
    if x.shape != gain.shape:
        raise ShapeError(f"rms_norm length mismatch: {x.shape} vs {gain.shape}")
    ms = np.mean(np.square(x, dtype=np.float64)) + eps
    return (x * gain / np.sqrt(ms)).astype(x.dtype)
