"""Single-process teacher-forced training: bias-corrected adaptive-moment
updates with global-norm clipping, gradient accumulation over packed
examples, and byte-exact checkpoints that resume bitwise.

Everything consumed per step (example order, prompt-drop draws) is a pure
function of (seed, step), so resuming from a checkpoint needs nothing beyond
the step counter stored in its header.
"""

from __future__ import annotations

import struct
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import CorpusRecord, DEFAULT_PROMPT_DROP, apply_prompt_drop, record_to_example
from .errors import ConfigError, DataError, ParameterError, TrainingError
from .lm import TtsModel, assemble, example_loss_and_grads, init_tts_model, lm_forward, lm_loss
from .numerics import SeededRng
from .rwkv import BlockConfig

CHECKPOINT_MAGIC = b"VXCK"


@dataclass
class TrainConfig:
    steps: int
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8
    grad_clip: float = 1.0
    accumulation: int = 1
    seed: int = 0
    prompt_drop: float = DEFAULT_PROMPT_DROP
    warmup: int = 0              # linear lr warmup steps; off by default
    checkpoint_every: int = 0    # 0 = final checkpoint only

    def __post_init__(self):
        if self.steps < 0 or self.accumulation < 1:
            raise ParameterError(f"bad steps/accumulation in {self}")
        if not (self.lr >= 0 and self.eps > 0 and self.grad_clip > 0):
            raise ParameterError(f"lr/eps/grad_clip out of range in {self}")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ParameterError(f"betas must lie in (0, 1), got {self.beta1}, {self.beta2}")
        if not 0.0 <= self.prompt_drop <= 1.0:
            raise ParameterError(f"prompt_drop must be in [0, 1], got {self.prompt_drop}")


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]

    @classmethod
    def zeros_like(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls({k: np.zeros_like(a) for k, a in params.items()},
                   {k: np.zeros_like(a) for k, a in params.items()})


def global_grad_norm(grads: dict[str, np.ndarray]) -> float:
    total = 0.0
    for g in grads.values():
        total += float(np.sum(np.square(g, dtype=np.float64)))
    return float(np.sqrt(total))


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """In-place global-norm clip; returns the pre-clip norm."""
    norm = global_grad_norm(grads)
    if norm > max_norm:
        scale = np.float32(max_norm / norm)
        for g in grads.values():
            g *= scale
    return norm


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              moments: AdamState, config: TrainConfig, t: int) -> None:
    """Bias-corrected update at step index t >= 1; clips grads first."""
    if t < 1:
        raise ParameterError(f"step index must be >= 1, got {t}")
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise TrainingError(f"non-finite gradient in tensor {name!r}")
    clip_gradients(grads, config.grad_clip)
    lr = config.lr
    if config.warmup > 0:
        lr = lr * min(1.0, t / config.warmup)
    b1, b2 = config.beta1, config.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = grads[name]
        m = moments.m[name]
        v = moments.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        mhat = m / p.dtype.type(bc1)
        vhat = v / p.dtype.type(bc2)
        p -= p.dtype.type(lr) * mhat / (np.sqrt(vhat) + p.dtype.type(config.eps))


@dataclass
class StepRecord:
    step: int
    loss: float
    masked_count: int
    wall_ms: float

    def format_line(self) -> str:
        return f"{self.step}\t{self.loss:.6f}\t{self.masked_count}\t{self.wall_ms:.3f}"


def save_checkpoint(path, model: TtsModel, moments: AdamState, step: int, seed: int) -> None:
    """Header + parameter tensors + both moment sets, fixed order, f32 LE."""
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<IIIIII", 1, model.cfg.d_model, model.cfg.n_heads,
                            model.cfg.n_layers, model.text_vocab, model.speech_vocab))
        f.write(struct.pack("<QQ", step, seed & (2**64 - 1)))
        names = [n for n, _ in model.named_params()]
        params = model.param_dict()
        for n in names:
            f.write(params[n].astype("<f4", copy=False).tobytes())
        for n in names:
            f.write(moments.m[n].astype("<f4", copy=False).tobytes())
        for n in names:
            f.write(moments.v[n].astype("<f4", copy=False).tobytes())


def load_checkpoint(path) -> tuple[TtsModel, AdamState, int, int]:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise DataError(f"{path}: bad checkpoint magic {raw[:4]!r}")
    version, d_model, n_heads, n_layers, text_vocab, speech_vocab = struct.unpack_from("<IIIIII", raw, 4)
    if version != 1:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    step, seed = struct.unpack_from("<QQ", raw, 28)
    cfg = BlockConfig(d_model, n_heads, n_layers)
    model = init_tts_model(cfg, text_vocab, speech_vocab, seed=0)
    offset = 44

    def take(shape):
        nonlocal offset
        n = int(np.prod(shape))
        arr = np.frombuffer(raw, dtype="<f4", count=n, offset=offset).reshape(shape).copy()
        offset += 4 * n
        return arr

    params = model.param_dict()
    for name, p in params.items():
        p[...] = take(p.shape)
    moments = AdamState.zeros_like(params)
    for name, p in params.items():
        moments.m[name] = take(p.shape)
    for name, p in params.items():
        moments.v[name] = take(p.shape)
    if offset != len(raw):
        raise DataError(f"{path}: {len(raw) - offset} trailing bytes")
    return model, moments, step, seed


def _example_for_step(records: list[CorpusRecord], config: TrainConfig, step: int, slot: int):
    """Deterministic record choice + augmentation for (step, slot)."""
    idx = ((step - 1) * config.accumulation + slot) % len(records)
    record = records[idx]
    rng = SeededRng(config.seed).child(step, slot)
    record = apply_prompt_drop(record, config.prompt_drop, rng)
    return record, idx


def train(records: list[CorpusRecord], config: TrainConfig, model: TtsModel | None = None,
          checkpoint_path=None, resume_from=None, log_file=None,
          on_step=None) -> tuple[list[StepRecord], TtsModel, AdamState]:
    """Run config.steps optimizer steps; returns (curve, model, moments).

    ``resume_from`` restarts from a saved step counter and reproduces the
    original run's remaining steps bitwise.
    """
    if not records:
        raise DataError("training corpus is empty")
    start_step = 0
    if resume_from is not None:
        model, moments, start_step, seed = load_checkpoint(resume_from)
        if seed != config.seed & (2**64 - 1):
            raise ConfigError(f"checkpoint seed {seed} != config seed {config.seed}")
    else:
        if model is None:
            raise ParameterError("train needs a model or a checkpoint to resume from")
        moments = AdamState.zeros_like(model.param_dict())

    params = model.param_dict()
    curve: list[StepRecord] = []
    log = open(log_file, "a", encoding="utf-8") if log_file else None
    try:
        for step in range(start_step + 1, config.steps + 1):
            t0 = time.perf_counter()
            acc: dict[str, np.ndarray] | None = None
            losses = []
            counts = 0
            for slot in range(config.accumulation):
                record, _ = _example_for_step(records, config, step, slot)
                try:
                    loss, count, grads = example_loss_and_grads(model, record_to_example(record))
                except (TrainingError, DataError, FloatingPointError) as exc:
                    # keep the class, attach which record blew up at which step
                    cls = type(exc) if isinstance(exc, (TrainingError, DataError)) else TrainingError
                    raise cls(f"{record.provenance}: step {step}: {exc}") from exc
                losses.append(loss)
                counts += count
                if acc is None:
                    acc = grads
                else:
                    for k in acc:
                        acc[k] += grads[k]
            if config.accumulation > 1:
                inv = np.float32(1.0 / config.accumulation)
                for k in acc:
                    acc[k] *= inv
            adam_step(params, acc, moments, config, step)
            model.clamp_invariants()
            rec = StepRecord(step, float(np.mean(losses)), counts, (time.perf_counter() - t0) * 1e3)
            curve.append(rec)
            if log:
                log.write(rec.format_line() + "\n")
            if on_step:
                on_step(rec)
            if checkpoint_path and config.checkpoint_every and step % config.checkpoint_every == 0:
                save_checkpoint(checkpoint_path, model, moments, step, config.seed)
        if checkpoint_path:
            save_checkpoint(checkpoint_path, model, moments, config.steps, config.seed)
    finally:
        if log:
            log.close()
    return curve, model, moments


@dataclass
class EvalResult:
    mean_loss: float
    accuracy: float
    masked_count: int


def evaluate_teacher_forced(model: TtsModel, records: list[CorpusRecord]) -> EvalResult:
    """Pooled masked NLL and next-token argmax accuracy over the corpus."""
    total_nll = 0.0
    total = 0
    correct = 0
    for record in records:
        example = record_to_example(record)
        for seq, vocab in ((example.text, model.text_vocab),
                           (example.prompt_speech, model.speech_vocab),
                           (example.target_speech, model.speech_vocab)):
            if seq.ids and max(seq.ids) >= vocab:
                raise ConfigError(
                    f"{record.provenance}: id {max(seq.ids)} exceeds model vocabulary {vocab}")
        packed = assemble(example, model.lm)
        logits = lm_forward(model, packed, batched=True)
        loss, count = lm_loss(logits, packed)
        total_nll += loss * count
        total += count
        rows = np.flatnonzero(packed.loss_mask)
        correct += int(np.sum(np.argmax(logits[rows], axis=1) == packed.targets[rows]))
    return EvalResult(total_nll / total, correct / total, total)
