"""Speech-token language model around the recurrent stack: embedding tables,
packed-sequence assembly, audio head, and the teacher-forced masked loss.

A packed example is one embedding sequence in the fixed segment order

    sos | text | task | prompt_audio | target_audio

Supervision sits on exactly the positions whose next emitted token is a
target-audio token or the speech EOS: the last pre-target position predicts
target[0], each target position predicts its successor, and the final target
position predicts EOS. Only speech logits exist; text is never predicted.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .codec import TokenSequence
from .errors import DataError, ShapeError, TrainingError
from .numerics import SeededRng, cross_entropy, softmax
from .rwkv import (BlockConfig, BlockParams, RecurrentState, StackCache,
                   cast_block_params, init_block_params, named_layer_params,
                   stack_backward, stack_sequence, stack_sequence_batched)

SEGMENT_ORDER = ("sos", "text", "task", "prompt_audio", "target_audio")
EMBED_STD = 0.02


@dataclass
class LmParams:
    text_embedding: np.ndarray    # (text_vocab, d)
    speech_embedding: np.ndarray  # (speech_vocab, d)
    sos_embedding: np.ndarray     # (d,)
    task_id_embedding: np.ndarray
    audio_head: np.ndarray        # (d, speech_vocab + 1); the +1 column block is EOS


@dataclass
class TrainingExample:
    text: TokenSequence
    prompt_speech: TokenSequence
    target_speech: TokenSequence


@dataclass
class PackedInput:
    embeddings: np.ndarray              # (L, d)
    segments: list[tuple[str, int, int]]  # fixed order, partition of [0, L)
    loss_mask: np.ndarray               # (L,) bool
    targets: np.ndarray                 # (L,) int64, valid where mask is true
    text_ids: np.ndarray
    prompt_ids: np.ndarray
    target_ids: np.ndarray

    @property
    def length(self) -> int:
        return self.embeddings.shape[0]

    def span(self, name: str) -> tuple[int, int]:
        for seg, lo, hi in self.segments:
            if seg == name:
                return lo, hi
        raise KeyError(name)


@dataclass
class TtsModel:
    cfg: BlockConfig
    text_vocab: int
    speech_vocab: int
    lm: LmParams
    blocks: BlockParams

    @property
    def eos_id(self) -> int:
        return self.speech_vocab

    def fresh_state(self, dtype=None) -> RecurrentState:
        return RecurrentState.zeros(self.cfg, dtype or self.lm.audio_head.dtype)

    def named_params(self):
        lm = self.lm
        yield "text_embedding", lm.text_embedding
        yield "speech_embedding", lm.speech_embedding
        yield "sos_embedding", lm.sos_embedding
        yield "task_id_embedding", lm.task_id_embedding
        yield "audio_head", lm.audio_head
        yield from named_layer_params(self.blocks)

    def param_dict(self) -> dict[str, np.ndarray]:
        return dict(self.named_params())

    def n_params(self) -> int:
        return sum(int(a.size) for _, a in self.named_params())

    def clamp_invariants(self) -> None:
        for layer in self.blocks.layers:
            np.clip(layer.mu_time, 0.0, 1.0, out=layer.mu_time)
            np.clip(layer.mu_channel, 0.0, 1.0, out=layer.mu_channel)

    def astype(self, dtype) -> "TtsModel":
        lm = LmParams(**{k: np.asarray(v, dtype=dtype) for k, v in vars(self.lm).items()})
        return TtsModel(self.cfg, self.text_vocab, self.speech_vocab, lm,
                        cast_block_params(self.blocks, dtype))


def init_tts_model(cfg: BlockConfig, text_vocab: int, speech_vocab: int, seed: int,
                   dtype=np.float32) -> TtsModel:
    rng = SeededRng(seed)
    d = cfg.d_model
    lm = LmParams(
        text_embedding=rng.child(1).normal((text_vocab, d), std=EMBED_STD, dtype=dtype),
        speech_embedding=rng.child(2).normal((speech_vocab, d), std=EMBED_STD, dtype=dtype),
        sos_embedding=rng.child(3).normal(d, std=EMBED_STD, dtype=dtype),
        task_id_embedding=rng.child(4).normal(d, std=EMBED_STD, dtype=dtype),
        audio_head=rng.child(5).normal((d, speech_vocab + 1), std=EMBED_STD, dtype=dtype),
    )
    blocks = init_block_params(cfg, rng.child(6), dtype=dtype)
    return TtsModel(cfg, text_vocab, speech_vocab, lm, blocks)


def _check_ids(ids, vocab: int, what: str) -> np.ndarray:
    arr = np.asarray(ids, dtype=np.int64)
    if arr.size and (arr.min() < 0 or arr.max() >= vocab):
        bad = arr[(arr < 0) | (arr >= vocab)][0]
        raise DataError(f"{what} id {bad} out of range for vocabulary of {vocab}")
    return arr


def prefix_embeddings(lm: LmParams, text_ids: np.ndarray, prompt_ids: np.ndarray) -> np.ndarray:
    """Rows for sos | text | task | prompt_audio."""
    d = lm.sos_embedding.shape[0]
    rows = [lm.sos_embedding.reshape(1, d)]
    if text_ids.size:
        rows.append(lm.text_embedding[text_ids])
    rows.append(lm.task_id_embedding.reshape(1, d))
    if prompt_ids.size:
        rows.append(lm.speech_embedding[prompt_ids])
    return np.concatenate(rows, axis=0)


def assemble(example: TrainingExample, lm: LmParams) -> PackedInput:
    """Pack one example into embeddings, segment spans, loss mask, targets."""
    if example.text.role != "text" or example.prompt_speech.role != "prompt_speech" \
            or example.target_speech.role != "target_speech":
        raise DataError("example token sequences carry the wrong roles")
    text_vocab = lm.text_embedding.shape[0]
    speech_vocab = lm.speech_embedding.shape[0]
    eos = speech_vocab
    text_ids = _check_ids(example.text.ids, text_vocab, "text")
    prompt_ids = _check_ids(example.prompt_speech.ids, speech_vocab, "prompt speech")
    target_ids = _check_ids(example.target_speech.ids, speech_vocab, "target speech")
    if target_ids.size == 0:
        raise DataError("target speech must be non-empty")

    nt, npr, ntg = len(text_ids), len(prompt_ids), len(target_ids)
    length = 2 + nt + npr + ntg
    segments = [
        ("sos", 0, 1),
        ("text", 1, 1 + nt),
        ("task", 1 + nt, 2 + nt),
        ("prompt_audio", 2 + nt, 2 + nt + npr),
        ("target_audio", 2 + nt + npr, length),
    ]
    emb = np.concatenate([
        prefix_embeddings(lm, text_ids, prompt_ids),
        lm.speech_embedding[target_ids],
    ], axis=0)

    # position p0 + i predicts target[i]; the last target position predicts EOS
    p0 = 2 + nt + npr - 1
    mask = np.zeros(length, dtype=bool)
    mask[p0:] = True
    targets = np.zeros(length, dtype=np.int64)
    targets[p0:length - 1] = target_ids
    targets[length - 1] = eos
    return PackedInput(emb, segments, mask, targets, text_ids, prompt_ids, target_ids)


@dataclass
class LmCache:
    packed: PackedInput
    stack: StackCache
    hidden: np.ndarray  # (L, d)


def lm_forward(model: TtsModel, packed: PackedInput, state: RecurrentState | None = None,
               want_cache: bool = False, batched: bool | None = None):
    """Hidden states through the stack, then per-position speech logits.

    The plain call folds stack_step (the bitwise reference); caching (and
    ``batched=True``) takes the time-batched training path, which agrees to
    rounding.
    """
    if packed.embeddings.shape[1] != model.cfg.d_model:
        raise ShapeError(f"packed width {packed.embeddings.shape[1]} != d_model {model.cfg.d_model}")
    if state is None:
        state = model.fresh_state(packed.embeddings.dtype)
    if batched is None:
        batched = want_cache
    cache = StackCache(model.cfg, state) if want_cache else None
    runner = stack_sequence_batched if batched else stack_sequence
    hidden = runner(model.blocks, packed.embeddings, state, cache)
    logits = hidden @ model.lm.audio_head
    if want_cache:
        return logits, LmCache(packed, cache, hidden)
    return logits


def lm_loss(logits: np.ndarray, packed: PackedInput) -> tuple[float, int]:
    return cross_entropy(logits, packed.targets, packed.loss_mask)


def loss_logit_grad(logits: np.ndarray, packed: PackedInput) -> np.ndarray:
    """d(mean masked NLL)/d logits: (softmax - onehot) / masked_count on
    masked rows, zero elsewhere."""
    mask = packed.loss_mask
    count = int(mask.sum())
    dlogits = np.zeros_like(logits)
    rows = np.flatnonzero(mask)
    probs = softmax(logits[rows])
    probs[np.arange(rows.size), packed.targets[rows]] -= 1.0
    dlogits[rows] = probs / logits.dtype.type(count)
    return dlogits


def lm_backward(model: TtsModel, cache: LmCache, dlogits: np.ndarray) -> dict[str, np.ndarray]:
    """Full gradient set; embedding rows of tokens absent from the example
    stay exactly zero."""
    lm, packed = model.lm, cache.packed
    grads: dict[str, np.ndarray] = {}
    grads["audio_head"] = cache.hidden.T @ dlogits
    dh = dlogits @ lm.audio_head.T
    dx, block_grads = stack_backward(model.blocks, cache.stack, dh)
    grads.update(block_grads)

    grads["text_embedding"] = np.zeros_like(lm.text_embedding)
    grads["speech_embedding"] = np.zeros_like(lm.speech_embedding)
    lo, hi = packed.span("text")
    np.add.at(grads["text_embedding"], packed.text_ids, dx[lo:hi])
    lo, hi = packed.span("prompt_audio")
    np.add.at(grads["speech_embedding"], packed.prompt_ids, dx[lo:hi])
    lo, hi = packed.span("target_audio")
    np.add.at(grads["speech_embedding"], packed.target_ids, dx[lo:hi])
    grads["sos_embedding"] = dx[packed.span("sos")[0]].copy()
    grads["task_id_embedding"] = dx[packed.span("task")[0]].copy()
    return grads


def example_loss_and_grads(model: TtsModel, example: TrainingExample):
    """One teacher-forced pass: returns (loss, masked_count, grads).

    A non-finite loss aborts before the backward pass rather than producing
    garbage gradients.
    """
    packed = assemble(example, model.lm)
    logits, cache = lm_forward(model, packed, want_cache=True)
    loss, count = lm_loss(logits, packed)
    if not np.isfinite(loss):
        raise TrainingError(f"non-finite loss {loss!r}")
    grads = lm_backward(model, cache, loss_logit_grad(logits, packed))
    return loss, count, grads
