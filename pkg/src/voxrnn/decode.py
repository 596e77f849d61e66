"""Zero-shot synthesis loop: prefill the packed prompt, then sample speech
tokens one at a time with constant-size state until EOS or the token budget.

The first sampled token is conditioned on the prefill's final hidden state;
each subsequent step feeds the embedding of the token just emitted. An
optional consumer receives every id as soon as it is emitted, which is the
streaming hook.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .codec import TokenSequence
from .errors import ConsumerError, ParameterError
from .lm import TtsModel, prefix_embeddings, _check_ids
from .numerics import SeededRng
from .rwkv import RecurrentState, stack_sequence, stack_step

STRATEGIES = ("greedy", "top_k", "top_p")


@dataclass(frozen=True)
class GenerationConfig:
    strategy: str = "greedy"
    temperature: float = 1.0
    max_tokens: int = 256
    min_tokens: int = 1          # EOS is suppressed before this many tokens
    top_k: int = 1
    top_p: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ParameterError(f"unknown strategy {self.strategy!r}")
        if not self.temperature > 0:
            raise ParameterError(f"temperature must be > 0, got {self.temperature}")
        if self.top_k < 1:
            raise ParameterError(f"top_k must be >= 1, got {self.top_k}")
        if not 0 < self.top_p <= 1:
            raise ParameterError(f"top_p must be in (0, 1], got {self.top_p}")
        if self.min_tokens > self.max_tokens:
            raise ParameterError(
                f"min_tokens {self.min_tokens} > max_tokens {self.max_tokens}")
        if self.min_tokens < 0:
            raise ParameterError(f"min_tokens must be >= 0, got {self.min_tokens}")


@dataclass
class GenerationResult:
    speech_ids: list[int]
    stop_reason: str                 # "eos" | "max_tokens"
    per_token_latency: list[float]   # seconds per emitted token
    state_bytes: int


def prefill(model: TtsModel, text: TokenSequence, prompt_speech: TokenSequence,
            state: RecurrentState | None = None):
    """Run sos | text | task | prompt_audio through the stack.

    Returns (state, last_hidden); bitwise identical to stepping the same
    rows manually.
    """
    text_ids = _check_ids(text.ids, model.text_vocab, "text")
    prompt_ids = _check_ids(prompt_speech.ids, model.speech_vocab, "prompt speech")
    rows = prefix_embeddings(model.lm, text_ids, prompt_ids)
    if state is None:
        state = model.fresh_state(rows.dtype)
    hidden = stack_sequence(model.blocks, rows, state)
    return state, hidden[-1]


def sample(logits: np.ndarray, config: GenerationConfig, rng: SeededRng,
           eos_id: int | None = None, n_emitted: int | None = None) -> int:
    """Pick one id. Greedy breaks ties to the lowest id; top-k and top-p
    renormalize the truncated temperature softmax. EOS is masked out while
    fewer than min_tokens ids have been emitted."""
    logits = np.asarray(logits, dtype=np.float64)
    if eos_id is not None and n_emitted is not None and n_emitted < config.min_tokens:
        logits = logits.copy()
        logits[eos_id] = -np.inf
    if config.strategy == "greedy":
        return int(np.argmax(logits))
    # stable sort on negated logits: descending value, ascending id on ties
    order = np.argsort(-logits, kind="stable")
    if config.strategy == "top_k":
        keep = order[:config.top_k]
    else:
        z = (logits[order] - logits[order[0]]) / config.temperature
        probs = np.exp(z)
        probs /= probs.sum()
        cut = int(np.searchsorted(np.cumsum(probs), config.top_p)) + 1
        keep = order[:min(cut, order.size)]
    z = (logits[keep] - logits[keep].max()) / config.temperature
    probs = np.exp(z)
    probs /= probs.sum()
    u = rng.random()
    return int(keep[min(np.searchsorted(np.cumsum(probs), u, side="right"), keep.size - 1)])


def generate(model: TtsModel, text: TokenSequence, prompt_speech: TokenSequence,
             config: GenerationConfig, on_token=None) -> GenerationResult:
    """Autoregressive decode; halts within max_tokens steps by construction."""
    state, hidden = prefill(model, text, prompt_speech)
    rng = SeededRng(config.seed)
    eos = model.eos_id
    ids: list[int] = []
    latency: list[float] = []
    state_bytes = state.nbytes
    stop_reason = "max_tokens"
    for _ in range(config.max_tokens):
        t0 = time.perf_counter()
        logits = hidden @ model.lm.audio_head
        tok = sample(logits, config, rng, eos_id=eos, n_emitted=len(ids))
        if tok == eos:
            stop_reason = "eos"
            break
        ids.append(tok)
        if on_token is not None:
            try:
                on_token(tok)
            except Exception as exc:
                partial = GenerationResult(ids, "max_tokens", latency, state_bytes)
                raise ConsumerError(f"token consumer failed on id {tok}: {exc}",
                                    partial=partial) from exc
        hidden = stack_step(model.blocks, model.lm.speech_embedding[tok], state)
        latency.append(time.perf_counter() - t0)
        assert state.nbytes == state_bytes  # O(1) state is the whole point
    return GenerationResult(ids, stop_reason, latency, state_bytes)
