"""Decode-efficiency benchmark: per-token latency and auxiliary memory of
the recurrent stack versus the causal-attention baseline at matched sizes.

Per length T, both models are prefilled with T random speech tokens and the
latency of one further decode step (mixing stack + audio head + greedy pick)
is measured as the median over repeated trials at that exact context length.
The attention cache is rolled back between trials so every trial sees
context T.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .baseline import KvCache, attn_step, init_attn_params
from .errors import ParameterError
from .lm import TtsModel, init_tts_model
from .numerics import SeededRng
from .rwkv import BlockConfig, stack_step

BENCH_WARMUP = 4
BENCH_REPS = 32


@dataclass
class BenchRow:
    seq_len: int
    recur_us_per_tok: float
    attn_us_per_tok: float
    state_bytes: int
    cache_bytes: int


@dataclass
class BenchReport:
    rows: list[BenchRow]

    HEADER = "T\trecur_us_per_tok\tattn_us_per_tok\tstate_bytes\tcache_bytes"

    def format_table(self) -> str:
        lines = [self.HEADER]
        for r in self.rows:
            lines.append(f"{r.seq_len}\t{r.recur_us_per_tok:.2f}\t{r.attn_us_per_tok:.2f}"
                         f"\t{r.state_bytes}\t{r.cache_bytes}")
        return "\n".join(lines)

    def check_invariants(self) -> None:
        states = {r.state_bytes for r in self.rows}
        if len(states) != 1:
            raise AssertionError(f"recurrent state bytes vary across lengths: {states}")
        caches = [r.cache_bytes for r in self.rows]
        if any(b >= a for b, a in zip(caches, caches[1:])):
            raise AssertionError(f"attention cache bytes not strictly increasing: {caches}")


def _median_step_us(step_fn, warmup: int, reps: int) -> float:
    for _ in range(warmup):
        step_fn()
    times = []
    for _ in range(reps):
        t0 = time.perf_counter_ns()
        step_fn()
        times.append(time.perf_counter_ns() - t0)
    return float(np.median(times)) / 1e3


def run_bench(cfg: BlockConfig, lengths: list[int], speech_vocab: int = 1024,
              seed: int = 0, reps: int = BENCH_REPS, warmup: int = BENCH_WARMUP) -> BenchReport:
    if sorted(lengths) != list(lengths) or len(set(lengths)) != len(lengths):
        raise ParameterError(f"lengths must be strictly ascending, got {lengths}")
    if min(lengths) < 1:
        raise ParameterError("lengths must be >= 1")
    model: TtsModel = init_tts_model(cfg, text_vocab=267, speech_vocab=speech_vocab, seed=seed)
    attn = init_attn_params(cfg, SeededRng(seed).child(9))
    emb = model.lm.speech_embedding
    head = model.lm.audio_head
    feed = SeededRng(seed).child(10).integers(0, speech_vocab, shape=max(lengths) + 1)

    rows = []
    for t_len in lengths:
        # recurrent: prefill T tokens, then time steady-state decode steps
        state = model.fresh_state()
        hidden = emb[feed[0]]
        for i in range(t_len):
            hidden = stack_step(model.blocks, emb[feed[i]], state)

        def recur_once():
            nonlocal hidden
            logits = hidden @ head
            tok = int(np.argmax(logits)) % speech_vocab
            hidden = stack_step(model.blocks, emb[tok], state)

        recur_us = _median_step_us(recur_once, warmup, reps)
        state_bytes = state.nbytes

        # attention: prefill T tokens, then time single steps at context T
        cache = KvCache(cfg)
        ah = emb[feed[0]]
        for i in range(t_len):
            ah = attn_step(attn, emb[feed[i]], cache)
        cache_bytes = cache.nbytes
        snap = cache.snapshot()

        def attn_once():
            cache.restore(snap)
            logits = ah @ head
            tok = int(np.argmax(logits)) % speech_vocab
            attn_step(attn, emb[tok], cache)

        attn_us = _median_step_us(attn_once, warmup, reps)
        rows.append(BenchRow(t_len, recur_us, attn_us, state_bytes, cache_bytes))

    report = BenchReport(rows)
    report.check_invariants()
    return report
