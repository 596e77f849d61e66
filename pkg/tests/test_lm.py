import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import tiny_model
from voxrnn.codec import TokenSequence
from voxrnn.errors import DataError, EmptyLossError
from voxrnn.lm import (SEGMENT_ORDER, TrainingExample, assemble, init_tts_model, lm_forward,
                       lm_loss)
from voxrnn.numerics import SeededRng
from voxrnn.rwkv import BlockConfig


def _example(text, prompt, target):
    return TrainingExample(TokenSequence("text", text),
                           TokenSequence("prompt_speech", prompt),
                           TokenSequence("target_speech", target))


def _random_example(rng: SeededRng, text_vocab=267, speech_vocab=32):
    nt = int(rng.child(0).integers(0, 6))
    npr = int(rng.child(1).integers(0, 5))
    ntg = int(rng.child(2).integers(1, 7))
    return _example(rng.child(3).integers(0, text_vocab, nt).tolist(),
                    rng.child(4).integers(0, speech_vocab, npr).tolist(),
                    rng.child(5).integers(0, speech_vocab, ntg).tolist())


# --- assembly layout ---------------------------------------------------------

def test_layout_golden_case():
    model = tiny_model(speech_vocab=256)
    packed = assemble(_example([5, 6], [100], [200, 201]), model.lm)
    assert packed.length == 7
    sizes = [hi - lo for _, lo, hi in packed.segments]
    assert sizes == [1, 2, 1, 1, 2]
    assert [s for s, _, _ in packed.segments] == list(SEGMENT_ORDER)
    assert int(packed.loss_mask.sum()) == 3
    assert np.flatnonzero(packed.loss_mask).tolist() == [4, 5, 6]
    assert packed.targets[packed.loss_mask].tolist() == [200, 201, 256]


def test_layout_minimal_case():
    model = tiny_model()
    packed = assemble(_example([], [], [9]), model.lm)
    assert packed.length == 3
    assert np.flatnonzero(packed.loss_mask).tolist() == [1, 2]   # task position, target position
    assert packed.targets[packed.loss_mask].tolist() == [9, model.eos_id]


def test_assembled_rows_are_the_right_embeddings():
    model = tiny_model()
    ex = _example([2, 3], [4], [5, 6])
    packed = assemble(ex, model.lm)
    lm = model.lm
    assert np.array_equal(packed.embeddings[0], lm.sos_embedding)
    assert np.array_equal(packed.embeddings[1], lm.text_embedding[2])
    assert np.array_equal(packed.embeddings[3], lm.task_id_embedding)
    assert np.array_equal(packed.embeddings[4], lm.speech_embedding[4])
    assert np.array_equal(packed.embeddings[6], lm.speech_embedding[6])


def test_assemble_inversion_oracle_over_random_examples():
    model = tiny_model()
    text_rows = {arr.tobytes(): i for i, arr in enumerate(model.lm.text_embedding)}
    speech_rows = {arr.tobytes(): i for i, arr in enumerate(model.lm.speech_embedding)}
    for seed in range(100):
        ex = _random_example(SeededRng(seed))
        packed = assemble(ex, model.lm)
        lo, hi = packed.span("text")
        assert [text_rows[packed.embeddings[i].tobytes()] for i in range(lo, hi)] == ex.text.ids
        lo, hi = packed.span("prompt_audio")
        assert [speech_rows[packed.embeddings[i].tobytes()] for i in range(lo, hi)] == ex.prompt_speech.ids
        lo, hi = packed.span("target_audio")
        assert [speech_rows[packed.embeddings[i].tobytes()] for i in range(lo, hi)] == ex.target_speech.ids


def test_assemble_rejects_bad_inputs():
    model = tiny_model(speech_vocab=32)
    with pytest.raises(DataError):
        assemble(_example([9999], [], [1]), model.lm)                          # unknown text id
    with pytest.raises(DataError):
        assemble(_example([], [32], [1]), model.lm)                            # prompt id out of range
    with pytest.raises(DataError):
        assemble(_example([], [], []), model.lm)                               # empty target
    with pytest.raises(DataError):
        assemble(_example([], [], [32]), model.lm)                             # eos not embeddable


@given(st.integers(0, 2**32))
@settings(max_examples=60, deadline=None)
def test_segments_partition_and_mask_count(seed):
    model = tiny_model()
    ex = _random_example(SeededRng(seed))
    packed = assemble(ex, model.lm)
    # contiguous partition of [0, L) in fixed order
    cursor = 0
    for (name, lo, hi), expect in zip(packed.segments, SEGMENT_ORDER):
        assert name == expect and lo == cursor and hi >= lo
        cursor = hi
    assert cursor == packed.length
    assert int(packed.loss_mask.sum()) == len(ex.target_speech.ids) + 1


# --- forward and loss -----------------------------------------------------------

def test_zero_audio_head_gives_uniform_loss():
    model = tiny_model(speech_vocab=32)
    model.lm.audio_head[...] = 0.0
    packed = assemble(_example([1, 2], [3], [4, 5, 6]), model.lm)
    logits = lm_forward(model, packed)
    assert np.array_equal(logits, np.zeros_like(logits))
    loss, count = lm_loss(logits, packed)
    assert count == 4
    assert abs(loss - math.log(33)) < 1e-6


def test_prefix_causality_is_exact():
    model = tiny_model()
    packed = assemble(_example([1, 2, 3], [4, 5], [6, 7, 8]), model.lm)
    full = lm_forward(model, packed)
    import dataclasses
    for t in (1, 4, packed.length - 1):
        trunc = dataclasses.replace(packed, embeddings=packed.embeddings[:t])
        short = lm_forward(model, trunc)
        assert np.array_equal(full[:t], short)


def test_lm_forward_matches_manual_composition_bitwise():
    from voxrnn.rwkv import stack_sequence
    model = tiny_model()
    packed = assemble(_example([9, 10], [11], [12, 13]), model.lm)
    got = lm_forward(model, packed)
    state = model.fresh_state()
    hidden = stack_sequence(model.blocks, packed.embeddings, state)
    manual = hidden @ model.lm.audio_head
    assert np.array_equal(got, manual)


def test_saturated_correct_logits_give_tiny_loss():
    model = tiny_model(speech_vocab=32)
    packed = assemble(_example([1], [2], [3, 4]), model.lm)
    logits = np.zeros((packed.length, 33), np.float32)
    rows = np.flatnonzero(packed.loss_mask)
    logits[rows, packed.targets[rows]] = 1e4
    loss, _ = lm_loss(logits, packed)
    assert loss < 1e-3


def test_loss_bit_identical_under_masked_out_target_permutation():
    model = tiny_model()
    rng = SeededRng(50)
    for seed in range(100):
        ex = _random_example(SeededRng(seed))
        packed = assemble(ex, model.lm)
        logits = lm_forward(model, packed)
        base, _ = lm_loss(logits, packed)
        scrambled = packed.targets.copy()
        out_rows = np.flatnonzero(~packed.loss_mask)
        scrambled[out_rows] = rng.integers(0, 10**9, out_rows.size)
        import dataclasses
        permuted = dataclasses.replace(packed, targets=scrambled)
        again, _ = lm_loss(logits, permuted)
        assert base == again


def test_loss_needs_masked_positions():
    model = tiny_model()
    packed = assemble(_example([1], [], [2]), model.lm)
    packed.loss_mask[...] = False
    with pytest.raises(EmptyLossError):
        lm_loss(lm_forward(model, packed), packed)


def test_prompt_tokens_actually_condition_target_logits():
    model = tiny_model()
    p1 = assemble(_example([1, 2], [3, 4], [5, 6]), model.lm)
    p2 = assemble(_example([1, 2], [7, 8], [5, 6]), model.lm)
    lo, hi = p1.span("target_audio")
    l1 = lm_forward(model, p1)[lo:hi]
    l2 = lm_forward(model, p2)[lo:hi]
    assert np.abs(l1 - l2).max() > 0


def test_editing_a_target_token_never_changes_earlier_logits():
    model = tiny_model()
    ex1 = _example([1], [2], [5, 6, 7, 8])
    ex2 = _example([1], [2], [5, 6, 9, 8])     # edit target index 2
    p1, p2 = assemble(ex1, model.lm), assemble(ex2, model.lm)
    l1, l2 = lm_forward(model, p1), lm_forward(model, p2)
    lo, _ = p1.span("target_audio")
    edited_pos = lo + 2
    assert np.array_equal(l1[:edited_pos], l2[:edited_pos])
    assert not np.array_equal(l1[edited_pos], l2[edited_pos])
