import wave

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from voxrnn.codec import (Codebook, DEFAULT_SPECIALS, HOP_SAMPLES, SpecialTokens, TokenSequence,
                          audio_decode, audio_encode, default_codebook, load_codebook,
                          render_waveform, save_codebook, synth_reference_audio, text_decode,
                          text_encode, write_wav)
from voxrnn.errors import DataError, ParameterError
from voxrnn.numerics import SeededRng


# --- specials -------------------------------------------------------------

def test_special_ids_distinct_and_reserved():
    sp = DEFAULT_SPECIALS
    ids = {sp.sos_text, sp.task_id, sp.end_of_prompt, sp.eos_speech, *sp.reserved_control}
    assert len(ids) == 4 + len(sp.reserved_control)
    assert len(sp.reserved_control) >= 8
    assert sp.end_of_prompt < sp.text_vocab_size       # text-vocabulary resident
    assert sp.eos_speech == 1024                       # one past the last codeword


def test_specials_collision_rejected():
    with pytest.raises(ParameterError):
        SpecialTokens(sos_text=1, task_id=1)


# --- text tokenizer ----------------------------------------------------------

def test_text_encode_empty():
    assert text_encode("", instruction=False).ids == []
    assert text_encode("", instruction=True).ids == [DEFAULT_SPECIALS.end_of_prompt]


def test_text_roundtrip_hand_case():
    seq = text_encode("hi 你好", instruction=True)
    text, instr = text_decode(seq)
    assert text == "hi 你好" and instr is True


def test_text_decode_rejects_non_byte_ids():
    with pytest.raises(DataError):
        text_decode([DEFAULT_SPECIALS.sos_text])


@given(st.text(max_size=64))
@settings(max_examples=300, deadline=None)
def test_text_roundtrip_arbitrary_utf8(s):
    for instr in (False, True):
        text, flag = text_decode(text_encode(s, instruction=instr))
        assert text == s and flag is instr


# --- codebook & quantizer -------------------------------------------------------

def test_default_codebook_shape_and_determinism(book):
    assert book.centers.shape == (1024, 16)
    again = default_codebook()
    assert np.array_equal(book.centers, again.centers)
    assert book.centers.min() >= -1.0 and book.centers.max() <= 1.0


def test_codebook_rejects_duplicate_centers():
    with pytest.raises(DataError):
        Codebook(np.zeros((3, 2), np.float32))


def test_encode_exact_center_hits_its_id(book):
    frames = book.centers[[7, 700, 0]]
    assert audio_encode(frames, book).ids == [7, 700, 0]


def test_encode_nearest_neighbor_hand_case():
    book = Codebook(np.array([[0.0, 0.0], [1.0, 1.0]], np.float32))
    assert audio_encode(np.array([[0.9, 0.8]], np.float32), book).ids == [1]


def test_encode_tie_breaks_to_lowest_id():
    book = Codebook(np.array([[0.0, 0.0], [1.0, 1.0], [1.0, 0.0]], np.float32))
    # (0.5, 0.5) is equidistant from all three centers
    assert audio_encode(np.array([[0.5, 0.5]], np.float32), book).ids == [0]


def test_encode_against_exhaustive_distance_oracle(book):
    frames = SeededRng(31).uniform(-1.0, 1.0, (200, book.dim))
    got = audio_encode(frames, book).ids
    centers = book.centers.astype(np.float64)
    for t in range(200):
        d = np.sum((centers - frames[t].astype(np.float64)) ** 2, axis=1)
        assert got[t] == int(np.argmin(d))


def test_encode_dim_mismatch(book):
    with pytest.raises(Exception):
        audio_encode(np.zeros((2, book.dim + 1), np.float32), book)


def test_decode_empty_and_roundtrip_every_codeword(book):
    assert audio_decode([], book).shape == (0, book.dim)
    all_ids = list(range(book.n_codes))
    assert audio_encode(audio_decode(all_ids, book), book).ids == all_ids


def test_decode_rejects_out_of_range_and_eos(book):
    with pytest.raises(DataError):
        audio_decode([book.n_codes], book)        # the EOS logit-space id
    with pytest.raises(DataError):
        audio_decode([-1], book)


@given(st.integers(0, 2**32), st.integers(1, 64))
@settings(max_examples=60, deadline=None)
def test_quantize_decode_quantize_idempotent(seed, n):
    book = default_codebook(n_codes=64, dim=4)
    ids = SeededRng(seed).integers(0, 64, n).tolist()
    assert audio_encode(audio_decode(ids, book), book).ids == ids


# --- synthetic reference audio ----------------------------------------------------

def test_synth_reference_deterministic():
    a = synth_reference_audio(99, 32)
    b = synth_reference_audio(99, 32)
    assert np.array_equal(a, b)
    assert a.shape == (32, 16)
    assert a.min() >= -1.0 and a.max() <= 1.0


def test_synth_reference_different_seeds_give_different_tokens(book):
    seen = []
    for seed in range(100):
        seen.append(tuple(audio_encode(synth_reference_audio(seed, 8), book).ids))
    assert len(set(seen)) == len(seen)


def test_synth_token_histogram_covers_half_the_codebook(book):
    frames = synth_reference_audio(5, 10_000)
    ids = audio_encode(frames, book).ids
    assert len(set(ids)) >= book.n_codes // 2


def test_synth_rejects_zero_frames():
    with pytest.raises(ParameterError):
        synth_reference_audio(0, 0)


# --- waveform & codebook files ------------------------------------------------------

def test_waveform_sample_count_and_riff(book, tmp_path):
    ids = audio_encode(synth_reference_audio(1, 12), book).ids
    samples = render_waveform(ids, book)
    assert samples.shape == (12 * HOP_SAMPLES,)
    path = tmp_path / "demo.wav"
    write_wav(path, samples)
    with wave.open(str(path), "rb") as w:
        assert w.getnchannels() == 1
        assert w.getsampwidth() == 2
        assert w.getframerate() == 16000
        assert w.getnframes() == 12 * HOP_SAMPLES
    assert path.read_bytes()[:4] == b"RIFF"


def test_codebook_file_roundtrip(tmp_path, book):
    path = tmp_path / "book.vxcb"
    save_codebook(book, path)
    raw = path.read_bytes()
    assert raw[:4] == b"VXCB"
    assert int.from_bytes(raw[4:8], "little") == 1
    assert int.from_bytes(raw[8:12], "little") == book.n_codes
    assert int.from_bytes(raw[12:16], "little") == book.dim
    loaded = load_codebook(path)
    assert np.array_equal(loaded.centers, book.centers)


def test_codebook_file_rejects_garbage(tmp_path):
    path = tmp_path / "bad.vxcb"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(DataError):
        load_codebook(path)
    path.write_bytes(b"VXCB" + (1).to_bytes(4, "little") + (4).to_bytes(4, "little")
                     + (2).to_bytes(4, "little") + b"\x00" * 7)
    with pytest.raises(DataError):
        load_codebook(path)
