"""Deterministic tokenizer stand-ins: a byte-level text tokenizer with
reserved special ids, and a fixed-codebook audio quantizer with a sketchy
sinusoid-bank waveform renderer. Nothing here is learned; the codebook is a
seeded low-discrepancy point set so every artifact is reproducible from code.
"""

from __future__ import annotations

import struct
import wave
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc

from .errors import DataError, ParameterError, ShapeError
from .numerics import SeededRng

END_OF_PROMPT_SURFACE = "<|endofprompt|>"
DEFAULT_SPEECH_VOCAB = 1024
DEFAULT_FRAME_DIM = 16
CODEBOOK_SEED = 0x5EEDC0DE
CODEBOOK_MAGIC = b"VXCB"
HOP_SAMPLES = 160
SAMPLE_RATE = 16000

ROLES = ("text", "prompt_speech", "target_speech")


@dataclass(frozen=True)
class SpecialTokens:
    """Reserved ids. Text specials sit below the byte range of the text
    vocabulary; eos_speech is one past the last codeword and exists only in
    the audio head's logit space, never as an input token."""

    sos_text: int = 0
    task_id: int = 1
    end_of_prompt: int = 2
    reserved_control: tuple[int, ...] = tuple(range(3, 11))  # laughter/breath/dialect slots
    eos_speech: int = DEFAULT_SPEECH_VOCAB

    def __post_init__(self):
        ids = [self.sos_text, self.task_id, self.end_of_prompt, *self.reserved_control, self.eos_speech]
        if len(set(ids)) != len(ids):
            raise ParameterError(f"special token ids collide: {ids}")
        if len(self.reserved_control) < 8:
            raise ParameterError("at least 8 reserved control ids are required")

    @property
    def byte_offset(self) -> int:
        return 3 + len(self.reserved_control)

    @property
    def text_vocab_size(self) -> int:
        return self.byte_offset + 256


DEFAULT_SPECIALS = SpecialTokens()


@dataclass
class TokenSequence:
    """Id stream tagged with its role; the lingua franca between codec,
    data prep, LM, and decoder."""

    role: str
    ids: list[int]

    def __post_init__(self):
        if self.role not in ROLES:
            raise ParameterError(f"unknown token role {self.role!r}")
        self.ids = [int(i) for i in self.ids]
        if any(i < 0 for i in self.ids):
            raise DataError("token ids must be non-negative")

    def __len__(self) -> int:
        return len(self.ids)


def text_encode(s: str, instruction: bool = False, specials: SpecialTokens = DEFAULT_SPECIALS) -> TokenSequence:
    """Byte-level ids offset past the specials; instruction appends the
    end-of-prompt marker."""
    ids = [specials.byte_offset + b for b in s.encode("utf-8")]
    if instruction:
        ids.append(specials.end_of_prompt)
    return TokenSequence("text", ids)


def text_decode(seq: TokenSequence | list[int], specials: SpecialTokens = DEFAULT_SPECIALS) -> tuple[str, bool]:
    """Inverse of text_encode; returns (text, instruction_flag)."""
    ids = list(seq.ids if isinstance(seq, TokenSequence) else seq)
    instruction = False
    if ids and ids[-1] == specials.end_of_prompt:
        instruction = True
        ids = ids[:-1]
    data = bytearray()
    for i in ids:
        b = i - specials.byte_offset
        if not 0 <= b < 256:
            raise DataError(f"text id {i} is not a byte token")
        data.append(b)
    return data.decode("utf-8"), instruction


@dataclass
class Codebook:
    centers: np.ndarray  # (n_codes, dim) float32

    def __post_init__(self):
        self.centers = np.ascontiguousarray(self.centers, dtype=np.float32)
        if self.centers.ndim != 2:
            raise ShapeError(f"codebook centers must be 2-D, got {self.centers.shape}")
        if not np.isfinite(self.centers).all():
            raise DataError("codebook centers contain non-finite values")
        if np.unique(self.centers, axis=0).shape[0] != self.centers.shape[0]:
            raise DataError("codebook centers are not pairwise distinct")

    @property
    def n_codes(self) -> int:
        return self.centers.shape[0]

    @property
    def dim(self) -> int:
        return self.centers.shape[1]

    @property
    def eos_id(self) -> int:
        return self.n_codes


def default_codebook(n_codes: int = DEFAULT_SPEECH_VOCAB, dim: int = DEFAULT_FRAME_DIM,
                     seed: int = CODEBOOK_SEED) -> Codebook:
    """Scrambled-Sobol centers scaled to [-1, 1]^dim; fixed seed, not learned."""
    sampler = qmc.Sobol(d=dim, scramble=True, seed=seed)
    pts = sampler.random(n_codes)
    return Codebook(pts.astype(np.float32) * 2.0 - 1.0)


def audio_encode(frames: np.ndarray, book: Codebook, role: str = "target_speech") -> TokenSequence:
    """Nearest-center quantization by L2; ties break to the lowest id."""
    frames = np.asarray(frames, dtype=np.float32)
    if frames.ndim != 2 or frames.shape[1] != book.dim:
        raise ShapeError(f"frames must be T x {book.dim}, got {frames.shape}")
    centers = book.centers.astype(np.float64)
    c_sq = np.sum(centers * centers, axis=1)
    ids = np.empty(frames.shape[0], dtype=np.int64)
    chunk = 4096
    for lo in range(0, frames.shape[0], chunk):
        f = frames[lo:lo + chunk].astype(np.float64)
        d2 = np.sum(f * f, axis=1)[:, None] - 2.0 * (f @ centers.T) + c_sq[None, :]
        ids[lo:lo + chunk] = np.argmin(d2, axis=1)  # argmin returns the first (lowest) index
    return TokenSequence(role, ids.tolist())


def audio_decode(ids, book: Codebook) -> np.ndarray:
    """ids -> frames; rejects anything outside the codeword range, including
    the eos logit-space id."""
    ids = list(ids.ids if isinstance(ids, TokenSequence) else ids)
    for i in ids:
        if not 0 <= int(i) < book.n_codes:
            raise DataError(f"audio token id {i} out of range [0, {book.n_codes})")
    if not ids:
        return np.zeros((0, book.dim), dtype=np.float32)
    return book.centers[np.asarray(ids, dtype=np.int64)].copy()


def synth_reference_audio(seed: int, n_frames: int, dim: int = DEFAULT_FRAME_DIM) -> np.ndarray:
    """Synthetic feature frames, uniform over the codebook's support cube."""
    if n_frames < 1:
        raise ParameterError(f"n_frames must be >= 1, got {n_frames}")
    rng = SeededRng(seed).child(7)
    return rng.uniform(-1.0, 1.0, (n_frames, dim))


def render_waveform(ids, book: Codebook) -> np.ndarray:
    """Sinusoid-bank sketch: 160 samples per token at 16 kHz, frequencies and
    amplitudes keyed by the codeword. Demo quality only."""
    ids = list(ids.ids if isinstance(ids, TokenSequence) else ids)
    frames = audio_decode(ids, book)
    total = HOP_SAMPLES * len(ids)
    out = np.zeros(total, dtype=np.float64)
    n_osc = min(4, book.dim // 2)
    for t, center in enumerate(frames):
        idx = np.arange(t * HOP_SAMPLES, (t + 1) * HOP_SAMPLES)
        freqs = 200.0 + 1800.0 * (center[0:2 * n_osc:2] + 1.0) / 2.0
        amps = (center[1:2 * n_osc:2] + 1.0) / 2.0
        amps = amps / max(1.0, amps.sum())
        for f, a in zip(freqs, amps):
            out[idx] += a * np.sin(2.0 * np.pi * f * idx / SAMPLE_RATE)
    return np.clip(out * 0.6, -1.0, 1.0)


def write_wav(path, samples: np.ndarray) -> None:
    """Little-endian 16-bit PCM mono 16 kHz RIFF."""
    pcm = np.clip(np.asarray(samples) * 32767.0, -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(SAMPLE_RATE)
        w.writeframes(pcm.tobytes())


def save_codebook(book: Codebook, path) -> None:
    with open(path, "wb") as f:
        f.write(CODEBOOK_MAGIC)
        f.write(struct.pack("<III", 1, book.n_codes, book.dim))
        f.write(book.centers.astype("<f4").tobytes())


def load_codebook(path) -> Codebook:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != CODEBOOK_MAGIC:
        raise DataError(f"{path}: bad codebook magic {raw[:4]!r}")
    version, n_codes, dim = struct.unpack_from("<III", raw, 4)
    if version != 1:
        raise DataError(f"{path}: unsupported codebook version {version}")
    body = raw[16:]
    expect = n_codes * dim * 4
    if len(body) != expect:
        raise DataError(f"{path}: codebook payload is {len(body)} bytes, expected {expect}")
    centers = np.frombuffer(body, dtype="<f4").reshape(n_codes, dim)
    return Codebook(centers)
