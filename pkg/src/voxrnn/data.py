"""Synthetic paired corpus (text <-> speech tokens), shard serialization,
length-aware batch planning, and prompt-drop augmentation.

Records are stored one JSON object per line so shards stay diff-friendly and
greppable; a manifest ties shards to the codebook they were quantized with.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from .codec import Codebook, TokenSequence, audio_encode, synth_reference_audio, text_encode
from .errors import CapacityError, DataError, ParameterError
from .lm import TrainingExample
from .numerics import SeededRng

TARGET_FRAMES_PER_BYTE = 4
DEFAULT_PROMPT_DROP = 0.1

# small seeded template grammar; mixed scripts on purpose
_EN_HEADS = ["the quiet owl", "a copper kettle", "the night train", "one paper boat",
             "the old radio", "a glass bell", "the river stone", "my tin whistle"]
_EN_VERBS = ["hums", "drifts", "sings", "waits", "turns", "glows", "settles", "rings"]
_EN_TAILS = ["at dawn", "by the sea", "all night", "in the rain", "so softly",
             "once more", "for nobody", "under snow"]
_ZH_HEADS = ["小猫", "老茶壶", "夜车", "纸船", "收音机", "玻璃钟", "河石", "口哨"]
_ZH_VERBS = ["在唱歌", "在发光", "在等待", "在旋转", "慢慢响", "轻轻飘"]
_ZH_TAILS = ["直到天亮", "在雨里", "在海边", "再一次"]
_INSTRUCTIONS = ["read this slowly", "whisper the line", "说得快一点", "用平静的语气"]


@dataclass
class CorpusRecord:
    text: str
    instruction: bool
    prompt_speech_ids: list[int]
    target_speech_ids: list[int]
    provenance: str

    def __post_init__(self):
        if not self.target_speech_ids:
            raise DataError(f"{self.provenance or 'record'}: target speech is empty")


def record_to_example(record: CorpusRecord) -> TrainingExample:
    return TrainingExample(
        text=text_encode(record.text, record.instruction),
        prompt_speech=TokenSequence("prompt_speech", record.prompt_speech_ids),
        target_speech=TokenSequence("target_speech", record.target_speech_ids),
    )


def packed_length(record: CorpusRecord) -> int:
    """Length of the packed embedding sequence this record assembles into."""
    text_tokens = len(record.text.encode("utf-8")) + (1 if record.instruction else 0)
    return 2 + text_tokens + len(record.prompt_speech_ids) + len(record.target_speech_ids)


def _synth_text(rng: SeededRng) -> str:
    kind = rng.integers(0, 3)
    if kind == 0:
        return " ".join([
            _EN_HEADS[int(rng.integers(0, len(_EN_HEADS)))],
            _EN_VERBS[int(rng.integers(0, len(_EN_VERBS)))],
            _EN_TAILS[int(rng.integers(0, len(_EN_TAILS)))],
        ])
    if kind == 1:
        return (_ZH_HEADS[int(rng.integers(0, len(_ZH_HEADS)))]
                + _ZH_VERBS[int(rng.integers(0, len(_ZH_VERBS)))]
                + _ZH_TAILS[int(rng.integers(0, len(_ZH_TAILS)))])
    return (_EN_HEADS[int(rng.integers(0, len(_EN_HEADS)))] + " "
            + _EN_VERBS[int(rng.integers(0, len(_EN_VERBS)))] + " "
            + _ZH_TAILS[int(rng.integers(0, len(_ZH_TAILS)))])


def build_synthetic_corpus(seed: int, n_records: int, book: Codebook) -> list[CorpusRecord]:
    """Deterministic per seed. Target length is tied to the text at
    TARGET_FRAMES_PER_BYTE frames per UTF-8 byte; prompts are short
    independently synthesized reference clips."""
    if n_records < 1:
        raise ParameterError(f"n_records must be >= 1, got {n_records}")
    root = SeededRng(seed)
    records = []
    for i in range(n_records):
        r = root.child(i)
        text = _synth_text(r.child(0))
        instruction = r.child(1).random() < 0.25
        if instruction:
            text = _INSTRUCTIONS[int(r.child(2).integers(0, len(_INSTRUCTIONS)))] + ": " + text
        n_target = TARGET_FRAMES_PER_BYTE * len(text.encode("utf-8"))
        target = audio_encode(synth_reference_audio(r.derive_seed(3), n_target, book.dim), book)
        n_prompt = int(r.child(4).integers(6, 21))
        prompt = audio_encode(
            synth_reference_audio(r.derive_seed(5), n_prompt, book.dim), book, "prompt_speech")
        records.append(CorpusRecord(
            text=text,
            instruction=instruction,
            prompt_speech_ids=prompt.ids,
            target_speech_ids=target.ids,
            provenance=f"synthetic:{seed}:{i}",
        ))
    return records


def apply_prompt_drop(record: CorpusRecord, p: float, rng: SeededRng) -> CorpusRecord:
    """With probability p the prompt is emptied; text and targets are never
    touched. One uniform draw is consumed regardless of p."""
    if not 0.0 <= p <= 1.0:
        raise ParameterError(f"drop probability must be in [0, 1], got {p}")
    if rng.random() < p:
        return dataclasses.replace(record, prompt_speech_ids=[])
    return record


@dataclass
class BatchPlan:
    batches: list[list[int]]   # record indices, each micro-batch within budget
    max_tokens_per_batch: int

    def flat_order(self) -> list[int]:
        return [i for b in self.batches for i in b]


def plan_batches(records: list[CorpusRecord], max_tokens_per_batch: int) -> BatchPlan:
    """Sort by packed length, then fill greedily; every index appears once."""
    lengths = [packed_length(r) for r in records]
    for r, n in zip(records, lengths):
        if n > max_tokens_per_batch:
            raise CapacityError(
                f"{r.provenance or 'record'}: packed length {n} exceeds budget {max_tokens_per_batch}")
    order = sorted(range(len(records)), key=lambda i: (lengths[i], i))
    batches: list[list[int]] = []
    cur: list[int] = []
    used = 0
    for i in order:
        if cur and used + lengths[i] > max_tokens_per_batch:
            batches.append(cur)
            cur, used = [], 0
        cur.append(i)
        used += lengths[i]
    if cur:
        batches.append(cur)
    return BatchPlan(batches, max_tokens_per_batch)


def write_shards(records: list[CorpusRecord], out_dir, shard_size: int = 512,
                 codec_sha256: str = "") -> Path:
    """Write JSONL shards plus a manifest; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    shard_meta = []
    for s, lo in enumerate(range(0, len(records), shard_size)):
        chunk = records[lo:lo + shard_size]
        name = f"shard-{s:04d}.jsonl"
        with open(out / name, "w", encoding="utf-8") as f:
            for r in chunk:
                f.write(json.dumps({
                    "text": r.text,
                    "instruction": r.instruction,
                    "prompt": r.prompt_speech_ids,
                    "target": r.target_speech_ids,
                    "provenance": r.provenance,
                }, ensure_ascii=False) + "\n")
        shard_meta.append({"path": name, "records": len(chunk)})
    manifest = {
        "version": 1,
        "shards": shard_meta,
        "total_records": len(records),
        "total_speech_tokens": sum(len(r.prompt_speech_ids) + len(r.target_speech_ids) for r in records),
        "total_text_tokens": sum(len(r.text.encode("utf-8")) + (1 if r.instruction else 0) for r in records),
        "codec_sha256": codec_sha256,
    }
    manifest_path = out / "manifest.json"
    with open(manifest_path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, ensure_ascii=False)
        f.write("\n")
    return manifest_path


def load_manifest(manifest_path) -> dict:
    with open(manifest_path, encoding="utf-8") as f:
        return json.load(f)


def read_shards(manifest_path) -> list[CorpusRecord]:
    manifest_path = Path(manifest_path)
    manifest = load_manifest(manifest_path)
    records = []
    for meta in manifest["shards"]:
        path = manifest_path.parent / meta["path"]
        with open(path, encoding="utf-8") as f:
            for line_no, line in enumerate(f):
                try:
                    obj = json.loads(line)
                    records.append(CorpusRecord(
                        text=obj["text"],
                        instruction=bool(obj["instruction"]),
                        prompt_speech_ids=[int(i) for i in obj["prompt"]],
                        target_speech_ids=[int(i) for i in obj["target"]],
                        provenance=str(obj["provenance"]),
                    ))
                except (KeyError, ValueError, TypeError) as exc:
                    raise DataError(f"{path}:{line_no + 1}: malformed record: {exc}") from exc
    return records


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
