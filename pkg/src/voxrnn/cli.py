"""Command surface: prepare / train / generate / bench / report.

Every command is deterministic given its flags and seed; the VOXRNN_SEED
environment variable overrides --seed wherever one is accepted.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import codec, data, report as report_mod
from .bench import run_bench
from .decode import GenerationConfig, generate
from .errors import ConfigError, DataError, VoxError
from .lm import init_tts_model
from .rwkv import BlockConfig
from .train import TrainConfig, load_checkpoint, save_checkpoint, train, AdamState
from .codec import TokenSequence

DEFAULT_MODEL = {"d_model": 128, "n_heads": 4, "n_layers": 4, "speech_vocab": 1024}


def _seed(args) -> int:
    env = os.environ.get("VOXRNN_SEED")
    if env is not None:
        return int(env)
    return args.seed


def _model_dims(config_path) -> dict:
    dims = dict(DEFAULT_MODEL)
    if config_path:
        with open(config_path, encoding="utf-8") as f:
            dims.update(json.load(f))
    return dims


def cmd_prepare(args) -> int:
    seed = _seed(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    book = codec.default_codebook()
    book_path = out / "codebook.vxcb"
    codec.save_codebook(book, book_path)
    records = data.build_synthetic_corpus(seed, args.records, book)
    manifest_path = data.write_shards(records, out, codec_sha256=data.file_sha256(book_path))
    manifest = data.load_manifest(manifest_path)
    total = manifest["total_speech_tokens"] + manifest["total_text_tokens"]
    print(f"records={manifest['total_records']} text_tokens={manifest['total_text_tokens']} "
          f"speech_tokens={manifest['total_speech_tokens']} total_tokens={total}")
    print(f"manifest={manifest_path}")
    return 0


def cmd_train(args) -> int:
    seed = _seed(args)
    records = data.read_shards(args.data)
    dims = _model_dims(args.config)
    cfg = BlockConfig(dims["d_model"], dims["n_heads"], dims["n_layers"])
    model = init_tts_model(cfg, codec.DEFAULT_SPECIALS.text_vocab_size, dims["speech_vocab"], seed)
    tc = TrainConfig(steps=args.steps, lr=args.lr, accumulation=args.accumulation,
                     seed=seed, prompt_drop=args.prompt_drop)
    log_path = args.log or (str(args.out) + ".loss.txt")
    Path(log_path).unlink(missing_ok=True)
    if args.steps == 0:
        save_checkpoint(args.out, model, AdamState.zeros_like(model.param_dict()), 0, seed)
        print(f"steps=0 wrote initialization checkpoint {args.out}")
        return 0
    curve, model, _ = train(records, tc, model, checkpoint_path=args.out, log_file=log_path)
    print(f"final_loss={curve[-1].loss:.6f} steps={len(curve)} checkpoint={args.out} log={log_path}")
    return 0


def _parse_ref_audio(spec: str, book: codec.Codebook) -> TokenSequence:
    """'seed:N[:frames]' synthesizes a reference; otherwise comma-separated
    ids or a path to a JSON list / token dump."""
    if spec.startswith("seed:"):
        parts = spec.split(":")
        seed = int(parts[1])
        frames = int(parts[2]) if len(parts) > 2 else 16
        return codec.audio_encode(codec.synth_reference_audio(seed, frames, book.dim),
                                  book, "prompt_speech")
    if Path(spec).exists():
        with open(spec, encoding="utf-8") as f:
            obj = json.load(f)
        ids = obj["speech_ids"] if isinstance(obj, dict) else obj
        return TokenSequence("prompt_speech", ids)
    ids = [int(tok) for tok in spec.split(",") if tok.strip()]
    return TokenSequence("prompt_speech", ids)


def cmd_generate(args) -> int:
    seed = _seed(args)
    model, _, _, _ = load_checkpoint(args.ckpt)
    book = codec.load_codebook(args.codebook) if args.codebook else codec.default_codebook()
    if book.n_codes != model.speech_vocab:
        raise ConfigError(f"codebook has {book.n_codes} codes but checkpoint expects "
                          f"{model.speech_vocab}")
    text = codec.text_encode(args.text, instruction=args.instruction)
    prompt = _parse_ref_audio(args.ref_audio, book)
    gc = GenerationConfig(strategy=args.strategy, temperature=args.temperature,
                          max_tokens=args.max_tokens, min_tokens=args.min_tokens,
                          top_k=args.top_k, top_p=args.top_p, seed=seed)
    result = generate(model, text, prompt, gc)
    codec.write_wav(args.out, codec.render_waveform(result.speech_ids, book))
    dump = Path(str(args.out) + ".tokens.json")
    with open(dump, "w", encoding="utf-8") as f:
        json.dump({"speech_ids": result.speech_ids, "stop_reason": result.stop_reason,
                    "state_bytes": result.state_bytes}, f)
        f.write("\n")
    print(f"tokens={len(result.speech_ids)} stop={result.stop_reason} "
          f"samples={codec.HOP_SAMPLES * len(result.speech_ids)} wav={args.out} dump={dump}")
    return 0


def cmd_bench(args) -> int:
    seed = _seed(args)
    dims = _model_dims(args.config)
    cfg = BlockConfig(dims["d_model"], dims["n_heads"], dims["n_layers"])
    lengths = [int(tok) for tok in args.lengths.split(",") if tok.strip()]
    rep = run_bench(cfg, lengths, speech_vocab=dims["speech_vocab"], seed=seed)
    table = rep.format_table()
    print(table)
    if args.out:
        Path(args.out).write_text(table + "\n", encoding="utf-8")
    return 0


def cmd_report(args) -> int:
    if args.scores:
        text = Path(args.scores).read_text(encoding="utf-8")
    else:
        text = report_mod.bundled_scores_path().read_text(encoding="utf-8")
    print(report_mod.render_score_table(report_mod.parse_score_file(text)))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="voxrnn",
                                description="speech-token LM: data prep, training, synthesis, benchmark")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("prepare", help="build a synthetic corpus and write shards")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--records", type=int, required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_prepare)

    st = sub.add_parser("train", help="teacher-forced training over shards")
    st.add_argument("--data", required=True, help="manifest.json path")
    st.add_argument("--config", default=None, help="JSON with model dims")
    st.add_argument("--out", required=True, help="checkpoint output path")
    st.add_argument("--steps", type=int, default=500)
    st.add_argument("--lr", type=float, default=3e-4)
    st.add_argument("--accumulation", type=int, default=1)
    st.add_argument("--prompt-drop", type=float, default=data.DEFAULT_PROMPT_DROP)
    st.add_argument("--seed", type=int, default=0)
    st.add_argument("--log", default=None, help="loss log path (default: <out>.loss.txt)")
    st.set_defaults(fn=cmd_train)

    sg = sub.add_parser("generate", help="zero-shot synthesis to a wav file")
    sg.add_argument("--ckpt", required=True)
    sg.add_argument("--text", required=True)
    sg.add_argument("--instruction", action="store_true")
    sg.add_argument("--ref-audio", required=True, help="'seed:N[:frames]', id list, or token dump path")
    sg.add_argument("--out", required=True)
    sg.add_argument("--codebook", default=None)
    sg.add_argument("--strategy", choices=("greedy", "top_k", "top_p"), default="greedy")
    sg.add_argument("--temperature", type=float, default=1.0)
    sg.add_argument("--top-k", type=int, default=1)
    sg.add_argument("--top-p", type=float, default=1.0)
    sg.add_argument("--max-tokens", type=int, default=256)
    sg.add_argument("--min-tokens", type=int, default=1)
    sg.add_argument("--seed", type=int, default=0)
    sg.set_defaults(fn=cmd_generate)

    sb = sub.add_parser("bench", help="recurrent vs attention decode efficiency")
    sb.add_argument("--config", default=None)
    sb.add_argument("--lengths", default="64,128,256,512,1024")
    sb.add_argument("--seed", type=int, default=0)
    sb.add_argument("--out", default=None, help="also write the table to this file")
    sb.set_defaults(fn=cmd_bench)

    sr = sub.add_parser("report", help="render the listening-test score table")
    sr.add_argument("--scores", default=None, help="score file (default: bundled)")
    sr.set_defaults(fn=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except VoxError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
