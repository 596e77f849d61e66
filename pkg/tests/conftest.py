import numpy as np
import pytest

from voxrnn.codec import Codebook, default_codebook
from voxrnn.lm import init_tts_model
from voxrnn.numerics import SeededRng
from voxrnn.rwkv import BlockConfig, RecurrentState, init_block_params


@pytest.fixture(scope="session")
def book() -> Codebook:
    return default_codebook()


@pytest.fixture(scope="session")
def small_book() -> Codebook:
    return default_codebook(n_codes=32, dim=4)


def tiny_blocks(d_model=8, n_heads=2, n_layers=2, seed=11, dtype=np.float32):
    cfg = BlockConfig(d_model, n_heads, n_layers)
    params = init_block_params(cfg, SeededRng(seed), dtype=dtype)
    return cfg, params


def tiny_model(d_model=16, n_heads=2, n_layers=2, text_vocab=267, speech_vocab=32,
               seed=7, dtype=np.float32):
    model = init_tts_model(BlockConfig(d_model, n_heads, n_layers), text_vocab, speech_vocab, seed)
    return model.astype(dtype) if dtype is not np.float32 else model


def fresh(cfg, dtype=np.float32) -> RecurrentState:
    return RecurrentState.zeros(cfg, dtype)
