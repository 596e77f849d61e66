"""voxrnn: a desk-scale recurrent speech-token language model.

Delta-rule recurrent blocks with O(1) decode state, a byte-level text
tokenizer plus fixed-codebook audio quantizer, packed-sequence teacher-forced
training, autoregressive zero-shot synthesis, and an efficiency benchmark
against a causal-attention baseline.
"""

from .codec import (Codebook, SpecialTokens, TokenSequence, audio_decode, audio_encode,
                    default_codebook, synth_reference_audio, text_decode, text_encode)
from .decode import GenerationConfig, GenerationResult, generate, prefill, sample
from .lm import (LmParams, PackedInput, TrainingExample, TtsModel, assemble, init_tts_model,
                 lm_backward, lm_forward, lm_loss)
from .numerics import SeededRng, cross_entropy, finite_diff_grad, matmul, rms_norm, softmax
from .rwkv import (BlockConfig, BlockParams, RecurrentState, stack_backward, stack_sequence,
                   stack_step, token_shift, wkv_step)
from .train import TrainConfig, adam_step, evaluate_teacher_forced, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"
