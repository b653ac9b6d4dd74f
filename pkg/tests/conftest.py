import numpy as np
import pytest

from babelkit.checkpoint_store import Checkpoint, ModelConfig, Tensor
from babelkit.reference_model import make_toy_checkpoint

from _oracles import SCALAR_EPS, SCALAR_THETA, SCALAR_WEIGHTS


@pytest.fixture
def toy_config():
    return ModelConfig(
        num_layers=8,
        hidden_size=32,
        num_attention_heads=4,
        num_kv_heads=2,
        intermediate_size=64,
        vocab_size=64,
    )


@pytest.fixture
def toy_checkpoint(toy_config):
    return make_toy_checkpoint(toy_config, seed=42)


@pytest.fixture
def scalar_checkpoint():
    """The hand-weighted 1-layer model matching the scalar oracle."""
    config = ModelConfig(
        num_layers=1,
        hidden_size=2,
        num_attention_heads=1,
        num_kv_heads=1,
        intermediate_size=3,
        vocab_size=3,
        rms_norm_eps=SCALAR_EPS,
        rope_theta=SCALAR_THETA,
    )
    tensors = {
        name: Tensor.from_f32(np.array(values, dtype=np.float32), "F32")
        for name, values in SCALAR_WEIGHTS.items()
    }
    return Checkpoint(config=config, tensors=tensors)


def random_prompts(rng, count, length, vocab_size):
    return [[int(t) for t in rng.integers(0, vocab_size, size=length)] for _ in range(count)]
