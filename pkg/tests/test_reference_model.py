import dataclasses

import numpy as np
import pytest

from babelkit.checkpoint_store import Checkpoint, ModelConfig, Tensor, load_checkpoint, save_checkpoint
from babelkit.errors import ValidationError
from babelkit.reference_model import compare_outputs, forward, make_toy_checkpoint

from _oracles import scalar_forward
from conftest import random_prompts

# scalar_forward([0, 2, 1]) output, frozen 2026-08; recomputed below as well
FROZEN_SCALAR_LOGITS = [
    [0.8273231860569383, -0.05423314645860772, 0.2975185696599174],
    [0.04799082563398241, 0.7027579152479528, -0.4901101185738467],
    [0.853144497929054, -0.3045980265728021, 0.4855374872020309],
]


def test_forward_matches_scalar_oracle(scalar_checkpoint):
    tokens = [0, 2, 1]
    got = forward(scalar_checkpoint, tokens)
    oracle = scalar_forward(tokens)
    assert np.allclose(oracle, FROZEN_SCALAR_LOGITS, rtol=0, atol=1e-12)
    assert got.shape == (3, 3)
    assert got.dtype == np.float32
    # f32 evaluation vs the f64 transcript: agreement to f32 rounding noise
    assert np.allclose(got, FROZEN_SCALAR_LOGITS, rtol=0, atol=1e-5)


def test_all_zero_layers_reduce_to_head_of_embeddings(toy_config):
    ckpt = make_toy_checkpoint(toy_config, seed=0)
    for i in range(toy_config.num_layers):
        for name in ckpt.layer_names(i):
            t = ckpt.tensors[name]
            ckpt.tensors[name] = Tensor(dtype=t.dtype, shape=t.shape, data=bytes(len(t.data)))
    tokens = [1, 5, 9]
    got = forward(ckpt, tokens)

    # independent expectation: lm_head(final_norm(embed(tokens)))
    embed = ckpt.tensors["model.embed_tokens.weight"].to_f32()[tokens]
    gain = ckpt.tensors["model.norm.weight"].to_f32()
    ms = np.mean(embed * embed, axis=-1, keepdims=True)
    normed = embed / np.sqrt(ms + np.float32(toy_config.rms_norm_eps)) * gain
    expected = normed @ ckpt.tensors["lm_head.weight"].to_f32().T
    assert np.allclose(got, expected, rtol=0, atol=1e-6)

    # and depth independence: 1 zero layer == 8 zero layers
    one = dataclasses.replace(toy_config, num_layers=1)
    shallow = make_toy_checkpoint(one, seed=0)
    for name in shallow.layer_names(0):
        t = shallow.tensors[name]
        shallow.tensors[name] = Tensor(dtype=t.dtype, shape=t.shape, data=bytes(len(t.data)))
    shallow.tensors["model.embed_tokens.weight"] = ckpt.tensors["model.embed_tokens.weight"]
    shallow.tensors["model.norm.weight"] = ckpt.tensors["model.norm.weight"]
    shallow.tensors["lm_head.weight"] = ckpt.tensors["lm_head.weight"]
    assert np.array_equal(forward(shallow, tokens), got)


def test_forward_is_deterministic(toy_checkpoint):
    tokens = [3, 1, 4, 1, 5]
    a = forward(toy_checkpoint, tokens)
    b = forward(toy_checkpoint, tokens)
    assert np.array_equal(a, b)


def test_logits_depend_on_token_order(toy_checkpoint):
    a = forward(toy_checkpoint, [1, 2, 3, 4])
    b = forward(toy_checkpoint, [2, 1, 3, 4])
    assert not np.array_equal(a, b)


def test_token_validation(toy_checkpoint):
    with pytest.raises(ValidationError, match="out of range"):
        forward(toy_checkpoint, [0, toy_checkpoint.config.vocab_size])
    with pytest.raises(ValidationError, match="empty token sequence"):
        forward(toy_checkpoint, [])
    with pytest.raises(ValidationError, match="context bound"):
        forward(toy_checkpoint, [0] * 10, max_context=5)


def test_non_finite_weights_rejected(toy_checkpoint):
    bad = Checkpoint(config=toy_checkpoint.config, tensors=dict(toy_checkpoint.tensors))
    w = bad.tensors["model.norm.weight"].to_f32()
    w[0] = np.inf
    bad.tensors["model.norm.weight"] = Tensor.from_f32(w, "F32")
    with pytest.raises(ValidationError, match="non-finite"):
        forward(bad, [1, 2])


def test_compare_outputs_self_is_zero(toy_checkpoint):
    stats = compare_outputs(toy_checkpoint, toy_checkpoint, [[1, 2, 3], [7, 8]])
    assert stats["mean_abs"] == 0.0
    assert stats["max_abs"] == 0.0
    assert all(p["max_abs"] == 0.0 for p in stats["per_prompt"])


def test_compare_outputs_vocab_mismatch(toy_config):
    a = make_toy_checkpoint(toy_config, seed=0)
    b = make_toy_checkpoint(dataclasses.replace(toy_config, vocab_size=32), seed=0)
    with pytest.raises(ValidationError, match="vocab mismatch"):
        compare_outputs(a, b, [[1]])


def test_toy_checkpoint_determinism(toy_config, tmp_path):
    a = make_toy_checkpoint(toy_config, seed=11)
    b = make_toy_checkpoint(toy_config, seed=11)
    assert a == b
    c = make_toy_checkpoint(toy_config, seed=12)
    assert any(a.tensors[n].data != c.tensors[n].data for n in a.tensors)

    save_checkpoint(a, tmp_path / "m")
    assert load_checkpoint(tmp_path / "m") == a


def test_random_prompts_cover_many_tokens(toy_checkpoint):
    rng = np.random.default_rng(0)
    prompts = random_prompts(rng, 4, 6, toy_checkpoint.config.vocab_size)
    for p in prompts:
        logits = forward(toy_checkpoint, p)
        assert logits.shape == (6, toy_checkpoint.config.vocab_size)
        assert np.isfinite(logits).all()
