"""Minimal decoder-only transformer forward pass, used to verify surgery.

Block structure follows the checkpoint tensor naming scheme: RMSNorm ->
grouped-query attention with rotary position encoding -> residual add,
then RMSNorm -> gated MLP -> residual add; final RMSNorm feeds lm_head.
No biases, no dropout, no sampling. All arithmetic is float32 with a
fixed evaluation order so repeated runs are bitwise identical on the
same platform.
"""
import numpy as np

from .checkpoint_store import Checkpoint, Tensor, canonical_tensor_order, expected_shapes
from .errors import ValidationError
from ._util import seeded_rng

DEFAULT_MAX_CONTEXT = 4096


def make_toy_checkpoint(config, seed, dtype="F32"):
    """Deterministic random checkpoint at toy scale.

    Weights are drawn per tensor from a stream keyed by (seed, name) at
    scale 1/sqrt(hidden); norm gains sit at 1 plus the same-scale jitter
    so blocks behave like residual updates of sane magnitude.
    """
    config.validate()
    scale = 1.0 / np.sqrt(config.hidden_size)
    tensors = {}
    for name, shape in expected_shapes(config).items():
        rng = seeded_rng(seed, name)
        w = rng.standard_normal(shape, dtype=np.float32) * np.float32(scale)
        if name.endswith("layernorm.weight") or name == "model.norm.weight":
            w = np.float32(1.0) + w
        tensors[name] = Tensor.from_f32(w, dtype)
    return Checkpoint(config=config, tensors=tensors)


def _weights_f32(ckpt):
    ws = {}
    for name in canonical_tensor_order(ckpt.config):
        w = ckpt.tensors[name].to_f32()
        if not np.isfinite(w).all():
            raise ValidationError(f"non-finite weights in tensor {name!r}")
        ws[name] = w
    return ws


def _rms_norm(x, weight, eps):
    ms = np.mean(x * x, axis=-1, keepdims=True)
    return x * (np.float32(1.0) / np.sqrt(ms + np.float32(eps))) * weight


def _rope_tables(seq_len, head_dim, theta):
    half = head_dim // 2
    inv_freq = np.float32(theta) ** (
        -np.arange(0, half, dtype=np.float32) * np.float32(2.0 / head_dim)
    )
    angles = np.arange(seq_len, dtype=np.float32)[:, None] * inv_freq[None, :]
    return np.cos(angles), np.sin(angles)


def _apply_rope(x, cos, sin):
    # x: (seq, heads, head_dim); rotate the two halves of each head.
    half = x.shape[-1] // 2
    x1, x2 = x[..., :half], x[..., half:]
    c = cos[:, None, :]
    s = sin[:, None, :]
    return np.concatenate([x1 * c - x2 * s, x2 * c + x1 * s], axis=-1)


def _softmax(scores):
    m = np.max(scores, axis=-1, keepdims=True)
    e = np.exp(scores - m)
    return e / np.sum(e, axis=-1, keepdims=True)


def forward(ckpt, tokens, max_context=DEFAULT_MAX_CONTEXT):
    """Run one token sequence through the model; returns (seq, vocab) f32 logits."""
    cfg = ckpt.config
    tokens = list(tokens)
    if not tokens:
        raise ValidationError("empty token sequence")
    if len(tokens) > max_context:
        raise ValidationError(f"sequence length {len(tokens)} exceeds context bound {max_context}")
    for t in tokens:
        if not isinstance(t, (int, np.integer)) or t < 0 or t >= cfg.vocab_size:
            raise ValidationError(f"token id {t!r} out of range [0, {cfg.vocab_size})")

    ws = _weights_f32(ckpt)
    seq = len(tokens)
    head_dim = cfg.head_dim
    group = cfg.num_attention_heads // cfg.num_kv_heads
    inv_sqrt_d = np.float32(1.0 / np.sqrt(head_dim))

    cos, sin = _rope_tables(seq, head_dim, cfg.rope_theta)
    causal = np.triu(np.full((seq, seq), -np.inf, dtype=np.float32), k=1)

    x = ws["model.embed_tokens.weight"][np.asarray(tokens)]
    for i in range(cfg.num_layers):
        p = f"model.layers.{i}."
        h = _rms_norm(x, ws[p + "input_layernorm.weight"], cfg.rms_norm_eps)
        q = (h @ ws[p + "self_attn.q_proj.weight"].T).reshape(seq, cfg.num_attention_heads, head_dim)
        k = (h @ ws[p + "self_attn.k_proj.weight"].T).reshape(seq, cfg.num_kv_heads, head_dim)
        v = (h @ ws[p + "self_attn.v_proj.weight"].T).reshape(seq, cfg.num_kv_heads, head_dim)
        q = _apply_rope(q, cos, sin).transpose(1, 0, 2)
        k = _apply_rope(k, cos, sin).transpose(1, 0, 2)
        v = v.transpose(1, 0, 2)
        # each kv head serves a contiguous group of query heads
        k = np.repeat(k, group, axis=0)
        v = np.repeat(v, group, axis=0)
        scores = (q @ k.transpose(0, 2, 1)) * inv_sqrt_d + causal
        attn = _softmax(scores) @ v
        attn = attn.transpose(1, 0, 2).reshape(seq, cfg.hidden_size)
        x = x + attn @ ws[p + "self_attn.o_proj.weight"].T

        h = _rms_norm(x, ws[p + "post_attention_layernorm.weight"], cfg.rms_norm_eps)
        gate = h @ ws[p + "mlp.gate_proj.weight"].T
        up = h @ ws[p + "mlp.up_proj.weight"].T
        silu = gate / (np.float32(1.0) + np.exp(-gate))
        x = x + (silu * up) @ ws[p + "mlp.down_proj.weight"].T

    x = _rms_norm(x, ws["model.norm.weight"], cfg.rms_norm_eps)
    return x @ ws["lm_head.weight"].T


def compare_outputs(ckpt_a, ckpt_b, prompts, max_context=DEFAULT_MAX_CONTEXT):
    """Elementwise logit deviation stats over aligned prompts.

    Differences are taken exactly (f32 values widened to f64); an exact
    zero is reported as 0.0 with no epsilon flooring.
    """
    if ckpt_a.config.vocab_size != ckpt_b.config.vocab_size:
        raise ValidationError(
            f"vocab mismatch: {ckpt_a.config.vocab_size} vs {ckpt_b.config.vocab_size}"
        )
    per_prompt = []
    total_sum = 0.0
    total_count = 0
    max_abs = 0.0
    for tokens in prompts:
        la = forward(ckpt_a, tokens, max_context)
        lb = forward(ckpt_b, tokens, max_context)
        diff = np.abs(la.astype(np.float64) - lb.astype(np.float64))
        per_prompt.append({"mean_abs": float(diff.mean()), "max_abs": float(diff.max())})
        total_sum += float(diff.sum())
        total_count += diff.size
        max_abs = max(max_abs, float(diff.max()))
    if total_count == 0:
        raise ValidationError("no prompts supplied")
    return {
        "mean_abs": total_sum / total_count,
        "max_abs": max_abs,
        "per_prompt": per_prompt,
    }
