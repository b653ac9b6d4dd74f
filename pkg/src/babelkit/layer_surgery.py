"""Depth extension of transformer checkpoints.

Positions follow the published recipe: insertions start at the midpoint
and repeat every other layer, so a 28-layer model extended by 6 gains
copies after layers {14, 16, 18, 20, 22, 24}. "Inserting at position p"
places a copy of layer p immediately after p; positions always refer to
pre-surgery indices, and downstream layers are renumbered contiguously.

Initialization of an inserted layer is one of:
  duplicate        exact byte copy of the source layer
  duplicate_noise  copy plus i.i.d. Gaussian noise, mean == std == noise_mean,
                   added in f32 then cast back to the tensor dtype; the
                   stream is keyed by (seed, new layer index, tensor name)
  zeros            every tensor zeroed; the residual path then makes the
                   extended model an exact identity of the original

Embeddings, lm_head and the final norm are never touched.
"""
import dataclasses
from dataclasses import dataclass

import numpy as np

from .checkpoint_store import (
    LAYER_SUFFIXES,
    Checkpoint,
    Tensor,
    canonical_tensor_order,
    validate_checkpoint,
)
from .errors import ValidationError
from .reference_model import compare_outputs
from ._util import pmap, seeded_rng

AMONG_LAYERS = "among_layers"
AFTER_MODEL = "after_model"

INIT_DUPLICATE = "duplicate"
INIT_DUPLICATE_NOISE = "duplicate_noise"
INIT_ZEROS = "zeros"

DEFAULT_NOISE_MEAN = 1e-4


@dataclass(frozen=True)
class ExtensionPlan:
    strategy: str
    positions: tuple = ()
    count: int = 0
    init: str = INIT_DUPLICATE_NOISE
    noise_mean: float = DEFAULT_NOISE_MEAN
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "positions", tuple(int(p) for p in self.positions))

    def validate(self, config=None):
        errs = []
        if self.strategy not in (AMONG_LAYERS, AFTER_MODEL):
            errs.append(f"unknown strategy {self.strategy!r}")
        if self.init not in (INIT_DUPLICATE, INIT_DUPLICATE_NOISE, INIT_ZEROS):
            errs.append(f"unknown init {self.init!r}")
        if self.strategy == AMONG_LAYERS:
            if not self.positions:
                errs.append("among_layers plan needs at least one position")
            if any(b <= a for a, b in zip(self.positions, self.positions[1:])):
                errs.append(f"positions must be strictly increasing, got {list(self.positions)}")
            if config is not None:
                bad = [p for p in self.positions if p < 0 or p >= config.num_layers]
                if bad:
                    errs.append(
                        f"position out of range [0, {config.num_layers}): {bad}"
                    )
        if self.strategy == AFTER_MODEL and self.count < 1:
            errs.append(f"after_model count must be positive, got {self.count}")
        if self.init == INIT_DUPLICATE_NOISE and not self.noise_mean > 0:
            errs.append(f"noise mean must be > 0, got {self.noise_mean!r}")
        if errs:
            raise ValidationError(errs)
        return self

    @property
    def num_inserted(self):
        return len(self.positions) if self.strategy == AMONG_LAYERS else self.count

    def init_description(self):
        desc = {"init": self.init}
        if self.init == INIT_DUPLICATE_NOISE:
            desc["noise_mean"] = self.noise_mean
            desc["noise_std"] = self.noise_mean
        return desc

    def to_dict(self):
        d = {"strategy": self.strategy, "init": self.init, "seed": self.seed}
        if self.strategy == AMONG_LAYERS:
            d["positions"] = list(self.positions)
        else:
            d["count"] = self.count
        if self.init == INIT_DUPLICATE_NOISE:
            d["noise_mean"] = self.noise_mean
        return d

    @classmethod
    def from_dict(cls, data):
        known = {"strategy", "positions", "count", "init", "noise_mean", "seed"}
        unknown = set(data) - known
        if unknown:
            raise ValidationError(f"unknown plan fields: {sorted(unknown)}")
        plan = cls(
            strategy=data.get("strategy", AMONG_LAYERS),
            positions=tuple(data.get("positions", ())),
            count=int(data.get("count", 0)),
            init=data.get("init", INIT_DUPLICATE_NOISE),
            noise_mean=float(data.get("noise_mean", DEFAULT_NOISE_MEAN)),
            seed=int(data.get("seed", 0)),
        )
        return plan.validate()


@dataclass
class SurgeryRecord:
    old_num_layers: int
    new_num_layers: int
    inserted: list  # (source_layer_index, new_layer_index) pairs
    init: dict
    seed: int

    def to_dict(self):
        return {
            "old_num_layers": self.old_num_layers,
            "new_num_layers": self.new_num_layers,
            "inserted": [[src, new] for src, new in self.inserted],
            "init": self.init,
            "seed": self.seed,
        }


def plan_extension(config, k, init=INIT_DUPLICATE_NOISE, noise_mean=DEFAULT_NOISE_MEAN, seed=0):
    """Stride-2 insertion positions in the second half of the model."""
    config.validate()
    if k < 1:
        raise ValidationError(f"k must be positive, got {k}")
    if config.num_layers % 2:
        raise ValidationError(
            f"num_layers must be even for second-half placement, got {config.num_layers}"
        )
    if k > config.num_layers // 4:
        raise ValidationError(
            f"k={k} too large for stride-2 placement in the second half of "
            f"{config.num_layers} layers (max {config.num_layers // 4})"
        )
    positions = tuple(config.num_layers // 2 + 2 * j for j in range(k))
    return ExtensionPlan(
        strategy=AMONG_LAYERS,
        positions=positions,
        init=init,
        noise_mean=noise_mean,
        seed=seed,
    ).validate(config)


def _layer_order(config, plan):
    """New layer sequence as (kind, source_index) with kind in {orig, new}."""
    order = []
    if plan.strategy == AMONG_LAYERS:
        pos = set(plan.positions)
        for i in range(config.num_layers):
            order.append(("orig", i))
            if i in pos:
                order.append(("new", i))
    else:
        for i in range(config.num_layers):
            order.append(("orig", i))
        order.extend(("new", config.num_layers - 1) for _ in range(plan.count))
    return order


def _noisy_copy(tensor, name, new_index, plan):
    w = tensor.to_f32()
    rng = seeded_rng(plan.seed, new_index, name)
    noise = rng.normal(loc=plan.noise_mean, scale=plan.noise_mean, size=w.shape)
    return Tensor.from_f32(w + noise.astype(np.float32), tensor.dtype)


def apply_extension(ckpt, plan):
    """Produce the deepened checkpoint plus an audit record."""
    plan.validate(ckpt.config)
    errs = validate_checkpoint(ckpt)
    if errs:
        raise ValidationError(errs)

    order = _layer_order(ckpt.config, plan)
    new_config = dataclasses.replace(ckpt.config, num_layers=len(order))

    tensors = {"model.embed_tokens.weight": ckpt.tensors["model.embed_tokens.weight"]}
    inserted = []
    noise_jobs = []
    for new_index, (kind, src) in enumerate(order):
        for suffix in LAYER_SUFFIXES:
            src_t = ckpt.tensors[f"model.layers.{src}.{suffix}"]
            name = f"model.layers.{new_index}.{suffix}"
            if kind == "orig" or plan.init == INIT_DUPLICATE:
                tensors[name] = src_t
            elif plan.init == INIT_ZEROS:
                tensors[name] = Tensor(
                    dtype=src_t.dtype, shape=src_t.shape, data=bytes(len(src_t.data))
                )
            else:
                tensors[name] = None  # filled from noise_jobs below
                noise_jobs.append((name, src_t, new_index))
        if kind == "new":
            inserted.append((src, new_index))
    tensors["model.norm.weight"] = ckpt.tensors["model.norm.weight"]
    tensors["lm_head.weight"] = ckpt.tensors["lm_head.weight"]

    if noise_jobs:
        results = pmap(
            lambda job: _noisy_copy(job[1], job[0], job[2], plan), noise_jobs
        )
        for (name, _, _), tensor in zip(noise_jobs, results):
            tensors[name] = tensor

    new_ckpt = Checkpoint(config=new_config, tensors=tensors)
    record = SurgeryRecord(
        old_num_layers=ckpt.config.num_layers,
        new_num_layers=new_config.num_layers,
        inserted=inserted,
        init=plan.init_description(),
        seed=plan.seed,
    )
    return new_ckpt, record


def count_parameters(config):
    """Closed-form parameter count matching the checkpoint tensor set."""
    config.validate()
    h, kv, inter, vocab = (
        config.hidden_size,
        config.kv_dim,
        config.intermediate_size,
        config.vocab_size,
    )
    per_layer = 2 * h * h + 2 * kv * h + 3 * h * inter + 2 * h
    return 2 * vocab * h + h + config.num_layers * per_layer


def per_layer_parameters(config):
    config.validate()
    h, kv, inter = config.hidden_size, config.kv_dim, config.intermediate_size
    return 2 * h * h + 2 * kv * h + 3 * h * inter + 2 * h


def ablation_grid(ckpt, k, means=(0.01, 0.0001), seeds=(0, 1, 2), prompts=()):
    """Deviation grid over {among_layers, after_model} x {no-noise, Gaussian(mean)...}
    plus a zeros cell: mean/max absolute logit deviation vs the unextended model.
    """
    if not prompts:
        raise ValidationError("ablation grid needs at least one prompt")
    seeds = list(seeds)
    if not seeds:
        raise ValidationError("ablation grid needs at least one seed")

    inits = [(INIT_DUPLICATE, None)] + [(INIT_DUPLICATE_NOISE, m) for m in means]
    cells = []
    for strategy in (AMONG_LAYERS, AFTER_MODEL):
        for init, mean in inits:
            cells.append(_grid_cell(ckpt, k, strategy, init, mean, seeds, prompts))
    cells.append(_grid_cell(ckpt, k, AMONG_LAYERS, INIT_ZEROS, None, seeds, prompts))

    return {
        "k": k,
        "num_layers": ckpt.config.num_layers,
        "means": list(means),
        "seeds": seeds,
        "prompt_count": len(prompts),
        "cells": cells,
    }


def _make_plan(config, k, strategy, init, mean, seed):
    if strategy == AMONG_LAYERS:
        return plan_extension(
            config, k, init=init, noise_mean=mean or DEFAULT_NOISE_MEAN, seed=seed
        )
    return ExtensionPlan(
        strategy=AFTER_MODEL,
        count=k,
        init=init,
        noise_mean=mean or DEFAULT_NOISE_MEAN,
        seed=seed,
    ).validate(config)


def _grid_cell(ckpt, k, strategy, init, mean, seeds, prompts):
    per_seed = []
    max_abs = 0.0
    for seed in seeds:
        plan = _make_plan(ckpt.config, k, strategy, init, mean, seed)
        extended, _ = apply_extension(ckpt, plan)
        stats = compare_outputs(ckpt, extended, prompts)
        per_seed.append({"seed": seed, "mean_abs": stats["mean_abs"], "max_abs": stats["max_abs"]})
        max_abs = max(max_abs, stats["max_abs"])
    cell = {
        "strategy": strategy,
        "init": init,
        "noise_mean": mean,
        "mean_abs_deviation": sum(s["mean_abs"] for s in per_seed) / len(per_seed),
        "max_abs_deviation": max_abs,
        "per_seed": per_seed,
    }
    return cell
