"""Single-file tensor container plus JSON model config.

Layout matches the de-facto single-file format: an 8-byte little-endian
header length, a UTF-8 JSON index mapping tensor names to dtype/shape/
data_offsets (relative to the end of the header), then packed tensor
bytes. The config lives in a sibling ``config.json``.

Only float dtypes {F32, F16, BF16} are accepted; surgery math is defined
on floats. bf16 has no numpy dtype, so conversion goes through uint16/
uint32 bit views with round-to-nearest-even on the way back.
"""
import json
import os
import re
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ValidationError

DTYPE_WIDTHS = {"F32": 4, "F16": 2, "BF16": 2}

CONFIG_FIELDS = (
    "num_layers",
    "hidden_size",
    "num_attention_heads",
    "num_kv_heads",
    "intermediate_size",
    "vocab_size",
    "rms_norm_eps",
    "rope_theta",
)

TENSOR_FILE_NAME = "model.safetensors"
CONFIG_FILE_NAME = "config.json"

_LAYER_RE = re.compile(r"^model\.layers\.(\d+)\.")

LAYER_SUFFIXES = (
    "self_attn.q_proj.weight",
    "self_attn.k_proj.weight",
    "self_attn.v_proj.weight",
    "self_attn.o_proj.weight",
    "mlp.gate_proj.weight",
    "mlp.up_proj.weight",
    "mlp.down_proj.weight",
    "input_layernorm.weight",
    "post_attention_layernorm.weight",
)

GLOBAL_NAMES = ("model.embed_tokens.weight", "model.norm.weight", "lm_head.weight")


@dataclass(frozen=True)
class ModelConfig:
    num_layers: int
    hidden_size: int
    num_attention_heads: int
    num_kv_heads: int
    intermediate_size: int
    vocab_size: int
    rms_norm_eps: float = 1e-6
    rope_theta: float = 10000.0

    def validate(self):
        errs = []
        for name in CONFIG_FIELDS[:6]:
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                errs.append(f"{name} must be a positive integer, got {value!r}")
        if self.rms_norm_eps <= 0:
            errs.append(f"rms_norm_eps must be > 0, got {self.rms_norm_eps!r}")
        if self.rope_theta <= 0:
            errs.append(f"rope_theta must be > 0, got {self.rope_theta!r}")
        if errs:
            raise ValidationError(errs)
        if self.hidden_size % self.num_attention_heads:
            errs.append(
                f"hidden_size {self.hidden_size} not divisible by "
                f"num_attention_heads {self.num_attention_heads}"
            )
        if self.num_attention_heads % self.num_kv_heads:
            errs.append(
                f"num_attention_heads {self.num_attention_heads} not divisible by "
                f"num_kv_heads {self.num_kv_heads}"
            )
        if errs:
            raise ValidationError(errs)
        return self

    @property
    def head_dim(self):
        return self.hidden_size // self.num_attention_heads

    @property
    def kv_dim(self):
        return self.head_dim * self.num_kv_heads

    def to_dict(self):
        return {name: getattr(self, name) for name in CONFIG_FIELDS}

    @classmethod
    def from_dict(cls, data):
        missing = [name for name in CONFIG_FIELDS if name not in data]
        if missing:
            raise ValidationError([f"config missing field {name!r}" for name in missing])
        return cls(**{name: data[name] for name in CONFIG_FIELDS}).validate()


@dataclass
class Tensor:
    """One named tensor: dtype tag, shape, raw little-endian bytes."""

    dtype: str
    shape: tuple
    data: bytes

    def __post_init__(self):
        self.shape = tuple(int(s) for s in self.shape)

    @property
    def numel(self):
        n = 1
        for s in self.shape:
            n *= s
        return n

    @property
    def nbytes(self):
        return self.numel * DTYPE_WIDTHS[self.dtype]

    def to_f32(self):
        """Decode to a fresh float32 array (always a copy)."""
        if self.dtype == "F32":
            return np.frombuffer(self.data, dtype="<f4").reshape(self.shape).copy()
        if self.dtype == "F16":
            raw = np.frombuffer(self.data, dtype="<f2").reshape(self.shape)
            return raw.astype(np.float32)
        if self.dtype == "BF16":
            bits = np.frombuffer(self.data, dtype="<u2").astype(np.uint32) << 16
            return bits.view(np.float32).reshape(self.shape).copy()
        raise ValidationError(f"unsupported dtype {self.dtype!r}")

    @classmethod
    def from_f32(cls, arr, dtype):
        """Encode a float32 array into tensor bytes of the given dtype."""
        arr = np.ascontiguousarray(arr, dtype=np.float32)
        if dtype == "F32":
            data = arr.astype("<f4").tobytes()
        elif dtype == "F16":
            data = arr.astype("<f2").tobytes()
        elif dtype == "BF16":
            bits = arr.view(np.uint32)
            # round to nearest even on the dropped 16 bits
            rounded = bits + (np.uint32(0x7FFF) + ((bits >> 16) & np.uint32(1)))
            data = (rounded >> 16).astype("<u2").tobytes()
        else:
            raise ValidationError(f"unsupported dtype {dtype!r}")
        return cls(dtype=dtype, shape=arr.shape, data=data)

    def __eq__(self, other):
        if not isinstance(other, Tensor):
            return NotImplemented
        return (
            self.dtype == other.dtype
            and self.shape == other.shape
            and self.data == other.data
        )


@dataclass
class Checkpoint:
    config: ModelConfig
    tensors: dict = field(default_factory=dict)

    def layer_names(self, i):
        return [f"model.layers.{i}.{suffix}" for suffix in LAYER_SUFFIXES]

    def __eq__(self, other):
        if not isinstance(other, Checkpoint):
            return NotImplemented
        return (
            self.config == other.config
            and list(self.tensors) == list(other.tensors)
            and all(self.tensors[k] == other.tensors[k] for k in self.tensors)
        )


def expected_shapes(config):
    """Name -> shape map for a full checkpoint under the naming scheme."""
    h, kv, inter, vocab = (
        config.hidden_size,
        config.kv_dim,
        config.intermediate_size,
        config.vocab_size,
    )
    per_layer = {
        "self_attn.q_proj.weight": (h, h),
        "self_attn.k_proj.weight": (kv, h),
        "self_attn.v_proj.weight": (kv, h),
        "self_attn.o_proj.weight": (h, h),
        "mlp.gate_proj.weight": (inter, h),
        "mlp.up_proj.weight": (inter, h),
        "mlp.down_proj.weight": (h, inter),
        "input_layernorm.weight": (h,),
        "post_attention_layernorm.weight": (h,),
    }
    shapes = {"model.embed_tokens.weight": (vocab, h)}
    for i in range(config.num_layers):
        for suffix, shape in per_layer.items():
            shapes[f"model.layers.{i}.{suffix}"] = shape
    shapes["model.norm.weight"] = (h,)
    shapes["lm_head.weight"] = (vocab, h)
    return shapes


def canonical_tensor_order(config):
    return list(expected_shapes(config))


def validate_checkpoint(ckpt):
    """Collect every invariant violation; empty list means valid."""
    errs = []
    try:
        ckpt.config.validate()
    except ValidationError as exc:
        errs.extend(exc.errors)
        return errs
    if not ckpt.tensors:
        errs.append("empty checkpoint")
        return errs

    layer_indices = set()
    for name in ckpt.tensors:
        m = _LAYER_RE.match(name)
        if m:
            layer_indices.add(int(m.group(1)))
    if layer_indices:
        lo, hi = min(layer_indices), max(layer_indices)
        if lo != 0 or layer_indices != set(range(hi + 1)):
            errs.append(
                "non-contiguous layer indices: found "
                f"{sorted(layer_indices)}"
            )

    shapes = expected_shapes(ckpt.config)
    for name, shape in shapes.items():
        t = ckpt.tensors.get(name)
        if t is None:
            errs.append(f"missing tensor {name!r}")
            continue
        if t.dtype not in DTYPE_WIDTHS:
            errs.append(f"tensor {name!r}: unsupported dtype {t.dtype!r}")
            continue
        if t.shape != shape:
            errs.append(
                f"tensor {name!r}: shape {t.shape} does not match config "
                f"shape {shape}"
            )
        if len(t.data) != t.nbytes:
            errs.append(
                f"tensor {name!r}: {len(t.data)} bytes, expected {t.nbytes} "
                f"for shape {t.shape} {t.dtype}"
            )
    for name in ckpt.tensors:
        if name not in shapes:
            errs.append(f"unexpected tensor {name!r}")
    return errs


def _resolve_paths(path):
    """Accept a checkpoint directory or the tensor file itself."""
    path = Path(path)
    if path.is_dir() or (not path.exists() and not path.suffix):
        return path / TENSOR_FILE_NAME, path / CONFIG_FILE_NAME
    return path, path.parent / CONFIG_FILE_NAME


def load_checkpoint(path, config_path=None):
    """Load a checkpoint; raises ValidationError listing every problem found."""
    tensor_path, default_cfg = _resolve_paths(path)
    config_path = Path(config_path) if config_path else default_cfg

    if not tensor_path.exists():
        raise FileNotFoundError(tensor_path)
    if not config_path.exists():
        raise FileNotFoundError(config_path)

    with open(config_path, "r", encoding="utf-8") as fh:
        config = ModelConfig.from_dict(json.load(fh))

    blob = tensor_path.read_bytes()
    if len(blob) < 8:
        raise ValidationError(f"malformed header length: file is {len(blob)} bytes")
    (header_len,) = struct.unpack("<Q", blob[:8])
    if 8 + header_len > len(blob):
        raise ValidationError(
            f"malformed header length: header claims {header_len} bytes, "
            f"file holds {len(blob) - 8}"
        )
    try:
        index = json.loads(blob[8 : 8 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ValidationError(f"malformed header JSON: {exc}")
    if not isinstance(index, dict):
        raise ValidationError("malformed header JSON: index is not an object")

    data = blob[8 + header_len :]
    errs = []
    tensors = {}
    claimed = []
    for name, entry in index.items():
        if name == "__metadata__":
            continue
        dtype = entry.get("dtype")
        shape = entry.get("shape")
        offsets = entry.get("data_offsets")
        if dtype not in DTYPE_WIDTHS:
            errs.append(f"tensor {name!r}: unsupported dtype {dtype!r}")
            continue
        if not isinstance(shape, list) or any(
            not isinstance(s, int) or s < 0 for s in shape
        ):
            errs.append(f"tensor {name!r}: bad shape {shape!r}")
            continue
        if (
            not isinstance(offsets, list)
            or len(offsets) != 2
            or not all(isinstance(o, int) for o in offsets)
        ):
            errs.append(f"tensor {name!r}: bad data_offsets {offsets!r}")
            continue
        begin, end = offsets
        if begin < 0 or end < begin or end > len(data):
            errs.append(
                f"tensor {name!r}: out-of-bounds extent [{begin}, {end}) in "
                f"{len(data)} data bytes"
            )
            continue
        numel = 1
        for s in shape:
            numel *= s
        if end - begin != numel * DTYPE_WIDTHS[dtype]:
            errs.append(
                f"tensor {name!r}: extent holds {end - begin} bytes, shape "
                f"{shape} {dtype} needs {numel * DTYPE_WIDTHS[dtype]}"
            )
            continue
        claimed.append((begin, end, name))
        tensors[name] = Tensor(dtype=dtype, shape=tuple(shape), data=data[begin:end])

    claimed.sort()
    for (b1, e1, n1), (b2, e2, n2) in zip(claimed, claimed[1:]):
        if e1 > b2:
            errs.append(f"overlapping extents: {n1!r} [{b1},{e1}) and {n2!r} [{b2},{e2})")

    ckpt = Checkpoint(config=config, tensors=tensors)
    errs.extend(validate_checkpoint(ckpt))
    if errs:
        raise ValidationError(errs)
    return ckpt


def save_checkpoint(ckpt, path, config_path=None):
    """Write the container + config. Refuses invalid checkpoints before any write.

    The write is atomic: tensors and config land via temp files renamed over
    the destinations, so a failure leaves existing files untouched.
    """
    errs = validate_checkpoint(ckpt)
    if errs:
        raise ValidationError(errs)

    tensor_path, default_cfg = _resolve_paths(path)
    config_path = Path(config_path) if config_path else default_cfg
    tensor_path.parent.mkdir(parents=True, exist_ok=True)

    index = {}
    offset = 0
    chunks = []
    for name, t in ckpt.tensors.items():
        index[name] = {
            "dtype": t.dtype,
            "shape": list(t.shape),
            "data_offsets": [offset, offset + len(t.data)],
        }
        chunks.append(t.data)
        offset += len(t.data)
    header = json.dumps(index, separators=(",", ":"), ensure_ascii=False).encode("utf-8")

    _atomic_write(tensor_path, struct.pack("<Q", len(header)) + header + b"".join(chunks))
    cfg_blob = (
        json.dumps(ckpt.config.to_dict(), sort_keys=True, indent=2) + "\n"
    ).encode("utf-8")
    _atomic_write(config_path, cfg_blob)


def _atomic_write(path, blob):
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
