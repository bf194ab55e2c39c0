"""Model configuration, the LATX weight container, and random model generation.

LATX layout (all integers little-endian)::

    b"LATX" | u32 version (=1) | u64 header length | UTF-8 JSON header | blob

The JSON header is ``{"config": {...}, "tensors": [{"name", "shape", "dtype",
"offset"}, ...]}``. Offsets are relative to the start of the blob and 64-byte
aligned; the header is space-padded so the blob itself starts on a 64-byte
boundary of the file. Tensor data is raw little-endian float32, row-major.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterator, Mapping

import numpy as np

MAGIC = b"LATX"
VERSION = 1
ALIGN = 64
_PREAMBLE = struct.Struct("<4sIQ")

MODES = ("encoder", "decoder")


class ConfigError(ValueError):
    pass


class ModelFormatError(Exception):
    """Base class for LATX load failures."""


class BadMagicError(ModelFormatError):
    pass


class VersionMismatchError(ModelFormatError):
    pass


class MissingTensorError(ModelFormatError):
    def __init__(self, name: str):
        super().__init__(f"missing tensor: {name}")
        self.name = name


class ShapeMismatchError(ModelFormatError):
    def __init__(self, name: str, expected: tuple, actual: tuple):
        super().__init__(f"shape mismatch for {name}: expected {list(expected)}, got {list(actual)}")
        self.name = name
        self.expected = expected
        self.actual = actual


class TruncatedPayloadError(ModelFormatError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    num_layers: int
    hidden_size: int
    num_heads: int
    max_seq: int
    vocab_size: int
    num_labels: int = 2
    intermediate_size: int | None = None
    mode: str = "encoder"
    layer_norm_eps: float = 1e-12
    tie_lm_head: bool = False

    def __post_init__(self):
        if self.intermediate_size is None:
            object.__setattr__(self, "intermediate_size", 4 * self.hidden_size)
        self.validate()

    def validate(self) -> None:
        for name in ("num_layers", "hidden_size", "num_heads", "max_seq", "vocab_size",
                     "num_labels", "intermediate_size"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or isinstance(value, bool) or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if self.hidden_size % self.num_heads:
            raise ConfigError(
                f"hidden_size {self.hidden_size} is not divisible by num_heads {self.num_heads}"
            )
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not self.layer_norm_eps > 0:
            raise ConfigError("layer_norm_eps must be positive")

    @property
    def head_dim(self) -> int:
        return self.hidden_size // self.num_heads

    @property
    def causal(self) -> bool:
        return self.mode == "decoder"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as e:
            raise ConfigError(str(e)) from None


BERT_BASE = dict(num_layers=12, hidden_size=768, num_heads=12, max_seq=512,
                 vocab_size=30522, num_labels=2)


def load_config(path: str | os.PathLike) -> ModelConfig:
    """Read a standalone JSON config, or the config embedded in a LATX file."""
    with open(path, "rb") as f:
        head = f.read(4)
    if head == MAGIC:
        return _read_header(Path(path).read_bytes())[0]
    with open(path, encoding="utf-8") as f:
        data = json.load(f)
    if "config" in data and isinstance(data["config"], dict):
        data = data["config"]
    return ModelConfig.from_dict(data)


def expected_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Tensor name -> shape for every tensor the config requires, in file order."""
    H, I = config.hidden_size, config.intermediate_size
    shapes: dict[str, tuple[int, ...]] = {
        "embed.word": (config.vocab_size, H),
        "embed.pos": (config.max_seq, H),
        "embed.ln.g": (H,),
        "embed.ln.b": (H,),
    }
    for l in range(config.num_layers):
        p = f"enc.{l}"
        for proj in "qkvo":
            shapes[f"{p}.att.{proj}.w"] = (H, H)
            shapes[f"{p}.att.{proj}.b"] = (H,)
        shapes[f"{p}.ln1.g"] = (H,)
        shapes[f"{p}.ln1.b"] = (H,)
        shapes[f"{p}.ffn.w1"] = (I, H)
        shapes[f"{p}.ffn.b1"] = (I,)
        shapes[f"{p}.ffn.w2"] = (H, I)
        shapes[f"{p}.ffn.b2"] = (H,)
        shapes[f"{p}.ln2.g"] = (H,)
        shapes[f"{p}.ln2.b"] = (H,)
    if config.mode == "encoder":
        shapes["pooler.w"] = (H, H)
        shapes["pooler.b"] = (H,)
        shapes["cls.w"] = (config.num_labels, H)
        shapes["cls.b"] = (config.num_labels,)
    elif not config.tie_lm_head:
        shapes["lm_head.w"] = (config.vocab_size, H)
    return shapes


@dataclass(frozen=True)
class LayerWeights:
    q_w: np.ndarray
    q_b: np.ndarray
    k_w: np.ndarray
    k_b: np.ndarray
    v_w: np.ndarray
    v_b: np.ndarray
    o_w: np.ndarray
    o_b: np.ndarray
    ln1_g: np.ndarray
    ln1_b: np.ndarray
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    ln2_g: np.ndarray
    ln2_b: np.ndarray


class WeightStore(Mapping):
    """Read-only mapping of tensor name -> float32 array."""

    def __init__(self, tensors: Mapping[str, np.ndarray]):
        self._tensors: dict[str, np.ndarray] = {}
        for name, arr in tensors.items():
            a = np.ascontiguousarray(arr, dtype=np.float32)
            a.setflags(write=False)
            self._tensors[name] = a

    def __getitem__(self, name: str) -> np.ndarray:
        return self._tensors[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def num_parameters(self) -> int:
        return sum(a.size for a in self._tensors.values())

    def layer(self, l: int) -> LayerWeights:
        p = f"enc.{l}"
        t = self._tensors
        return LayerWeights(
            q_w=t[f"{p}.att.q.w"], q_b=t[f"{p}.att.q.b"],
            k_w=t[f"{p}.att.k.w"], k_b=t[f"{p}.att.k.b"],
            v_w=t[f"{p}.att.v.w"], v_b=t[f"{p}.att.v.b"],
            o_w=t[f"{p}.att.o.w"], o_b=t[f"{p}.att.o.b"],
            ln1_g=t[f"{p}.ln1.g"], ln1_b=t[f"{p}.ln1.b"],
            w1=t[f"{p}.ffn.w1"], b1=t[f"{p}.ffn.b1"],
            w2=t[f"{p}.ffn.w2"], b2=t[f"{p}.ffn.b2"],
            ln2_g=t[f"{p}.ln2.g"], ln2_b=t[f"{p}.ln2.b"],
        )

    def lm_head(self) -> np.ndarray:
        return self._tensors.get("lm_head.w", self._tensors["embed.word"])

    def equals(self, other: "WeightStore") -> bool:
        """Bitwise equality of names, shapes and contents."""
        if set(self) != set(other):
            return False
        return all(
            self[n].shape == other[n].shape and self[n].tobytes() == other[n].tobytes()
            for n in self
        )


def validate_store(config: ModelConfig, tensors: Mapping[str, np.ndarray]) -> None:
    expected = expected_shapes(config)
    for name, shape in expected.items():
        if name not in tensors:
            raise MissingTensorError(name)
        actual = tuple(np.shape(tensors[name]))
        if actual != shape:
            raise ShapeMismatchError(name, shape, actual)
    extra = sorted(set(tensors) - set(expected))
    if extra:
        raise ModelFormatError(f"unexpected tensors: {extra}")


@dataclass(frozen=True)
class Model:
    config: ModelConfig
    weights: WeightStore = field(repr=False)

    @classmethod
    def load(cls, path: str | os.PathLike) -> "Model":
        return cls(*load_model(path))

    @classmethod
    def random(cls, config: ModelConfig, seed: int = 0) -> "Model":
        return cls(config, generate_random_model(config, seed))


def _align(n: int) -> int:
    return -(-n // ALIGN) * ALIGN


def save_model(config: ModelConfig, store: Mapping[str, np.ndarray], path: str | os.PathLike) -> None:
    validate_store(config, store)
    entries = []
    offset = 0
    order = list(expected_shapes(config))
    for name in order:
        entries.append({"name": name, "shape": list(store[name].shape), "dtype": "f32",
                        "offset": offset})
        offset = _align(offset + 4 * int(np.prod(store[name].shape, dtype=np.int64)))
    header = json.dumps({"config": config.to_dict(), "tensors": entries},
                        separators=(",", ":")).encode("utf-8")
    header += b" " * (_align(_PREAMBLE.size + len(header)) - _PREAMBLE.size - len(header))

    with open(path, "wb") as f:
        f.write(_PREAMBLE.pack(MAGIC, VERSION, len(header)))
        f.write(header)
        pos = 0
        for entry, name in zip(entries, order):
            f.write(b"\0" * (entry["offset"] - pos))
            data = np.asarray(store[name], dtype="<f4").tobytes()
            f.write(data)
            pos = entry["offset"] + len(data)


def _read_header(buf: bytes) -> tuple[ModelConfig, list[dict], int]:
    if buf[:4] != MAGIC:
        raise BadMagicError(f"bad magic {bytes(buf[:4])!r}, expected {MAGIC!r}")
    if len(buf) < _PREAMBLE.size:
        raise TruncatedPayloadError("file ends inside the LATX preamble")
    _, version, header_len = _PREAMBLE.unpack_from(buf)
    if version != VERSION:
        raise VersionMismatchError(f"unsupported LATX version {version}, expected {VERSION}")
    blob_start = _PREAMBLE.size + header_len
    if blob_start > len(buf):
        raise TruncatedPayloadError("file ends inside the JSON header")
    try:
        header = json.loads(buf[_PREAMBLE.size:blob_start].decode("utf-8"))
        config = ModelConfig.from_dict(header["config"])
        entries = list(header["tensors"])
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as e:
        raise ModelFormatError(f"malformed header: {e}") from None
    return config, entries, blob_start


def load_model(path: str | os.PathLike) -> tuple[ModelConfig, WeightStore]:
    buf = Path(path).read_bytes()
    config, entries, blob_start = _read_header(buf)
    blob = memoryview(buf)[blob_start:]

    expected = expected_shapes(config)
    by_name = {}
    for e in entries:
        if e.get("dtype") != "f32":
            raise ModelFormatError(f"unsupported dtype {e.get('dtype')!r} for {e.get('name')}")
        if e["offset"] % ALIGN:
            raise ModelFormatError(f"tensor {e['name']} offset {e['offset']} is not {ALIGN}-byte aligned")
        by_name[e["name"]] = e
    for name, shape in expected.items():
        if name not in by_name:
            raise MissingTensorError(name)
        if tuple(by_name[name]["shape"]) != shape:
            raise ShapeMismatchError(name, shape, tuple(by_name[name]["shape"]))
    extra = sorted(set(by_name) - set(expected))
    if extra:
        raise ModelFormatError(f"unexpected tensors: {extra}")

    tensors = {}
    for name, shape in expected.items():
        off = by_name[name]["offset"]
        nbytes = 4 * int(np.prod(shape, dtype=np.int64))
        if off + nbytes > len(blob):
            raise TruncatedPayloadError(
                f"tensor {name} needs bytes [{off}, {off + nbytes}) but blob has {len(blob)}"
            )
        tensors[name] = np.frombuffer(blob, dtype="<f4", count=nbytes // 4, offset=off).reshape(shape)
    return config, WeightStore(tensors)


def generate_random_model(config: ModelConfig, seed: int) -> WeightStore:
    """Fill every tensor uniformly from [-0.1, 0.1] in file order; deterministic per seed."""
    rng = np.random.default_rng(seed)
    return WeightStore({
        name: rng.uniform(-0.1, 0.1, size=shape).astype(np.float32)
        for name, shape in expected_shapes(config).items()
    })


def parameter_count(config: ModelConfig) -> int:
    return sum(int(np.prod(s)) for s in expected_shapes(config).values())
