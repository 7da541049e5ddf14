"""Versioned binary checkpoint format.

Byte layout (all integers little-endian)::

    offset 0   8 bytes   magic b"SVSCKPT\\0"
    offset 8   u32       format version (currently 1)
    offset 12  u64       header length H in bytes
    offset 20  H bytes   UTF-8 JSON header, keys sorted
    offset 20+H          tensor data, concatenated in header order

The header holds ``config`` (the model config), ``config_hash`` (sha256 of
the canonical config JSON), ``mel_stats`` ({"lo", "hi"} used to normalize
log-mels to [-1, 1]), ``step``, ``rng_state`` (numpy bit-generator state of
the training sampler) and ``tensors``: a list of ``{name, dtype, shape,
offset, nbytes}`` where ``offset`` is relative to the start of tensor data
and ``dtype`` is a numpy little-endian code such as ``"<f4"``. Optimizer
moments are stored as ordinary tensors under the ``optim/`` prefix.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .dsp import LOG_FLOOR_VALUE, SpectralConfig

MAGIC = b"SVSCKPT\0"
FORMAT_VERSION = 1
VARIANTS = ("svs", "svc-b", "svc-c")


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    """Everything inference depends on; hashed into every checkpoint."""

    variant: str = "svs"
    channels: int = 128
    dilations: tuple[int, ...] = (1, 2, 4, 8)
    num_steps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 2e-2
    spectral: SpectralConfig = field(default_factory=SpectralConfig)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown model variant {self.variant!r}; expected one of {VARIANTS}")

    def to_json(self) -> dict:
        d = asdict(self)
        d["dilations"] = list(self.dilations)
        return d

    @classmethod
    def from_json(cls, data: dict) -> "ModelConfig":
        data = dict(data)
        data["dilations"] = tuple(data["dilations"])
        data["spectral"] = SpectralConfig(**data["spectral"])
        return cls(**data)

    def hash(self) -> str:
        canon = json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()


@dataclass(frozen=True)
class MelStats:
    """Affine map from log-mel to the model's [-1, 1] range."""

    lo: float = LOG_FLOOR_VALUE
    hi: float = 0.0

    def normalize(self, log_mel: np.ndarray) -> np.ndarray:
        return 2.0 * (np.asarray(log_mel) - self.lo) / (self.hi - self.lo) - 1.0

    def denormalize(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x) + 1.0) / 2.0 * (self.hi - self.lo) + self.lo


@dataclass
class Checkpoint:
    config: ModelConfig
    state: dict[str, torch.Tensor]
    mel_stats: MelStats
    step: int = 0
    rng_state: dict | None = None
    optim_state: dict[str, torch.Tensor] = field(default_factory=dict)

    @property
    def config_hash(self) -> str:
        return self.config.hash()


def _header_json(ckpt: Checkpoint, index: list[dict]) -> bytes:
    header = {
        "config": ckpt.config.to_json(),
        "config_hash": ckpt.config_hash,
        "mel_stats": asdict(ckpt.mel_stats),
        "step": ckpt.step,
        "rng_state": ckpt.rng_state,
        "tensors": index,
    }
    return json.dumps(header, sort_keys=True, separators=(",", ":")).encode()


def to_bytes(ckpt: Checkpoint) -> bytes:
    index, chunks, offset = [], [], 0
    named = [(k, v) for k, v in ckpt.state.items()] + [(f"optim/{k}", v) for k, v in ckpt.optim_state.items()]
    for name, tensor in named:
        arr = tensor.detach().cpu().numpy()
        arr = np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<"))
        raw = arr.tobytes()
        index.append({"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header = _header_json(ckpt, index)
    return MAGIC + struct.pack("<IQ", FORMAT_VERSION, len(header)) + header + b"".join(chunks)


def from_bytes(raw: bytes) -> Checkpoint:
    if raw[:8] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    version, hlen = struct.unpack("<IQ", raw[8:20])
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    header = json.loads(raw[20 : 20 + hlen])
    config = ModelConfig.from_json(header["config"])
    if config.hash() != header["config_hash"]:
        raise CheckpointError("checkpoint config hash does not match its config")
    base = 20 + hlen
    state, optim = {}, {}
    for entry in header["tensors"]:
        start = base + entry["offset"]
        arr = np.frombuffer(raw[start : start + entry["nbytes"]], dtype=np.dtype(entry["dtype"]))
        tensor = torch.from_numpy(arr.reshape(entry["shape"]).copy())
        name = entry["name"]
        if name.startswith("optim/"):
            optim[name[len("optim/") :]] = tensor
        else:
            state[name] = tensor
    return Checkpoint(config, state, MelStats(**header["mel_stats"]), header["step"], header["rng_state"], optim)


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> Path:
    path = Path(path)
    path.write_bytes(to_bytes(ckpt))
    return path


def load_checkpoint(path: str | Path, expect: ModelConfig | None = None) -> Checkpoint:
    """Read a checkpoint; with ``expect``, refuse one built under a different config."""
    ckpt = from_bytes(Path(path).read_bytes())
    if expect is not None and expect.hash() != ckpt.config_hash:
        raise CheckpointError(
            f"config hash mismatch: checkpoint {ckpt.config_hash[:12]} vs runtime {expect.hash()[:12]}"
        )
    return ckpt
