"""The ``TRNK1`` checkpoint container shared by acoustic models and LMs.

Layout (little-endian)::

    b"TRNK1\\n"
    u32 header_len, header_len bytes of UTF-8 JSON
        {"kind": "asr" | "lm", "config": {...}, "vocab": [...], "meta": {...}}
    u32 n_tensors, then per tensor:
        u16 name_len, name (UTF-8), u8 ndim, ndim x u32 dims,
        prod(dims) x f64 row-major payload
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import torch

from .corpus import Vocabulary
from .langmodel import CharLM, LMConfig
from .network import ModelConfig, build_model

MAGIC = b"TRNK1\n"


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    kind: str
    config: dict
    vocab: List[str]
    tensors: Dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)


def write_checkpoint(path: Union[str, Path], ckpt: Checkpoint) -> None:
    header = json.dumps({"kind": ckpt.kind, "config": ckpt.config, "vocab": ckpt.vocab,
                         "meta": ckpt.meta}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        f.write(struct.pack("<I", len(ckpt.tensors)))
        for name, arr in ckpt.tensors.items():
            arr = np.array(arr, dtype="<f8", order="C")
            raw = name.encode("utf-8")
            f.write(struct.pack("<H", len(raw)) + raw)
            f.write(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())


def read_checkpoint(path: Union[str, Path]) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint {path} does not exist")
    data = path.read_bytes()
    if not data.startswith(MAGIC):
        raise CheckpointError(f"{path}: not a TRNK1 checkpoint")
    try:
        pos = len(MAGIC)
        (hlen,) = struct.unpack_from("<I", data, pos)
        pos += 4
        header = json.loads(data[pos:pos + hlen].decode("utf-8"))
        pos += hlen
        (n,) = struct.unpack_from("<I", data, pos)
        pos += 4
        tensors = {}
        for _ in range(n):
            (nlen,) = struct.unpack_from("<H", data, pos)
            pos += 2
            name = data[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (ndim,) = struct.unpack_from("<B", data, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}I", data, pos)
            pos += 4 * ndim
            count = int(np.prod(shape)) if ndim else 1
            arr = np.frombuffer(data, dtype="<f8", count=count, offset=pos).reshape(shape)
            pos += 8 * count
            tensors[name] = arr.astype(np.float64)
    except (struct.error, ValueError, UnicodeDecodeError) as e:
        raise CheckpointError(f"{path}: truncated or corrupt checkpoint ({e})") from None
    if pos != len(data):
        raise CheckpointError(f"{path}: {len(data) - pos} trailing bytes")
    return Checkpoint(header["kind"], header["config"], header["vocab"], tensors, header.get("meta", {}))


def _tensors(module: torch.nn.Module) -> Dict[str, np.ndarray]:
    return {k: v.detach().cpu().numpy().astype(np.float64) for k, v in module.state_dict().items()}


def _load_state(module: torch.nn.Module, tensors: Dict[str, np.ndarray]) -> None:
    own = module.state_dict()
    if set(own) != set(tensors):
        raise CheckpointError("checkpoint tensors do not match the model built from its config")
    module.load_state_dict({k: torch.as_tensor(v, dtype=own[k].dtype) for k, v in tensors.items()})


def save_model(path, model: torch.nn.Module, vocab: Vocabulary, meta: Optional[dict] = None) -> None:
    if model.config.vocab_size != vocab.num_outputs:
        raise CheckpointError("model output size does not match the vocabulary")
    write_checkpoint(path, Checkpoint("asr", model.config.to_dict(), list(vocab.units), _tensors(model), meta or {}))


def load_model(path) -> Tuple[torch.nn.Module, Vocabulary, dict]:
    ckpt = read_checkpoint(path)
    if ckpt.kind != "asr":
        raise CheckpointError(f"{path}: holds a {ckpt.kind!r} checkpoint, not an acoustic model")
    model = build_model(ModelConfig(**ckpt.config))
    _load_state(model, ckpt.tensors)
    return model.eval(), Vocabulary(ckpt.vocab), ckpt.meta


def save_lm(path, lm: CharLM, vocab: Vocabulary, meta: Optional[dict] = None) -> None:
    if lm.config.vocab_size != vocab.num_outputs:
        raise CheckpointError("LM output size does not match the vocabulary")
    write_checkpoint(path, Checkpoint("lm", asdict(lm.config), list(vocab.units), _tensors(lm), meta or {}))


def load_lm(path) -> Tuple[CharLM, Vocabulary, dict]:
    ckpt = read_checkpoint(path)
    if ckpt.kind != "lm":
        raise CheckpointError(f"{path}: holds a {ckpt.kind!r} checkpoint, not a language model")
    lm = CharLM(LMConfig(**ckpt.config))
    _load_state(lm, ckpt.tensors)
    return lm.eval(), Vocabulary(ckpt.vocab), ckpt.meta
