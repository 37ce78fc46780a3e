"""
Checkpoint files.

Layout (little-endian):

    magic "VFSK" | u8 version | u32 metadata length | metadata (UTF-8 JSON)
    u32 entry count
    entry: u16 name length | name (UTF-8) | tensor in the VFST format

Entry names are prefixed with their role: param/, buffer/, target/,
target_buffer/, velocity/ and bank/entries.
"""

import json
import os
import struct
from dataclasses import asdict
from typing import Dict, List, Tuple

import numpy as np

from .errors import FormatError
from .model import ArchSpec, EncoderParams
from .objectives import NegativeBank
from .tensor import Tensor
from .tensor_io import decode_tensor, encode_tensor
from .trainer import SiameseState

MAGIC = b"VFSK"
VERSION = 1

_HEADER = struct.Struct("<4sBI")
_COUNT = struct.Struct("<I")
_NAME_LEN = struct.Struct("<H")


def _entries(state: SiameseState) -> List[Tuple[str, np.ndarray]]:
    entries = [(f"param/{n}", t.data) for n, t in state.params.tensors.items()]
    entries += [(f"buffer/{n}", b) for n, b in state.params.buffers.items()]
    if state.target_params is not None:
        entries += [(f"target/{n}", t.data) for n, t in state.target_params.tensors.items()]
        entries += [(f"target_buffer/{n}", b) for n, b in state.target_params.buffers.items()]
    entries += [(f"velocity/{n}", v) for n, v in state.velocity.items()]
    if state.bank is not None:
        entries.append(("bank/entries", state.bank.entries))
    return entries


def encode_checkpoint(state: SiameseState) -> bytes:
    arch = asdict(state.arch)
    meta = {
        "step": state.step,
        "rng_state": state.rng_state,
        "arch": {k: list(v) if isinstance(v, tuple) else v for k, v in arch.items()},
        "has_target": state.target_params is not None,
        "bank": None if state.bank is None else {
            "capacity": state.bank.capacity, "dim": state.bank.dim,
            "cursor": state.bank.cursor, "filled": state.bank.filled,
        },
    }
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    parts = [_HEADER.pack(MAGIC, VERSION, len(meta_bytes)), meta_bytes]
    entries = _entries(state)
    parts.append(_COUNT.pack(len(entries)))
    for name, array in entries:
        raw = name.encode("utf-8")
        parts += [_NAME_LEN.pack(len(raw)), raw, encode_tensor(np.ascontiguousarray(array))]
    return b"".join(parts)


def save_checkpoint(state: SiameseState, path: str) -> None:
    """Write atomically: the file either holds the old or the new checkpoint."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(encode_checkpoint(state))
    os.replace(tmp, path)


def _take(buffer: bytes, offset: int, fmt: struct.Struct, what: str):
    if len(buffer) - offset < fmt.size:
        raise FormatError(f"truncated {what}", offset)
    return fmt.unpack_from(buffer, offset), offset + fmt.size


def decode_checkpoint(buffer: bytes) -> SiameseState:
    (magic, version, meta_len), offset = _take(buffer, 0, _HEADER, "checkpoint header")
    if magic != MAGIC:
        raise FormatError(f"bad checkpoint magic {magic!r}", 0)
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", 4)
    if len(buffer) - offset < meta_len:
        raise FormatError("truncated checkpoint metadata", offset)
    try:
        meta = json.loads(buffer[offset:offset + meta_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"unreadable checkpoint metadata: {exc}", offset) from exc
    offset += meta_len

    (count,), offset = _take(buffer, offset, _COUNT, "entry count")
    tables: Dict[str, Dict[str, np.ndarray]] = {}
    for _ in range(count):
        (name_len,), offset = _take(buffer, offset, _NAME_LEN, "entry name length")
        if len(buffer) - offset < name_len:
            raise FormatError("truncated entry name", offset)
        try:
            name = buffer[offset:offset + name_len].decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError("entry name is not UTF-8", offset) from exc
        offset += name_len
        role, _, key = name.partition("/")
        array, offset = decode_tensor(buffer, offset)
        tables.setdefault(role, {})[key] = array
    if offset != len(buffer):
        raise FormatError("trailing bytes after checkpoint entries", offset)

    try:
        arch_values = dict(meta["arch"])
        for key in ("channels", "strides"):
            arch_values[key] = tuple(arch_values[key])
        arch = ArchSpec(**arch_values)
        params = EncoderParams({n: Tensor(a, requires_grad=True, name=n) for n, a in tables["param"].items()},
                               tables.get("buffer", {}))
        target = None
        if meta["has_target"]:
            target = EncoderParams({n: Tensor(a, requires_grad=False, name=n) for n, a in tables["target"].items()},
                                   tables.get("target_buffer", {}))
        bank = None
        if meta["bank"] is not None:
            info = meta["bank"]
            entries = tables["bank"]["entries"]
            bank = NegativeBank(info["capacity"], info["dim"], entries.dtype)
            bank.entries = entries
            bank.cursor = int(info["cursor"])
            bank.filled = int(info["filled"])
        return SiameseState(arch=arch, params=params, target_params=target, bank=bank,
                            velocity=dict(tables.get("velocity", {})), step=int(meta["step"]),
                            rng_state=int(meta["rng_state"]))
    except (KeyError, TypeError) as exc:
        raise FormatError(f"checkpoint is missing required content: {exc}", offset) from exc


def load_checkpoint(path: str) -> SiameseState:
    with open(path, "rb") as f:
        return decode_checkpoint(f.read())
