"""Self-describing binary checkpoint format.

Layout (all integers little-endian)::

    magic      8 bytes  b"DFNETCKP"
    version    u32
    meta_len   u32, then meta_len bytes of UTF-8 "key=value" lines
    n_records  u32, then per record:
        name_len u16, name (UTF-8)
        ndim     u8, then ndim x u64 extents
        data     prod(extents) x float64

Record names carry a section prefix: ``param/``, ``buffer/``, ``adam.m/``
and ``adam.v/``.  The meta block holds every DFNetConfig field plus
``adam_step`` and any run metadata.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .model import DFNet, DFNetConfig
from .optim import AdamState, ParamGroup

MAGIC = b"DFNETCKP"
VERSION = 1


class CheckpointError(ValueError):
    pass


def write_records(path: str | Path, meta: dict[str, str], records: dict[str, np.ndarray]) -> None:
    chunks = [MAGIC, struct.pack("<I", VERSION)]
    for key, value in meta.items():
        if "=" in key or "\n" in key or "\n" in str(value):
            raise CheckpointError(f"meta entry {key!r} cannot be encoded")
    text = "".join(f"{k}={v}\n" for k, v in meta.items()).encode("utf-8")
    chunks += [struct.pack("<I", len(text)), text, struct.pack("<I", len(records))]
    for name, arr in records.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(arr.tobytes())
    try:
        Path(path).write_bytes(b"".join(chunks))
    except OSError as exc:
        raise CheckpointError(f"cannot write checkpoint {path}: {exc}") from exc


def read_records(path: str | Path) -> tuple[dict[str, str], dict[str, np.ndarray]]:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if buf[:8] != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint (bad magic)")
    pos = 8

    def take(fmt: str):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(buf):
            raise CheckpointError(f"{path} is truncated")
        out = struct.unpack_from(fmt, buf, pos)
        pos += size
        return out

    (version,) = take("<I")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (meta_len,) = take("<I")
    text = buf[pos:pos + meta_len].decode("utf-8")
    pos += meta_len
    meta = dict(line.split("=", 1) for line in text.splitlines() if line)
    (count,) = take("<I")
    records = {}
    for _ in range(count):
        (name_len,) = take("<H")
        name = buf[pos:pos + name_len].decode("utf-8")
        pos += name_len
        (ndim,) = take("<B")
        shape = take(f"<{ndim}Q")
        n = int(np.prod(shape, dtype=np.int64))
        if pos + 8 * n > len(buf):
            raise CheckpointError(f"{path} is truncated in record {name}")
        records[name] = np.frombuffer(buf, dtype="<f8", count=n, offset=pos).reshape(shape).astype(np.float64)
        pos += 8 * n
    if pos != len(buf):
        raise CheckpointError(f"{path} has {len(buf) - pos} trailing bytes")
    return meta, records


def save_checkpoint(path: str | Path, net: DFNet, group: ParamGroup | None = None,
                    extra: dict[str, str] | None = None) -> None:
    meta = dict(net.config.to_items())
    meta["adam_step"] = str(group.step if group is not None else 0)
    meta.update(extra or {})
    records: dict[str, np.ndarray] = {}
    for name, p in net.named_parameters().items():
        records[f"param/{name}"] = p.data
    for name, b in net.named_buffers().items():
        records[f"buffer/{name}"] = b
    if group is not None:
        for name, st in group.state.items():
            records[f"adam.m/{name}"] = st.m
            records[f"adam.v/{name}"] = st.v
    write_records(path, meta, records)


def load_checkpoint(path: str | Path) -> tuple[DFNet, ParamGroup, dict[str, str]]:
    """Rebuild the network, its Adam state and the stored metadata."""
    meta, records = read_records(path)
    net = DFNet(DFNetConfig.from_items(meta))
    params = net.named_parameters()
    buffers = net.named_buffers()
    for name, p in params.items():
        key = f"param/{name}"
        if key not in records or records[key].shape != p.shape:
            raise CheckpointError(f"checkpoint lacks parameter {name} with shape {p.shape}")
        p.data[...] = records[key]
    for name, b in buffers.items():
        key = f"buffer/{name}"
        if key not in records:
            raise CheckpointError(f"checkpoint lacks buffer {name}")
        b[...] = records[key]
    state = {}
    for name, p in params.items():
        m, v = records.get(f"adam.m/{name}"), records.get(f"adam.v/{name}")
        state[name] = AdamState(m.copy(), v.copy()) if m is not None and v is not None else \
            AdamState(np.zeros_like(p.data), np.zeros_like(p.data))
    group = ParamGroup(params, state, int(meta.get("adam_step", "0")))
    return net, group, meta
