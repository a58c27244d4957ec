from __future__ import annotations

import json
import os
import struct
import zlib
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .errors import CheckpointError, DataError


FORMAT_VERSION = 1

_DTYPES = {"f": np.dtype("<f8"), "i": np.dtype("<i8"), "u": np.dtype("u1")}
_CODES = {"f": "f", "i": "i", "u": "u", "b": "u"}

HISTORY_COLUMNS = ["epoch", "loss", "fmi", "topology"]


def derive_rng(seed: int, stream: str) -> np.random.Generator:
    """Independent generator for a named stream under one root seed."""
    key = zlib.crc32(stream.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence([int(seed), key]))


def write_arrays(
    path: str | Path,
    magic: bytes,
    arrays: Mapping[str, np.ndarray],
    metadata: Optional[Dict[str, Any]] = None,
) -> None:
    """
    Write named little-endian arrays behind a versioned header.

    Layout: magic (4 bytes), version (u32), array count (u32), then per
    array: name, dtype code, ndim, dims (u64 each) and raw values; finally
    a length-prefixed JSON metadata blob.
    """
    if len(magic) != 4:
        raise ValueError("magic must be 4 bytes")
    chunks = [magic, struct.pack("<II", FORMAT_VERSION, len(arrays))]
    for name, array in arrays.items():
        code = _CODES.get(np.asarray(array).dtype.kind)
        if code is None:
            raise ValueError(f"unsupported dtype for {name}: {np.asarray(array).dtype}")
        data = np.ascontiguousarray(np.asarray(array), dtype=_DTYPES[code])
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<cB", code.encode("ascii"), data.ndim))
        chunks.append(struct.pack(f"<{data.ndim}Q", *data.shape))
        chunks.append(data.tobytes())
    blob = json.dumps(metadata or {}, sort_keys=True).encode("utf-8")
    chunks.append(struct.pack("<Q", len(blob)))
    chunks.append(blob)
    Path(path).write_bytes(b"".join(chunks))


def read_arrays(path: str | Path, magic: bytes) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if raw[:4] != magic:
        raise CheckpointError(f"{path}: bad magic {raw[:4]!r}, expected {magic!r}")
    try:
        version, count = struct.unpack_from("<II", raw, 4)
        if version != FORMAT_VERSION:
            raise CheckpointError(f"{path}: unsupported format version {version}")
        offset = 12
        arrays: Dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", raw, offset)
            offset += 2
            name = raw[offset : offset + name_len].decode("utf-8")
            offset += name_len
            code, ndim = struct.unpack_from("<cB", raw, offset)
            offset += 2
            shape = struct.unpack_from(f"<{ndim}Q", raw, offset)
            offset += 8 * ndim
            dtype = _DTYPES[code.decode("ascii")]
            size = int(np.prod(shape, dtype=np.int64)) if ndim else 1
            nbytes = size * dtype.itemsize
            arrays[name] = np.frombuffer(raw, dtype=dtype, count=size, offset=offset).reshape(shape).copy()
            offset += nbytes
        (blob_len,) = struct.unpack_from("<Q", raw, offset)
        offset += 8
        metadata = json.loads(raw[offset : offset + blob_len].decode("utf-8"))
    except (struct.error, ValueError, KeyError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"{path}: truncated or corrupt file ({exc})") from exc
    return arrays, metadata


def write_embeddings(path: str | Path, node_ids: Sequence[str], embeddings: np.ndarray) -> None:
    """Plain-text export: ``<node-id>\\t<v_1>\\t...\\t<v_D>`` with round-trip precision."""
    lines = []
    for node_id, row in zip(node_ids, embeddings):
        values = "\t".join(format(float(v), ".17g") for v in row)
        lines.append(f"{node_id}\t{values}\n")
    Path(path).write_text("".join(lines), encoding="utf-8")


def read_embeddings(path: str | Path) -> Tuple[list[str], np.ndarray]:
    node_ids: list[str] = []
    rows: list[list[float]] = []
    with Path(path).open("r", encoding="utf-8") as handle:
        for line in handle:
            fields = line.rstrip("\n").split("\t")
            if len(fields) < 2:
                continue
            node_ids.append(fields[0])
            rows.append([float(v) for v in fields[1:]])
    return node_ids, np.asarray(rows, dtype=np.float64)


def write_embeddings_binary(path: str | Path, node_ids: Sequence[str], embeddings: np.ndarray) -> None:
    write_arrays(path, b"GMIE", {"embeddings": embeddings}, {"node_ids": list(node_ids)})


def read_embeddings_binary(path: str | Path) -> Tuple[list[str], np.ndarray]:
    arrays, metadata = read_arrays(path, b"GMIE")
    return list(metadata.get("node_ids", [])), arrays["embeddings"]


def write_loss_history(path: str | Path, history: pd.DataFrame) -> None:
    history[HISTORY_COLUMNS].to_csv(
        path, sep="\t", header=False, index=False, float_format="%.17g", lineterminator="\n"
    )


def read_loss_history(path: str | Path) -> pd.DataFrame:
    if Path(path).stat().st_size == 0:
        return pd.DataFrame(columns=HISTORY_COLUMNS)
    return pd.read_csv(path, sep="\t", header=None, names=HISTORY_COLUMNS, float_precision="round_trip")


def resolve_dataset(dataset: str) -> Dict[str, Optional[Path]]:
    """
    Map a dataset name, directory or cache file onto concrete paths.

    Named datasets live under ``$GMI_DATA_DIR/<name>/<name>.content`` etc.
    """
    candidate = Path(dataset)
    if candidate.suffix == ".gmig":
        return {"cache": candidate, "content": None, "cites": None, "split": None}
    if candidate.is_dir():
        directory = candidate
    else:
        directory = Path(os.getenv("GMI_DATA_DIR", "data")) / dataset
    if not directory.is_dir():
        raise DataError(f"dataset directory not found: {directory}")
    content = sorted(directory.glob("*.content"))
    cites = sorted(directory.glob("*.cites"))
    if not content or not cites:
        raise DataError(f"dataset {directory} needs one *.content and one *.cites file")
    split = sorted(directory.glob("*.split"))
    return {
        "cache": None,
        "content": content[0],
        "cites": cites[0],
        "split": split[0] if split else None,
    }
