"""Single-file checkpoint container.

Layout::

    b"BEEXCKPT"                 8-byte magic
    uint64 little-endian        header length N
    N bytes                     UTF-8 JSON header (config, tensor manifest, meta)
    zero padding                to an 8-byte boundary
    payloads                    one per manifest entry, each 8-byte aligned

Manifest entries carry ``name``, ``dtype`` (``float32`` or ``packed``),
``shape``, ``offset`` (relative to the first payload) and ``nbytes``.
Packed entries are rows of little-endian uint64 words with zero pad bits;
``pad_bits`` records how many bits per row are padding.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .binarize import FrozenParameter
from .config import model_config_from_dict
from .errors import ConfigError, FormatError
from .model import BEExformer, FrozenModel
from .packed import PackedMatrix, WORD_BITS, words_per_row

MAGIC = b"BEEXCKPT"
VERSION = 1


def _align(n: int) -> int:
    return -(-n // 8) * 8


def _write(path, kind: str, config, entries: list[tuple[dict, bytes]], meta: dict | None) -> None:
    manifest, offset = [], 0
    for info, payload in entries:
        manifest.append({**info, "offset": offset, "nbytes": len(payload)})
        offset = _align(offset + len(payload))
    header = json.dumps({
        "format_version": VERSION,
        "kind": kind,
        "config": config.__dict__,
        "tensors": manifest,
        "meta": meta or {},
    }, sort_keys=True).encode("utf-8")
    start = _align(len(MAGIC) + 8 + len(header))
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<Q", len(header)) + header)
        fh.write(b"\0" * (start - len(MAGIC) - 8 - len(header)))
        pos = 0
        for (info, payload), entry in zip(entries, manifest):
            fh.write(b"\0" * (entry["offset"] - pos))
            fh.write(payload)
            pos = entry["offset"] + len(payload)
        fh.write(b"\0" * (_align(pos) - pos))


def _f32_entry(name: str, values: np.ndarray) -> tuple[dict, bytes]:
    arr = np.ascontiguousarray(values, dtype="<f4")
    return {"name": name, "dtype": "float32", "shape": list(arr.shape)}, arr.tobytes()


def _packed_entry(name: str, packed: PackedMatrix) -> tuple[dict, bytes]:
    n = words_per_row(packed.cols)
    info = {"name": name, "dtype": "packed", "shape": [packed.rows, packed.cols],
            "words_per_row": n, "pad_bits": n * WORD_BITS - packed.cols}
    return info, np.ascontiguousarray(packed.words, dtype="<u8").tobytes()


def save_latent(model: BEExformer, path, meta: dict | None = None) -> None:
    entries = [_f32_entry(name, t.data) for name, t in model.tensors()]
    _write(path, "latent", model.config, entries, meta)


def save_frozen(model: FrozenModel, path, meta: dict | None = None) -> None:
    entries = [_packed_entry(name, p.packed) for name, p in model.weights.items()]
    entries += [_f32_entry(name, t.data) for name, t in model.fp.items()]
    meta = {"activations": model.activations, **(meta or {})}
    _write(path, "frozen", model.config, entries, meta)


def read_header(path) -> tuple[dict, int, int]:
    """Return ``(header, payload_start, file_size)`` after structural checks."""
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read checkpoint {path}: {exc}") from None
    if len(blob) < 16 or blob[:8] != MAGIC:
        raise FormatError(f"{path} is not a checkpoint (bad magic)")
    (hlen,) = struct.unpack("<Q", blob[8:16])
    if 16 + hlen > len(blob):
        raise FormatError(f"{path}: truncated header")
    try:
        header = json.loads(blob[16:16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: corrupt header ({exc})") from None
    if header.get("format_version") != VERSION or header.get("kind") not in ("latent", "frozen"):
        raise FormatError(f"{path}: unsupported checkpoint kind/version")
    start = _align(16 + hlen)
    end = start
    for entry in header["tensors"]:
        end = max(end, start + entry["offset"] + entry["nbytes"])
    if _align(end) != len(blob):
        raise FormatError(f"{path}: payload size mismatch ({len(blob)} bytes, manifest implies {_align(end)})")
    return header, start, len(blob)


def _payloads(path) -> tuple[dict, dict[str, np.ndarray | PackedMatrix]]:
    header, start, _ = read_header(path)
    blob = Path(path).read_bytes()
    out: dict[str, np.ndarray | PackedMatrix] = {}
    for entry in header["tensors"]:
        raw = blob[start + entry["offset"]: start + entry["offset"] + entry["nbytes"]]
        shape = tuple(entry["shape"])
        try:
            if entry["dtype"] == "float32":
                out[entry["name"]] = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float64)
            elif entry["dtype"] == "packed":
                rows, cols = shape
                words = np.frombuffer(raw, dtype="<u8").astype(np.uint64).reshape(rows, words_per_row(cols))
                out[entry["name"]] = PackedMatrix(rows, cols, words)
            else:
                raise FormatError(f"{path}: unknown dtype {entry['dtype']!r}")
        except ValueError as exc:
            raise FormatError(f"{path}: tensor {entry['name']}: {exc}") from None
    return header, out


def load_checkpoint(path) -> BEExformer | FrozenModel:
    header, tensors = _payloads(path)
    try:
        config = model_config_from_dict(header["config"])
    except ConfigError as exc:
        raise FormatError(f"{path}: bad config in header ({exc})") from None
    if header["kind"] == "latent":
        model = BEExformer(config)
        expected = {name for name, _ in model.tensors()}
        if expected != set(tensors):
            raise FormatError(f"{path}: tensor set does not match the architecture")
        model.load_state_dict(tensors)
        return model
    weights = {name: FrozenParameter(name, v) for name, v in tensors.items() if isinstance(v, PackedMatrix)}
    fp = {name: v for name, v in tensors.items() if not isinstance(v, PackedMatrix)}
    return FrozenModel(config, weights, fp, header["meta"].get("activations", "b2"))


def checkpoint_meta(path) -> dict:
    return read_header(path)[0]["meta"]
