"""Checkpoint (AVLE) and embedding dump (AVLZ) files.

AVLE, little-endian::

    b"AVLE" | u32 version=1 | 5 x u32 (d_ocr, d_text, d2d, d3d, E)
    | W_ocr, b_ocr, W1c, b1c, W2c, b2c, W_txt, b_txt, W1t, b1t, W2t, b2t
      as row-major f64

The OCR projection width is not in the header; it is recovered from the
payload length, which is linear in it.

AVLZ: ``b"AVLZ" | u32 n_clips | u32 E | per clip f(c) then g(t) as f64``.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..exceptions import (
    BadMagicError,
    DimensionMismatchError,
    FormatError,
    TruncatedFileError,
    UnsupportedVersionError,
)
from .model import PARAM_ORDER, JointEmbeddingParams

PARAMS_MAGIC = b"AVLE"
PARAMS_VERSION = 1
EMBED_MAGIC = b"AVLZ"


def encode_params(params: JointEmbeddingParams) -> bytes:
    E = params.embed_dim
    c_dim = params.W1c.shape[1]
    d3d = c_dim - params.ocr_proj_dim - params.d2d
    header = struct.pack("<4sI5I", PARAMS_MAGIC, PARAMS_VERSION, params.d_ocr, params.d_text, params.d2d, d3d, E)
    body = b"".join(np.ascontiguousarray(getattr(params, n), dtype="<f8").tobytes() for n in PARAM_ORDER)
    return header + body


def decode_params(buf: bytes) -> JointEmbeddingParams:
    if len(buf) < 4 or buf[:4] != PARAMS_MAGIC:
        raise BadMagicError(buf[:4])
    if len(buf) < 28:
        raise TruncatedFileError("header")
    version, d_ocr, d_text, d2d, d3d, E = struct.unpack_from("<I5I", buf, 4)
    if version != PARAMS_VERSION:
        raise UnsupportedVersionError(version)
    n_values, rem = divmod(len(buf) - 28, 8)
    if rem:
        raise TruncatedFileError("payload is not a whole number of f64 values")
    # count = P * (d_ocr + 1 + E) + fixed
    fixed = E * (d2d + d3d) + E + (E * E + E) + (E * d_text + E) + 2 * (E * E + E)
    P, leftover = divmod(n_values - fixed, d_ocr + 1 + E)
    if n_values < fixed or leftover or P < 1:
        raise TruncatedFileError(f"{n_values} values do not fit dims {(d_ocr, d_text, d2d, d3d, E)}")
    c_dim = P + d2d + d3d
    shapes = {
        "W_ocr": (P, d_ocr), "b_ocr": (P,), "W1c": (E, c_dim), "b1c": (E,), "W2c": (E, E), "b2c": (E,),
        "W_txt": (E, d_text), "b_txt": (E,), "W1t": (E, E), "b1t": (E,), "W2t": (E, E), "b2t": (E,),
    }
    pos = 28
    arrays = {}
    for name in PARAM_ORDER:
        shape = shapes[name]
        count = int(np.prod(shape))
        arrays[name] = np.frombuffer(buf, dtype="<f8", count=count, offset=pos).reshape(shape).astype(np.float64)
        pos += 8 * count
    return JointEmbeddingParams(**arrays, d2d=d2d)


def save_params(params: JointEmbeddingParams, path) -> None:
    Path(path).write_bytes(encode_params(params))


def load_params(path) -> JointEmbeddingParams:
    return decode_params(Path(path).read_bytes())


def encode_embeddings(f: np.ndarray, g: np.ndarray) -> bytes:
    f = np.asarray(f, dtype="<f8")
    g = np.asarray(g, dtype="<f8")
    if f.shape != g.shape or f.ndim != 2:
        raise DimensionMismatchError("clip and text embeddings must share shape (n_clips, E)")
    n, E = f.shape
    body = np.hstack([f, g]).tobytes()
    return struct.pack("<4s2I", EMBED_MAGIC, n, E) + body


def decode_embeddings(buf: bytes) -> tuple[np.ndarray, np.ndarray]:
    if len(buf) < 4 or buf[:4] != EMBED_MAGIC:
        raise BadMagicError(buf[:4])
    if len(buf) < 12:
        raise TruncatedFileError("header")
    n, E = struct.unpack_from("<2I", buf, 4)
    need = 12 + 8 * n * 2 * E
    if len(buf) < need:
        raise TruncatedFileError(f"expected {need} bytes, got {len(buf)}")
    if len(buf) > need:
        raise FormatError(f"{len(buf) - need} trailing bytes")
    both = np.frombuffer(buf, dtype="<f8", offset=12).reshape(n, 2 * E).astype(np.float64)
    return both[:, :E].copy(), both[:, E:].copy()


def save_embeddings(f, g, path) -> None:
    Path(path).write_bytes(encode_embeddings(f, g))


def load_embeddings(path) -> tuple[np.ndarray, np.ndarray]:
    return decode_embeddings(Path(path).read_bytes())


def save_training_state(stem, params, optimizer, epochs_done: int, meta=None) -> Path:
    """Write ``<stem>.avle`` plus optimizer state ``<stem>.opt.npz`` and ``<stem>.json``."""
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    ckpt = stem.with_suffix(".avle")
    save_params(params, ckpt)
    np.savez(stem.with_suffix(".opt.npz"), **optimizer.state())
    doc = {"epochs_done": int(epochs_done), "checkpoint": ckpt.name}
    doc.update(meta or {})
    stem.with_suffix(".json").write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    return ckpt


def load_training_state(checkpoint_path):
    """Return ``(params, optimizer_state or None, meta dict)`` for a checkpoint path."""
    ckpt = Path(checkpoint_path)
    params = load_params(ckpt)
    opt_path = ckpt.with_suffix(".opt.npz")
    meta_path = ckpt.with_suffix(".json")
    state = dict(np.load(opt_path)) if opt_path.exists() else None
    meta = json.loads(meta_path.read_text(encoding="utf-8")) if meta_path.exists() else {}
    return params, state, meta
