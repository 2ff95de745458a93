"""File formats: checkpoints, PFM depth maps, PNG colour images and CSV reports.

Checkpoint layout::

    uint64 LE   header length in bytes
    bytes       UTF-8 JSON header (sorted keys)
    float64 LE  parameters, concatenated in header["layout"] order
"""
from __future__ import annotations

import csv
import json
import re
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .decoder import PARAM_NAMES, DecoderParams
from .triplane import TriplanePyramid


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, pyramid: TriplanePyramid, decoder: DecoderParams, iteration: int,
                    extra: dict | None = None) -> None:
    arrays = {"G1": pyramid.base, **decoder.arrays()}
    header = {
        "format": "tridepth-checkpoint/1",
        "resolution": int(pyramid.base.shape[-1]),
        "channels": int(pyramid.channels),
        "seed": pyramid.seed,
        "iteration": int(iteration),
        "density_offset": decoder.density_offset,
        "layout": [[name, list(arr.shape)] for name, arr in arrays.items()],
        **(extra or {}),
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = np.concatenate([np.asarray(a, dtype="<f8").ravel() for a in arrays.values()])
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(payload.astype("<f8").tobytes())


def load_checkpoint(path) -> tuple[TriplanePyramid, DecoderParams, dict]:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(raw) < 8:
        raise CheckpointError(f"{path}: truncated checkpoint")
    (hlen,) = struct.unpack("<Q", raw[:8])
    try:
        header = json.loads(raw[8:8 + hlen].decode("utf-8"))
        layout = header["layout"]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: corrupt checkpoint header") from exc
    data = np.frombuffer(raw[8 + hlen:], dtype="<f8")
    sizes = [int(np.prod(shape)) for _, shape in layout]
    if data.size != sum(sizes):
        raise CheckpointError(f"{path}: payload holds {data.size} values, header expects {sum(sizes)}")
    arrays, pos = {}, 0
    for (name, shape), size in zip(layout, sizes):
        arrays[name] = data[pos:pos + size].astype(np.float64).reshape(shape)
        pos += size
    try:
        pyramid = TriplanePyramid.from_base(arrays["G1"], header.get("seed"))
        decoder = DecoderParams(**{n: arrays[n] for n in PARAM_NAMES}, density_offset=header["density_offset"])
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"{path}: inconsistent checkpoint: {exc}") from exc
    return pyramid, decoder, header


def write_pfm(path, depth: np.ndarray) -> None:
    """Greyscale PFM, little-endian float32, bottom-up scanlines."""
    depth = np.asarray(depth)
    if depth.ndim != 2:
        raise ValueError("PFM writer expects a 2-D map")
    h, w = depth.shape
    with open(path, "wb") as fh:
        fh.write(f"Pf\n{w} {h}\n-1.0\n".encode("ascii"))
        fh.write(np.flipud(depth).astype("<f4").tobytes())


def read_pfm(path) -> np.ndarray:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            kind = fh.readline().strip()
            dims = fh.readline()
            scale = float(fh.readline().strip())
            body = fh.read()
    except (OSError, ValueError) as exc:
        raise ValueError(f"cannot read PFM file {path}: {exc}") from exc
    if kind not in (b"Pf", b"PF"):
        raise ValueError(f"{path}: not a PFM file")
    match = re.match(rb"^\s*(\d+)\s+(\d+)\s*$", dims)
    if not match:
        raise ValueError(f"{path}: malformed PFM dimensions")
    w, h = int(match.group(1)), int(match.group(2))
    channels = 3 if kind == b"PF" else 1
    dtype = "<f4" if scale < 0 else ">f4"
    data = np.frombuffer(body, dtype=dtype)
    if data.size != w * h * channels:
        raise ValueError(f"{path}: expected {w * h * channels} values, found {data.size}")
    shape = (h, w, 3) if channels == 3 else (h, w)
    return np.flipud(data.reshape(shape)).astype(np.float64)


def write_png(path, image: np.ndarray) -> None:
    rgb = np.clip(np.round(np.asarray(image, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(rgb).save(path, format="PNG")


def read_png(path) -> np.ndarray:
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
    except OSError as exc:
        raise ValueError(f"cannot read image {path}: {exc}") from exc


def write_csv(path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])


def read_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))
