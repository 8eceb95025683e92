"""Readers and writers for the on-disk formats used across the package.

Float maps go to PFM (little-endian, rows stored bottom-up), masks and
colour images to 8-bit PNG, meshes to Wavefront OBJ with optional
per-vertex colour (``v x y z r g b``).
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np
from PIL import Image


def write_pfm(path, data: np.ndarray) -> None:
    data = np.asarray(data, dtype=np.float32)
    if data.ndim == 2:
        header = b"Pf\n"
    elif data.ndim == 3 and data.shape[2] == 3:
        header = b"PF\n"
    else:
        raise ValueError(f"PFM needs HxW or HxWx3 data, got shape {data.shape}")
    h, w = data.shape[:2]
    with open(path, "wb") as f:
        f.write(header)
        f.write(f"{w} {h}\n".encode("ascii"))
        f.write(b"-1.0\n")
        f.write(np.ascontiguousarray(data[::-1]).astype("<f4").tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as f:
        kind = f.readline().strip()
        if kind not in (b"PF", b"Pf"):
            raise ValueError(f"{path}: not a PFM file")
        dims = f.readline().split()
        while not dims:
            dims = f.readline().split()
        w, h = int(dims[0]), int(dims[1])
        scale = float(f.readline().strip())
        dtype = "<f4" if scale < 0 else ">f4"
        channels = 3 if kind == b"PF" else 1
        raw = np.frombuffer(f.read(w * h * channels * 4), dtype=dtype)
    shape = (h, w, 3) if channels == 3 else (h, w)
    return raw.reshape(shape)[::-1].astype(np.float32)


def write_mask_png(path, mask: np.ndarray) -> None:
    Image.fromarray(np.where(np.asarray(mask) > 0, 255, 0).astype(np.uint8), mode="L").save(path)


def read_mask_png(path) -> np.ndarray:
    img = np.asarray(Image.open(path))
    if img.ndim == 3:
        img = img[..., 0]
    return img >= 128


def write_color_png(path, image: np.ndarray) -> None:
    img = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    Image.fromarray(np.round(img * 255.0).astype(np.uint8), mode="RGB").save(path)


def read_color_png(path) -> np.ndarray:
    img = np.asarray(Image.open(path).convert("RGB"), dtype=np.float64)
    return img / 255.0


def write_obj(path, vertices, faces, colors=None) -> None:
    vertices = np.asarray(vertices, dtype=np.float64)
    faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    lines = []
    if colors is None:
        for x, y, z in vertices:
            lines.append(f"v {x:.9g} {y:.9g} {z:.9g}")
    else:
        colors = np.asarray(colors, dtype=np.float64)
        for (x, y, z), (r, g, b) in zip(vertices, colors):
            lines.append(f"v {x:.9g} {y:.9g} {z:.9g} {r:.9g} {g:.9g} {b:.9g}")
    for a, b, c in faces + 1:
        lines.append(f"f {a} {b} {c}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_obj(path):
    """Return ``(vertices, faces, colors)``; colors is None when absent."""
    verts, cols, faces = [], [], []
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            vals = [float(p) for p in parts[1:]]
            verts.append(vals[:3])
            if len(vals) >= 6:
                cols.append(vals[3:6])
        elif parts[0] == "f":
            idx = [int(p.split("/")[0]) for p in parts[1:]]
            idx = [i - 1 if i > 0 else len(verts) + i for i in idx]
            for k in range(1, len(idx) - 1):
                faces.append([idx[0], idx[k], idx[k + 1]])
    vertices = np.asarray(verts, dtype=np.float64).reshape(-1, 3)
    colors = np.asarray(cols, dtype=np.float64) if len(cols) == len(verts) and cols else None
    return vertices, np.asarray(faces, dtype=np.int64).reshape(-1, 3), colors


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path):
    return json.loads(Path(path).read_text())


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
