"""Readers and writers for clouds, depth/label images and key-value files.

* XYZ: one ``x y z`` triple per line, written with 17 significant digits so
  values round-trip exactly.
* PLY: binary little-endian, vertex-only (x, y, z as double; an optional
  ``surface`` int column). Float vertices are accepted on read.
* PGM: binary 16-bit (P5, maxval 65535, big-endian samples).
* Key-value: ``key = value`` lines, ``#`` comments.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from .geometry import CameraIntrinsics, PointCloud


def write_xyz(path, cloud, surface_ids=None) -> None:
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud)
    with open(path, "w") as fh:
        if surface_ids is None:
            for x, y, z in pts:
                fh.write(f"{x:.17g} {y:.17g} {z:.17g}\n")
        else:
            for (x, y, z), s in zip(pts, surface_ids):
                fh.write(f"{x:.17g} {y:.17g} {z:.17g} {int(s)}\n")


def read_xyz(path, frame: str = "camera") -> PointCloud:
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) < 3:
                raise ValueError(f"{path}:{lineno}: expected 'x y z', got {line!r}")
            rows.append([float(v) for v in parts[:3]])
    return PointCloud(np.array(rows, dtype=np.float64).reshape(-1, 3), frame=frame)


def write_ply(path, cloud, surface_ids=None) -> None:
    pts = np.asarray(cloud.points if isinstance(cloud, PointCloud) else cloud, dtype="<f8")
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {len(pts)}",
              "property double x", "property double y", "property double z"]
    fields = [("x", "<f8"), ("y", "<f8"), ("z", "<f8")]
    if surface_ids is not None:
        header.append("property int surface")
        fields.append(("surface", "<i4"))
    header.append("end_header")
    rec = np.empty(len(pts), dtype=fields)
    rec["x"], rec["y"], rec["z"] = pts[:, 0], pts[:, 1], pts[:, 2]
    if surface_ids is not None:
        rec["surface"] = surface_ids
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(rec.tobytes())


_PLY_TYPES = {"float": "<f4", "float32": "<f4", "double": "<f8", "float64": "<f8",
              "int": "<i4", "int32": "<i4", "uint": "<u4", "uchar": "u1", "uint8": "u1",
              "char": "i1", "short": "<i2", "ushort": "<u2"}


def read_ply(path, frame: str = "camera") -> PointCloud:
    with open(path, "rb") as fh:
        if fh.readline().strip() != b"ply":
            raise ValueError(f"{path}: not a PLY file")
        count, fields, fmt = 0, [], None
        while True:
            line = fh.readline()
            if not line:
                raise ValueError(f"{path}: truncated PLY header")
            tokens = line.decode("ascii").split()
            if not tokens:
                continue
            if tokens[0] == "format":
                fmt = tokens[1]
            elif tokens[0] == "element":
                if tokens[1] != "vertex":
                    raise ValueError(f"{path}: only vertex elements are supported")
                count = int(tokens[2])
            elif tokens[0] == "property":
                fields.append((tokens[2], _PLY_TYPES[tokens[1]]))
            elif tokens[0] == "end_header":
                break
        if fmt != "binary_little_endian":
            raise ValueError(f"{path}: unsupported PLY format {fmt!r}")
        rec = np.frombuffer(fh.read(), dtype=fields, count=count)
    pts = np.stack([rec["x"], rec["y"], rec["z"]], axis=1).astype(np.float64)
    return PointCloud(pts, frame=frame)


def read_cloud(path, frame: str = "camera") -> PointCloud:
    return read_ply(path, frame) if str(path).endswith(".ply") else read_xyz(path, frame)


def write_cloud(path, cloud, surface_ids=None) -> None:
    if str(path).endswith(".ply"):
        write_ply(path, cloud, surface_ids)
    else:
        write_xyz(path, cloud, surface_ids)


# ---------------------------------------------------------------------- PGM
def write_pgm16(path, image: np.ndarray) -> None:
    img = np.asarray(image)
    if img.ndim != 2:
        raise ValueError("PGM images must be 2-D")
    if img.min(initial=0) < 0 or img.max(initial=0) > 65535:
        raise ValueError("PGM samples must lie in [0, 65535]")
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        fh.write(img.astype(">u2").tobytes())


def _pgm_tokens(fh, count: int) -> list:
    tokens = []
    while len(tokens) < count:
        line = fh.readline()
        if not line:
            raise ValueError("truncated PGM header")
        line = line.split(b"#", 1)[0]
        tokens.extend(line.split())
    return tokens


def read_pgm16(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic, w, h, maxval = _pgm_tokens(fh, 4)
        if magic != b"P5":
            raise ValueError(f"{path}: not a binary PGM")
        w, h, maxval = int(w), int(h), int(maxval)
        dtype = ">u2" if maxval > 255 else "u1"
        data = np.frombuffer(fh.read(), dtype=dtype, count=w * h)
    return data.reshape(h, w).astype(np.uint16)


# --------------------------------------------------------------- key-value
def write_kv(path, values: dict) -> None:
    with open(path, "w") as fh:
        for key, value in values.items():
            if isinstance(value, (list, tuple, np.ndarray)):
                value = " ".join(f"{float(v):.17g}" if not isinstance(v, str) else v
                                 for v in np.ravel(value))
            elif isinstance(value, float):
                value = f"{value:.17g}"
            fh.write(f"{key} = {value}\n")


def read_kv(path) -> dict:
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            out[key] = value
    return out


def read_intrinsics(path) -> CameraIntrinsics:
    if not os.path.exists(path):
        raise FileNotFoundError(f"intrinsics file not found: {path}")
    kv = read_kv(path)
    missing = [k for k in ("fx", "fy", "cx", "cy", "depth_scale") if k not in kv]
    if missing:
        raise ValueError(f"{path}: missing intrinsics keys {missing}")
    return CameraIntrinsics(fx=float(kv["fx"]), fy=float(kv["fy"]), cx=float(kv["cx"]),
                            cy=float(kv["cy"]), depth_scale=float(kv["depth_scale"]),
                            width=int(kv.get("width", 0)), height=int(kv.get("height", 0)))


def write_intrinsics(path, intr: CameraIntrinsics) -> None:
    write_kv(path, {"fx": intr.fx, "fy": intr.fy, "cx": intr.cx, "cy": intr.cy,
                    "depth_scale": intr.depth_scale, "width": intr.width, "height": intr.height})


def ensure_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p
