"""Synthetic partial/complete pairs and ingestion of depth+label frames.

Procedural objects (sphere, box, cylinder, mug, bowl) are sampled uniformly
by area. A virtual depth camera renders them through a pixel z-buffer over a
dense surface sample; the depth image is quantised to sensor units, noised,
sprinkled with clutter pixels and back-projected exactly like a real frame.
Pairs then go through the same pipeline as ingested frames: radius outlier
removal, resampling to n points, and (for canonical pairs) transformation
into the object frame followed by centroid alignment with the ground truth.
"""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import geometry as G
from . import io
from .geometry import CameraIntrinsics, PointCloud

log = logging.getLogger(__name__)

FAMILIES = ("sphere", "box", "cylinder", "mug", "bowl")
POSE_TAGS = ("canonical", "arbitrary")
OPEN_FAMILIES = ("mug", "bowl")
GRAZING_COS = 0.2
OBJECT_LABEL = 1
TRAIN_FRACTION = 0.8


@dataclass
class ShapeSpec:
    family: str
    size: dict = field(default_factory=dict)
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown shape family {self.family!r}")
        defaults = DEFAULT_SIZES[self.family]
        unknown = set(self.size) - set(defaults)
        if unknown:
            raise ValueError(f"unknown size parameters for {self.family}: {sorted(unknown)}")
        self.size = {**defaults, **self.size}
        for k, v in self.size.items():
            if np.any(np.asarray(v) <= 0):
                raise ValueError(f"size parameter {k} must be positive")
        self.rotation = np.asarray(self.rotation, dtype=float)
        self.translation = np.asarray(self.translation, dtype=float)

    @property
    def closed(self) -> bool:
        return self.family not in OPEN_FAMILIES


DEFAULT_SIZES = {
    "sphere": {"radius": 0.06},
    "box": {"extents": (0.16, 0.10, 0.05)},
    "cylinder": {"radius": 0.035, "height": 0.18},
    "mug": {"radius": 0.04, "height": 0.09, "handle_radius": 0.025, "handle_tube": 0.007},
    "bowl": {"radius": 0.07},
}


@dataclass(frozen=True)
class NoiseSpec:
    depth_sigma: float = 0.002
    outlier_fraction: float = 0.02

    @classmethod
    def none(cls) -> "NoiseSpec":
        return cls(0.0, 0.0)


@dataclass(frozen=True)
class CameraPose:
    """World-to-camera rigid transform: p_cam = rotation @ p_world + translation."""
    rotation: np.ndarray
    translation: np.ndarray

    def apply(self, pts: np.ndarray) -> np.ndarray:
        return pts @ self.rotation.T + self.translation

    def inverse_apply(self, pts: np.ndarray) -> np.ndarray:
        return (pts - self.translation) @ self.rotation

    def compose(self, rotation: np.ndarray, translation: np.ndarray) -> "CameraPose":
        """Pose of (this transform after the rigid map x -> rotation x + translation)."""
        return CameraPose(self.rotation @ rotation, self.rotation @ translation + self.translation)

    def as_list(self) -> list:
        return list(self.rotation.ravel()) + list(self.translation)

    @classmethod
    def from_list(cls, values) -> "CameraPose":
        v = np.asarray(values, dtype=float)
        return cls(v[:9].reshape(3, 3), v[9:12])


def look_at(eye, target=(0.0, 0.0, 0.0), up=(0.0, 0.0, 1.0)) -> CameraPose:
    """Camera at ``eye`` looking at ``target``; x right, y down, z forward."""
    eye, target, up = (np.asarray(v, dtype=float) for v in (eye, target, up))
    z = target - eye
    z /= np.linalg.norm(z)
    x = np.cross(z, up)
    if np.linalg.norm(x) < 1e-9:
        x = np.cross(z, np.array([0.0, 1.0, 0.0]))
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    rot = np.stack([x, y, z])
    return CameraPose(rot, -rot @ eye)


def random_camera_pose(rng: np.random.Generator, distance=(0.4, 0.6),
                       elevation_deg=(15.0, 70.0)) -> CameraPose:
    az = rng.uniform(0.0, 2 * math.pi)
    el = math.radians(rng.uniform(*elevation_deg))
    d = rng.uniform(*distance)
    eye = d * np.array([math.cos(el) * math.cos(az), math.cos(el) * math.sin(az), math.sin(el)])
    return look_at(eye)


# ----------------------------------------------------------- area sampling
def _disk(rng, count, radius):
    r = radius * np.sqrt(rng.random(count))
    t = rng.uniform(0, 2 * math.pi, count)
    return r * np.cos(t), r * np.sin(t)


def _sphere_dirs(rng, count):
    v = rng.normal(size=(count, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _box_parts(size):
    ex = np.asarray(size["extents"], dtype=float) / 2
    faces = []
    for axis in range(3):
        a, b = [i for i in range(3) if i != axis]
        area = 4 * ex[a] * ex[b]
        for sign in (-1.0, 1.0):
            faces.append((area, ("face", axis, sign)))
    return faces


def _parts(spec: ShapeSpec):
    s = spec.size
    if spec.family == "sphere":
        return [(4 * math.pi * s["radius"] ** 2, ("sphere",))]
    if spec.family == "box":
        return _box_parts(s)
    if spec.family == "cylinder":
        r, h = s["radius"], s["height"]
        return [(2 * math.pi * r * h, ("side",)),
                (math.pi * r * r, ("cap", 1.0)), (math.pi * r * r, ("cap", -1.0))]
    if spec.family == "mug":
        r, h = s["radius"], s["height"]
        big, tube = s["handle_radius"], s["handle_tube"]
        return [(2 * math.pi * r * h, ("side",)), (math.pi * r * r, ("cap", -1.0)),
                (4 * math.pi ** 2 * big * tube, ("handle",))]
    r = s["radius"]
    return [(2 * math.pi * r * r, ("bowl",))]


def _sample_part(spec: ShapeSpec, part, rng, count):
    s = spec.size
    kind = part[0]
    if kind == "sphere":
        n = _sphere_dirs(rng, count)
        return s["radius"] * n, n
    if kind == "face":
        _, axis, sign = part
        ex = np.asarray(s["extents"], dtype=float) / 2
        pts = rng.uniform(-ex, ex, size=(count, 3))
        pts[:, axis] = sign * ex[axis]
        nrm = np.zeros((count, 3))
        nrm[:, axis] = sign
        return pts, nrm
    if kind == "side":
        r, h = s["radius"], s["height"]
        t = rng.uniform(0, 2 * math.pi, count)
        z = rng.uniform(-h / 2, h / 2, count)
        nrm = np.stack([np.cos(t), np.sin(t), np.zeros(count)], axis=1)
        return np.stack([r * np.cos(t), r * np.sin(t), z], axis=1), nrm
    if kind == "cap":
        sign = part[1]
        x, y = _disk(rng, count, s["radius"])
        z = np.full(count, sign * s["height"] / 2)
        nrm = np.tile([0.0, 0.0, sign], (count, 1))
        return np.stack([x, y, z], axis=1), nrm
    if kind == "bowl":
        r = s["radius"]
        # uniform on the lower hemisphere (z uniform by Archimedes), shifted so
        # the bounding box is centred on the origin
        z = -r * rng.random(count)
        t = rng.uniform(0, 2 * math.pi, count)
        rho = np.sqrt(np.maximum(r * r - z * z, 0.0))
        nrm = np.stack([rho * np.cos(t), rho * np.sin(t), z], axis=1) / r
        pts = nrm * r
        pts[:, 2] += r / 2
        return pts, nrm
    # handle: torus in the x-z plane centred on the mug wall, by rejection on
    # the area element (R + rho cos phi) and on points inside the cup
    r = s["radius"]
    big, tube = s["handle_radius"], s["handle_tube"]
    pts_out, nrm_out, have = [], [], 0
    while have < count:
        m = 2 * (count - have) + 16
        theta = rng.uniform(0, 2 * math.pi, m)
        phi = rng.uniform(0, 2 * math.pi, m)
        accept = rng.random(m) * (big + tube) <= big + tube * np.cos(phi)
        ring = np.stack([np.cos(theta), np.zeros(m), np.sin(theta)], axis=1)
        nrm = np.cos(phi)[:, None] * ring + np.sin(phi)[:, None] * np.array([0.0, 1.0, 0.0])
        pts = np.array([r, 0.0, 0.0]) + big * ring + tube * nrm
        accept &= pts[:, 0] ** 2 + pts[:, 1] ** 2 > r * r
        pts_out.append(pts[accept])
        nrm_out.append(nrm[accept])
        have += int(accept.sum())
    return np.concatenate(pts_out)[:count], np.concatenate(nrm_out)[:count]


def sample_area(spec: ShapeSpec, count: int, rng: np.random.Generator) -> tuple:
    """Uniform-by-area surface samples and unit normals in the object frame.

    Each surface part receives a multinomial share of ``count`` proportional
    to its area. The mug handle area is counted for the whole torus and the
    part inside the cup is rejected, which slightly over-weights the handle.
    """
    parts = _parts(spec)
    areas = np.array([a for a, _ in parts])
    counts = rng.multinomial(count, areas / areas.sum())
    pts, nrm = [], []
    for (_, part), c in zip(parts, counts):
        if c:
            p, n = _sample_part(spec, part, rng, int(c))
            pts.append(p)
            nrm.append(n)
    pts = np.concatenate(pts) @ spec.rotation.T + spec.translation
    nrm = np.concatenate(nrm) @ spec.rotation.T
    return pts, nrm


def sample_surface(spec: ShapeSpec, count: int, rng, oversample: int = 4) -> PointCloud:
    """``count`` points: uniform area samples thinned by farthest point sampling."""
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    pts, _ = sample_area(spec, oversample * count, rng)
    return G.farthest_point_sample(PointCloud(pts, frame="camera"), count)


# ---------------------------------------------------------------- rendering
def render_depth(spec: ShapeSpec, intr: CameraIntrinsics, pose: CameraPose,
                 noise: NoiseSpec, rng: np.random.Generator, dense_count: int = 20000) -> tuple:
    """Render a (depth, label) pair of uint16 images.

    Depth is in sensor units (metres / ``intr.depth_scale``); the object has
    label ``OBJECT_LABEL``. Closed shapes are back-face culled, open ones are
    two-sided; grazing returns (|cos| < GRAZING_COS) are dropped like on a
    real sensor. Each pixel keeps its nearest sample.
    """
    if intr.width <= 0 or intr.height <= 0:
        raise ValueError("rendering needs intrinsics with image width and height")
    pts_w, nrm_w = sample_area(spec, dense_count, rng)
    pts = pose.apply(pts_w)
    nrm = nrm_w @ pose.rotation.T
    front = pts[:, 2] > 1e-3
    if not front.any():
        raise ValueError("object is entirely behind the camera")
    pts, nrm = pts[front], nrm[front]
    cos = -(nrm * pts).sum(axis=1) / np.linalg.norm(pts, axis=1)
    keep = cos > GRAZING_COS if spec.closed else np.abs(cos) > GRAZING_COS
    pts = pts[keep]
    u, v = G.project(pts, intr)
    u, v = np.rint(u).astype(np.int64), np.rint(v).astype(np.int64)
    inside = (u >= 0) & (u < intr.width) & (v >= 0) & (v < intr.height)
    pts, u, v = pts[inside], u[inside], v[inside]

    depth = np.zeros((intr.height, intr.width), dtype=np.uint16)
    label = np.zeros_like(depth)
    if len(pts) == 0:
        return depth, label
    pix = v * intr.width + u
    order = np.lexsort((pts[:, 2], pix))
    pix_sorted = pix[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = pix_sorted[1:] != pix_sorted[:-1]
    winners = order[first]
    z = pts[winners, 2]
    if noise.depth_sigma > 0:
        z = z + rng.normal(0.0, noise.depth_sigma, len(z))
    units = np.clip(np.rint(z / intr.depth_scale), 1, 65535).astype(np.uint16)
    depth.flat[pix[winners]] = units
    label.flat[pix[winners]] = OBJECT_LABEL

    n_clutter = int(round(noise.outlier_fraction * len(winners)))
    if n_clutter:
        free = np.flatnonzero(label.ravel() == 0)
        chosen = rng.choice(free, size=min(n_clutter, len(free)), replace=False)
        zc = rng.uniform(0.5 * z.min(), 1.5 * z.max(), len(chosen))
        depth.flat[chosen] = np.clip(np.rint(zc / intr.depth_scale), 1, 65535).astype(np.uint16)
        label.flat[chosen] = OBJECT_LABEL
    return depth, label


def render_partial(spec: ShapeSpec, intr: CameraIntrinsics, pose: CameraPose,
                   noise: NoiseSpec, n: int, rng: np.random.Generator,
                   dense_count: int = 20000) -> PointCloud:
    """Camera-frame partial cloud with exactly ``n`` points (FPS or replication)."""
    depth, label = render_depth(spec, intr, pose, noise, rng, dense_count)
    cloud = G.backproject(depth, label == OBJECT_LABEL, intr)
    return G.farthest_point_sample(cloud, n)


# -------------------------------------------------------------------- pairs
@dataclass
class ObjectModel:
    """Ground truth for one object: an n-point canonical cloud in [-1,1]^3,
    the metric model it came from, and the normalisation linking them."""
    name: str
    complete: PointCloud
    metric: PointCloud
    scale: float
    offset: np.ndarray
    dense: PointCloud = None

    @classmethod
    def from_metric(cls, name: str, metric: PointCloud, dense: PointCloud = None) -> "ObjectModel":
        complete, scale, offset = G.normalize_unit_box(metric)
        if dense is not None:
            dense = G.apply_normalization(dense, scale, offset)
        return cls(name, complete, metric, scale, offset, dense)

    @classmethod
    def from_spec(cls, name: str, spec: ShapeSpec, n: int, rng) -> "ObjectModel":
        rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        local = ShapeSpec(spec.family, dict(spec.size))
        metric = sample_surface(local, n, rng)
        dense = PointCloud(sample_area(local, 8 * n, rng)[0])
        return cls.from_metric(name, metric, dense)


@dataclass
class PairSample:
    partial: PointCloud
    complete: PointCloud
    pose_tag: str
    object_name: str
    index: int = 0
    camera_pose: CameraPose = None
    noise: NoiseSpec = None

    def __post_init__(self):
        if self.pose_tag not in POSE_TAGS:
            raise ValueError(f"pose_tag must be one of {POSE_TAGS}, got {self.pose_tag!r}")


def unify_partial(cloud: PointCloud, n: int, radius: float = G.DEFAULT_OUTLIER_RADIUS,
                  min_neighbors: int = G.DEFAULT_MIN_NEIGHBORS) -> PointCloud:
    cleaned = G.radius_outlier_removal(cloud, radius, min_neighbors)
    if len(cleaned) == 0:
        raise G.EmptyCloudError("no points survive outlier removal")
    return G.farthest_point_sample(cleaned, n)


def pair_from_partial(partial_cam: PointCloud, model: ObjectModel, pose: CameraPose,
                      pose_tag: str, index: int = 0, noise: NoiseSpec = None) -> PairSample:
    """Build a training pair from a cleaned, unified camera-frame partial cloud.

    ``pose`` maps object-frame metric coordinates to the camera frame. With
    ``pose=None`` a canonical pair is centred by translation only.
    """
    if pose_tag == "canonical":
        pts = partial_cam.points if pose is None else pose.inverse_apply(partial_cam.points)
        if pose is None:
            pts = pts - partial_cam.centroid + model.metric.centroid
        partial = G.apply_normalization(PointCloud(pts), model.scale, model.offset)
        partial = G.center_to(partial, model.complete)
        complete = model.complete
    else:
        if pose is None:
            raise ValueError("arbitrary-pose pairs need the object pose")
        partial = partial_cam
        complete = G.rigid_transform(model.metric, pose.rotation, pose.translation, frame="camera")
    return PairSample(partial, complete, pose_tag, model.name, index, pose, noise)


def make_pair(spec: ShapeSpec, model: ObjectModel, intr: CameraIntrinsics, camera: CameraPose,
              pose_tag: str, noise: NoiseSpec, n: int, rng: np.random.Generator,
              index: int = 0, dense_count: int = 20000) -> PairSample:
    """Render one view of ``spec`` and pair it with ``model``'s ground truth.

    ``model`` lives in the object frame; ``spec``'s own rotation and
    translation place it in the world seen by ``camera``.
    """
    depth, label = render_depth(spec, intr, camera, noise, rng, dense_count)
    partial = unify_partial(G.backproject(depth, label == OBJECT_LABEL, intr), n)
    object_pose = camera.compose(spec.rotation, spec.translation)
    return pair_from_partial(partial, model, object_pose, pose_tag, index, noise)


# ------------------------------------------------------------------ dataset
def split_of(object_name: str, index: int, train_fraction: float = TRAIN_FRACTION) -> str:
    """Deterministic train/val assignment from a hash of name and index."""
    digest = hashlib.sha256(f"{object_name}:{index}".encode()).digest()
    u = int.from_bytes(digest[:8], "big") / 2.0 ** 64
    return "train" if u < train_fraction else "val"


@dataclass
class SynthConfig:
    profile: str = "toy"
    seed: int = 0
    families: tuple = FAMILIES
    poses_per_family: int = 40
    n: int = 256
    pose_tag: str = "canonical"
    depth_sigma: float = 0.002
    outlier_fraction: float = 0.02
    distance: tuple = (0.4, 0.6)
    elevation_deg: tuple = (15.0, 70.0)
    dense_count: int = 40000

    @classmethod
    def default(cls, profile: str = "toy", **overrides) -> "SynthConfig":
        base = dict(profile=profile)
        if profile == "full":
            base.update(n=2048, dense_count=400000)
        elif profile != "toy":
            raise ValueError(f"unknown profile {profile!r}")
        base.update(overrides)
        return cls(**base)

    @property
    def noise(self) -> NoiseSpec:
        return NoiseSpec(self.depth_sigma, self.outlier_fraction)


@dataclass
class Dataset:
    """Pairs loaded from a dataset directory, with split membership."""
    root: Path
    pairs: list
    splits: dict
    meta: dict
    objects: dict = field(default_factory=dict)

    def split(self, name: str) -> list:
        keys = set(self.splits.get(name, ()))
        return [p for p in self.pairs if (p.object_name, p.index) in keys]

    @staticmethod
    def stack(pairs: list) -> tuple:
        partial = np.stack([p.partial.points for p in pairs])
        complete = np.stack([p.complete.points for p in pairs])
        return partial, complete, [p.object_name for p in pairs]


def _pair_meta(pair: PairSample) -> dict:
    meta = {"object": pair.object_name, "index": pair.index, "pose_tag": pair.pose_tag,
            "points": len(pair.partial)}
    if pair.camera_pose is not None:
        meta["camera_pose"] = pair.camera_pose.as_list()
    if pair.noise is not None:
        meta["depth_sigma"] = float(pair.noise.depth_sigma)
        meta["outlier_fraction"] = float(pair.noise.outlier_fraction)
    return meta


def write_pair(root, pair: PairSample) -> None:
    d = io.ensure_dir(Path(root) / "pairs" / pair.object_name)
    io.write_xyz(d / f"{pair.index}.partial.xyz", pair.partial)
    io.write_xyz(d / f"{pair.index}.complete.xyz", pair.complete)
    io.write_kv(d / f"{pair.index}.meta", _pair_meta(pair))


def read_pair(root, object_name: str, index: int) -> PairSample:
    d = Path(root) / "pairs" / object_name
    meta = io.read_kv(d / f"{index}.meta")
    tag = meta["pose_tag"]
    frame = "canonical" if tag == "canonical" else "camera"
    pose = CameraPose.from_list(meta["camera_pose"].split()) if "camera_pose" in meta else None
    noise = None
    if "depth_sigma" in meta:
        noise = NoiseSpec(float(meta["depth_sigma"]), float(meta["outlier_fraction"]))
    return PairSample(io.read_xyz(d / f"{index}.partial.xyz", frame),
                      io.read_xyz(d / f"{index}.complete.xyz", frame),
                      tag, meta["object"], int(meta["index"]), pose, noise)


def write_dataset(root, pairs: list, meta: dict, objects: dict = None) -> Path:
    root = io.ensure_dir(root)
    for pair in pairs:
        write_pair(root, pair)
    if objects:
        od = io.ensure_dir(root / "objects")
        for name, cloud in sorted(objects.items()):
            io.write_xyz(od / f"{name}.xyz", cloud)
    lines = [f"{split_of(p.object_name, p.index)} {p.object_name} {p.index}"
             for p in sorted(pairs, key=lambda p: (p.object_name, p.index))]
    (root / "manifest.txt").write_text("\n".join(lines) + "\n")
    io.write_kv(root / "dataset.meta", {**meta, "pairs": len(pairs)})
    return root


def read_manifest(root) -> list:
    entries = []
    for lineno, line in enumerate((Path(root) / "manifest.txt").read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 3 or parts[0] not in ("train", "val"):
            raise ValueError(f"manifest line {lineno}: expected 'split object index', got {line!r}")
        entries.append((parts[0], parts[1], int(parts[2])))
    return entries


def load_dataset(root) -> Dataset:
    root = Path(root)
    if not (root / "manifest.txt").exists():
        raise FileNotFoundError(f"no dataset manifest in {root}")
    entries = read_manifest(root)
    pairs = [read_pair(root, name, idx) for _, name, idx in entries]
    splits: dict = {"train": [], "val": []}
    for split, name, idx in entries:
        splits[split].append((name, idx))
    objects = {}
    if (root / "objects").is_dir():
        for f in sorted((root / "objects").glob("*.xyz")):
            objects[f.stem] = io.read_xyz(f, "canonical")
    meta = io.read_kv(root / "dataset.meta") if (root / "dataset.meta").exists() else {}
    return Dataset(root, pairs, splits, meta, objects)


def validate_dataset(root, n: int = None) -> list:
    """Return a list of problems; an empty list means the directory is valid."""
    problems = []
    try:
        ds = load_dataset(root)
    except (OSError, ValueError, KeyError) as exc:
        return [f"cannot load dataset: {exc}"]
    if not ds.pairs:
        problems.append("dataset has no pairs")
    if n is None and "points" in ds.meta:
        n = int(ds.meta["points"])
    for p in ds.pairs:
        tag = f"{p.object_name}/{p.index}"
        if n is not None and (len(p.partial) != n or len(p.complete) != n):
            problems.append(f"{tag}: expected {n} points, got {len(p.partial)}/{len(p.complete)}")
        if len(p.partial) != len(p.complete):
            problems.append(f"{tag}: partial and complete differ in size")
        if not p.complete.in_unit_box():
            problems.append(f"{tag}: complete cloud leaves [-1, 1]^3")
        if split_of(p.object_name, p.index) not in ("train", "val"):
            problems.append(f"{tag}: bad split")
    for split, names in ds.splits.items():
        for name, idx in names:
            if split_of(name, idx) != split:
                problems.append(f"{name}/{idx}: manifest split {split} disagrees with hash split")
    return problems


def synthesize(cfg: SynthConfig, intr: CameraIntrinsics = None) -> tuple:
    """Generate pairs in memory; returns (pairs, object clouds for the oracle)."""
    intr = intr or CameraIntrinsics.default(cfg.profile)
    pairs, objects = [], {}
    for obj_idx, family in enumerate(cfg.families):
        spec = ShapeSpec(family)
        model = ObjectModel.from_spec(family, spec, cfg.n, np.random.default_rng([cfg.seed, obj_idx]))
        # oracle clouds in the units of the pairs; rigid motion does not change cd/emd
        objects[family] = model.dense if cfg.pose_tag == "canonical" else \
            G.denormalize(model.dense, model.scale, model.offset)
        for pose_idx in range(cfg.poses_per_family):
            rng = np.random.default_rng([cfg.seed, obj_idx, pose_idx + 1])
            camera = random_camera_pose(rng, cfg.distance, cfg.elevation_deg)
            pairs.append(make_pair(spec, model, intr, camera, cfg.pose_tag, cfg.noise, cfg.n, rng,
                                   index=pose_idx, dense_count=cfg.dense_count))
    return pairs, objects


def synthesize_dataset(root, cfg: SynthConfig, intr: CameraIntrinsics = None) -> Path:
    pairs, objects = synthesize(cfg, intr)
    meta = {"profile": cfg.profile, "seed": cfg.seed, "points": cfg.n, "pose_tag": cfg.pose_tag,
            "families": " ".join(cfg.families), "poses_per_family": cfg.poses_per_family,
            "depth_sigma": cfg.depth_sigma, "outlier_fraction": cfg.outlier_fraction}
    return write_dataset(root, pairs, meta, objects)


# ------------------------------------------------------------------- ingest
class IngestResult(list):
    """Pairs from an ingestion run plus frame bookkeeping."""

    def __init__(self, pairs=(), retained_frames=(), skipped_frames=()):
        super().__init__(pairs)
        self.retained_frames = list(retained_frames)
        self.skipped_frames = list(skipped_frames)


def _frame_files(directory) -> dict:
    out = {}
    for f in Path(directory).glob("*.pgm"):
        try:
            out[int(f.stem)] = f
        except ValueError:
            continue
    return out


def load_object_models(directory, n: int) -> dict:
    """Read ``<label>_<name>.xyz`` metric models into {label: ObjectModel}."""
    models = {}
    for f in sorted(Path(directory).glob("*.xyz")):
        label, _, name = f.stem.partition("_")
        if not label.isdigit() or not name:
            raise ValueError(f"model file {f.name} is not named <label>_<name>.xyz")
        dense = io.read_xyz(f)
        models[int(label)] = ObjectModel.from_metric(name, G.farthest_point_sample(dense, n), dense)
    if not models:
        raise ValueError(f"no object models found in {directory}")
    return models


def read_poses(path) -> dict:
    return {int(k): CameraPose.from_list(v.split()) for k, v in io.read_kv(path).items()}


def write_poses(path, poses: dict) -> None:
    io.write_kv(path, {str(k): v.as_list() for k, v in poses.items()})


def ingest(depth_dir, label_dir, intrinsics, object_models: dict, stride: int = 5, n: int = 256,
           pose_dir=None, pose_tag: str = "canonical",
           radius: float = G.DEFAULT_OUTLIER_RADIUS,
           min_neighbors: int = G.DEFAULT_MIN_NEIGHBORS) -> IngestResult:
    """Turn aligned depth/label frames into pairs, keeping every ``stride``-th frame.

    ``intrinsics`` is a CameraIntrinsics or a path to an intrinsics file.
    ``pose_dir`` may hold ``<frame>.txt`` files mapping labels to the
    object-to-camera pose; without them canonical pairs are aligned by
    centroid only and arbitrary pairs are unavailable.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    intr = intrinsics if isinstance(intrinsics, CameraIntrinsics) else io.read_intrinsics(intrinsics)
    depths, labels = _frame_files(depth_dir), _frame_files(label_dir)
    if set(depths) != set(labels):
        raise ValueError(f"depth and label frames differ: {sorted(set(depths) ^ set(labels))[:5]}")
    result = IngestResult()
    index = {}
    for pos, frame in enumerate(sorted(depths)):
        if pos % stride:
            continue
        depth, label = io.read_pgm16(depths[frame]), io.read_pgm16(labels[frame])
        if depth.shape != label.shape:
            raise ValueError(f"frame {frame}: depth and label sizes differ")
        present = [int(v) for v in np.unique(label) if v and int(v) in object_models]
        if not present:
            result.skipped_frames.append(frame)
            continue
        result.retained_frames.append(frame)
        poses = {}
        if pose_dir is not None and (Path(pose_dir) / f"{frame}.txt").exists():
            poses = read_poses(Path(pose_dir) / f"{frame}.txt")
        for lab in present:
            model = object_models[lab]
            try:
                cloud = G.backproject(depth, label == lab, intr)
                partial = unify_partial(cloud, n, radius, min_neighbors)
            except G.EmptyCloudError:
                result.skipped_frames.append(frame)
                continue
            i = index.get(model.name, 0)
            index[model.name] = i + 1
            result.append(pair_from_partial(partial, model, poses.get(lab), pose_tag, i))
    if result.skipped_frames:
        log.warning("ingest skipped %d frame(s) with empty masks", len(result.skipped_frames))
    return result


def write_frame(depth_dir, label_dir, frame: int, depth: np.ndarray, label: np.ndarray) -> None:
    io.write_pgm16(Path(io.ensure_dir(depth_dir)) / f"{frame}.pgm", depth)
    io.write_pgm16(Path(io.ensure_dir(label_dir)) / f"{frame}.pgm", label)
