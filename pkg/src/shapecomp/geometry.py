"""Point-cloud primitives used to build training pairs.

Farthest point sampling with replication padding, pinhole back-projection of
depth images, radius outlier removal, centroid alignment and unit-box
normalisation. All functions are pure: they return new clouds.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial import cKDTree

FRAMES = ("camera", "canonical")

BRUTE_FORCE_LIMIT = 2000
DEFAULT_OUTLIER_RADIUS = 0.02
DEFAULT_MIN_NEIGHBORS = 4


class EmptyCloudError(ValueError):
    pass


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray
    frame: str = "camera"
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim == 1 and pts.size == 0:
            pts = pts.reshape(0, 3)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"points must have shape (n, 3), got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("point coordinates must be finite")
        if self.frame not in FRAMES:
            raise ValueError(f"frame must be one of {FRAMES}, got {self.frame!r}")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def centroid(self) -> np.ndarray:
        return self.points.mean(axis=0)

    def with_points(self, points, **changes) -> "PointCloud":
        return replace(self, points=points, **changes)

    def in_unit_box(self) -> bool:
        return bool(np.all(np.abs(self.points) <= 1.0))


def as_points(cloud) -> np.ndarray:
    if isinstance(cloud, PointCloud):
        return cloud.points
    pts = np.asarray(cloud, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"expected (n, 3) points, got {pts.shape}")
    return pts


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    depth_scale: float = 1e-4
    width: int = 0
    height: int = 0

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.depth_scale <= 0:
            raise ValueError("depth_scale must be positive")

    @classmethod
    def default(cls, profile: str = "toy") -> "CameraIntrinsics":
        if profile == "toy":
            return cls(fx=200.0, fy=200.0, cx=79.5, cy=59.5, depth_scale=1e-4, width=160, height=120)
        if profile == "full":
            return cls(fx=800.0, fy=800.0, cx=319.5, cy=239.5, depth_scale=1e-4, width=640, height=480)
        raise ValueError(f"unknown profile {profile!r}")


# ----------------------------------------------------------------- sampling
def fps_indices(points: np.ndarray, k: int, seed_index: int = 0) -> np.ndarray:
    """Greedy farthest-point order of ``k`` indices (``k <= n``).

    Each step takes the point with the largest squared distance to the
    already-selected set; ties go to the lowest index.
    """
    n = points.shape[0]
    idx = np.empty(k, dtype=np.int64)
    idx[0] = seed_index
    dist = ((points - points[seed_index]) ** 2).sum(axis=1)
    dist[seed_index] = -1.0
    for i in range(1, k):
        j = int(np.argmax(dist))
        idx[i] = j
        np.minimum(dist, ((points - points[j]) ** 2).sum(axis=1), out=dist)
        dist[j] = -1.0
    return idx


def unify_indices(n: int, k: int, points: np.ndarray = None) -> np.ndarray:
    if k <= n:
        return fps_indices(points, k)
    return np.arange(k) % n


def farthest_point_sample(cloud: PointCloud, k: int) -> PointCloud:
    """Resample ``cloud`` to exactly ``k`` points.

    k <= n: farthest point sampling seeded at index 0. k > n: the input in
    its original order, padded by cycling through it again from index 0.
    """
    n = len(cloud)
    if n == 0:
        raise EmptyCloudError("cannot sample from an empty cloud")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    return cloud.with_points(cloud.points[unify_indices(n, k, cloud.points)])


# ---------------------------------------------------------- back-projection
def backproject(depth: np.ndarray, mask: np.ndarray, intr: CameraIntrinsics) -> PointCloud:
    """Lift masked pixels with positive depth to camera-frame points.

    Pixel (u, v) is column u, row v; points come out in row-major order.
    """
    depth = np.asarray(depth)
    mask = np.asarray(mask, dtype=bool)
    if depth.shape != mask.shape:
        raise ValueError(f"depth {depth.shape} and mask {mask.shape} differ in size")
    if not mask.any():
        raise EmptyCloudError("mask selects no pixels")
    v, u = np.nonzero(mask & (depth > 0))
    z = depth[v, u].astype(np.float64) * intr.depth_scale
    x = (u - intr.cx) * z / intr.fx
    y = (v - intr.cy) * z / intr.fy
    return PointCloud(np.stack([x, y, z], axis=1), frame="camera")


def project(points: np.ndarray, intr: CameraIntrinsics) -> tuple:
    """Pinhole projection to (u, v) pixel coordinates (floats)."""
    z = points[:, 2]
    return intr.fx * points[:, 0] / z + intr.cx, intr.fy * points[:, 1] / z + intr.cy


# ------------------------------------------------------------ neighbourhoods
def _sq_dist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # explicit (dx^2 + dy^2) + dz^2 so every caller rounds identically
    dx = a[..., 0] - b[..., 0]
    dy = a[..., 1] - b[..., 1]
    dz = a[..., 2] - b[..., 2]
    d2 = dx * dx
    d2 += dy * dy
    d2 += dz * dz
    return d2


def neighbor_counts_bruteforce(points: np.ndarray, radius: float, chunk: int = 512) -> np.ndarray:
    r2 = radius * radius
    counts = np.empty(points.shape[0], dtype=np.int64)
    for start in range(0, points.shape[0], chunk):
        block = points[start:start + chunk]
        d2 = _sq_dist(block[:, None, :], points[None, :, :])
        counts[start:start + chunk] = (d2 <= r2).sum(axis=1) - 1
    return counts


def neighbor_counts_indexed(points: np.ndarray, radius: float) -> np.ndarray:
    # kd-tree proposes candidate pairs with a slack; the final test uses the
    # same arithmetic as the brute-force path so both agree bit for bit
    tree = cKDTree(points)
    pairs = tree.query_pairs(radius * (1 + 1e-9) + 1e-15, output_type="ndarray")
    counts = np.zeros(points.shape[0], dtype=np.int64)
    if len(pairs):
        keep = _sq_dist(points[pairs[:, 0]], points[pairs[:, 1]]) <= radius * radius
        np.add.at(counts, pairs[keep, 0], 1)
        np.add.at(counts, pairs[keep, 1], 1)
    return counts


def radius_outlier_removal(cloud: PointCloud, radius: float = DEFAULT_OUTLIER_RADIUS,
                           min_neighbors: int = DEFAULT_MIN_NEIGHBORS,
                           method: str = "auto") -> PointCloud:
    """Keep points with at least ``min_neighbors`` other points within ``radius``."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    pts = cloud.points
    if min_neighbors <= 0 or len(pts) == 0:
        return cloud
    if method == "auto":
        method = "brute" if len(pts) < BRUTE_FORCE_LIMIT else "index"
    counts = (neighbor_counts_bruteforce if method == "brute" else neighbor_counts_indexed)(pts, radius)
    return cloud.with_points(pts[counts >= min_neighbors])


# ----------------------------------------------------------- normalisation
def center_to(cloud: PointCloud, reference: PointCloud) -> PointCloud:
    """Translate ``cloud`` so its centroid coincides with ``reference``'s."""
    if len(cloud) == 0 or len(reference) == 0:
        raise EmptyCloudError("center_to needs non-empty clouds")
    shift = reference.centroid - cloud.centroid
    return cloud.with_points(cloud.points + shift)


def normalize_unit_box(cloud: PointCloud) -> tuple:
    """Isotropically map the bounding box into [-1, 1]^3, centred at 0.

    Returns ``(normalized, scale, offset)`` with
    ``normalized = (points - offset) * scale``.
    """
    pts = cloud.points
    if len(pts) == 0:
        raise EmptyCloudError("cannot normalise an empty cloud")
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    offset = (lo + hi) / 2.0
    extent = float((hi - lo).max())
    scale = 2.0 / extent if extent > 0 else 1.0
    out = (pts - offset) * scale
    out = np.clip(out, -1.0, 1.0)
    return cloud.with_points(out, frame="canonical"), scale, offset


def apply_normalization(cloud: PointCloud, scale: float, offset: np.ndarray,
                        frame: str = "canonical") -> PointCloud:
    return cloud.with_points((cloud.points - offset) * scale, frame=frame)


def denormalize(cloud: PointCloud, scale: float, offset: np.ndarray,
                frame: str = "camera") -> PointCloud:
    return cloud.with_points(cloud.points / scale + offset, frame=frame)


def rigid_transform(cloud: PointCloud, rotation: np.ndarray, translation: np.ndarray,
                    frame: str = None) -> PointCloud:
    pts = cloud.points @ np.asarray(rotation).T + np.asarray(translation)
    return cloud.with_points(pts, frame=frame or cloud.frame)
