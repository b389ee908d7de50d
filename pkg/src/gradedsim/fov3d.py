"""3D field-of-view overlap via point-cloud visibility.

Each camera's 3D field of view is the subset of point-cloud indices that
projects inside its image bounds through a pinhole model; the similarity of
two cameras is the intersection-over-union of those index sets. There is no
occlusion reasoning: a point behind closer geometry still counts as visible.

Conventions: quaternions are camera-to-world, Hamilton product, stored
(w, x, y, z); pixel bounds are half-open [0, width) x [0, height); depth must
be strictly positive.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError
from .pairs import GradedPair, GradedPairSet

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Pose6DOF:
    """A 6DOF camera pose: translation plus camera-to-world unit quaternion."""

    id: str
    translation: tuple[float, float, float]
    rotation: tuple[float, float, float, float]

    def __post_init__(self):
        t = np.asarray(self.translation, dtype=float)
        q = np.asarray(self.rotation, dtype=float)
        if t.shape != (3,) or not np.all(np.isfinite(t)):
            raise InvalidInputError(f"pose {self.id!r}: bad translation {self.translation!r}")
        if q.shape != (4,) or not np.all(np.isfinite(q)):
            raise InvalidInputError(f"pose {self.id!r}: bad quaternion {self.rotation!r}")
        norm = float(np.linalg.norm(q))
        if abs(norm - 1.0) > 1e-6:
            raise InvalidInputError(
                f"pose {self.id!r}: quaternion norm {norm} deviates from 1 by more than 1e-6"
            )
        object.__setattr__(self, "translation", tuple(float(v) for v in t))
        object.__setattr__(self, "rotation", tuple(float(v) for v in q))


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics: focal lengths, principal point, image size in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidInputError("focal lengths must be positive")
        if not (self.width > 0 and self.height > 0):
            raise InvalidInputError("image size must be positive")


@dataclass(frozen=True)
class PointCloud:
    """World-frame 3D points indexed 0..n-1."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 1:
            raise InvalidInputError(f"point cloud must be (n, 3) with n >= 1, got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise InvalidInputError("point cloud contains non-finite coordinates")
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class VisibleSet:
    """Sorted, deduplicated indices of the points a camera sees."""

    indices: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))

    def __post_init__(self):
        idx = np.unique(np.asarray(self.indices, dtype=np.int64))
        object.__setattr__(self, "indices", idx)

    def __len__(self) -> int:
        return self.indices.size


def rotation_matrix(q) -> np.ndarray:
    """3x3 rotation matrix of a (w, x, y, z) quaternion."""
    w, x, y, z = (float(v) for v in q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def visible_points(cloud: PointCloud, pose: Pose6DOF, intr: CameraIntrinsics) -> VisibleSet:
    """Indices of cloud points with positive depth that project inside the image."""
    if len(cloud) < 1:
        raise InvalidInputError("empty point cloud")
    r_cw = rotation_matrix(pose.rotation)
    cam = (cloud.points - np.asarray(pose.translation)) @ r_cw  # world -> camera
    z = cam[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = intr.fx * cam[:, 0] / z + intr.cx
        v = intr.fy * cam[:, 1] / z + intr.cy
    ok = (z > 0) & (u >= 0) & (u < intr.width) & (v >= 0) & (v < intr.height)
    return VisibleSet(np.flatnonzero(ok))


def fov3d_similarity(
    cloud: PointCloud, pose_a: Pose6DOF, pose_b: Pose6DOF, intr: CameraIntrinsics
) -> float:
    """IoU of the two visible index sets; 0 when the union is empty."""
    va = visible_points(cloud, pose_a, intr)
    vb = visible_points(cloud, pose_b, intr)
    return _set_iou(va, vb)


def _set_iou(va: VisibleSet, vb: VisibleSet) -> float:
    inter = np.intersect1d(va.indices, vb.indices, assume_unique=True).size
    union = va.indices.size + vb.indices.size - inter
    if union == 0:
        return 0.0
    return inter / union


def fov3d_matrix(
    cloud: PointCloud,
    queries: list[Pose6DOF],
    maps: list[Pose6DOF],
    intr: CameraIntrinsics,
) -> GradedPairSet:
    """All-pairs 3D overlap; each pose's visible set is computed once and reused.

    Zero pairs are elided from explicit storage, like the 2D matrix.
    """
    if not queries or not maps:
        raise InvalidInputError("query and map lists must be non-empty")
    qset = GradedPairSet([p.id for p in queries], [p.id for p in maps])
    cache: dict[tuple, VisibleSet] = {}

    def cached(pose: Pose6DOF) -> VisibleSet:
        key = (pose.translation, pose.rotation)
        if key not in cache:
            vs = visible_points(cloud, pose, intr)
            if len(vs) == 0:
                logger.warning("pose %s sees no points; its similarities are all 0", pose.id)
            cache[key] = vs
        return cache[key]

    for q in queries:
        vq = cached(q)
        for m in maps:
            psi = _set_iou(vq, cached(m))
            if psi > 0.0:
                qset.add(GradedPair(q.id, m.id, psi))
    return qset
