"""Synthetic desk-scale scenarios with planted geometric structure.

`make_city2d` lays map poses on a jittered grid with random headings and puts
each query near some map pose; features are a smooth random-Fourier function
of position and heading plus noise, so feature distance correlates with pose
distance before any training.

`make_cloud3d` builds a box-shaped point cloud ringed by inward-looking
cameras, for exercising the 3D annotation path.

All randomness flows from the seed through one generator in a fixed order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .formats import DescriptorStore
from .fov2d import CameraPose2D
from .fov3d import CameraIntrinsics, PointCloud, Pose6DOF


@dataclass
class City2DScenario:
    map_poses: list[CameraPose2D]
    query_poses: list[CameraPose2D]
    store: DescriptorStore  # union of map and query features


@dataclass
class Cloud3DScenario:
    poses: list[Pose6DOF]
    cloud: PointCloud
    intrinsics: CameraIntrinsics
    store: DescriptorStore


def _fourier_features(
    u: np.ndarray, feature_dim: int, rng: np.random.Generator, noise_std: float
) -> np.ndarray:
    """Random Fourier features of the rows of u, plus Gaussian noise.

    Nearby rows of u get nearby features (a smooth random function); the
    projection and phases are drawn once so all rows share the same function.
    """
    proj = rng.normal(size=(u.shape[1], feature_dim))
    phase = rng.uniform(0.0, 2.0 * math.pi, size=feature_dim)
    f = math.sqrt(2.0 / feature_dim) * np.cos(u @ proj + phase)
    if noise_std > 0:
        f = f + rng.normal(scale=noise_std, size=f.shape)
    return f


def make_city2d(
    n_map: int,
    n_query: int,
    seed: int,
    feature_dim: int = 24,
    spacing: float = 4.0,
    position_scale: float | None = None,
    heading_weight: float = 0.45,
    noise_std: float = 0.02,
    nuisance_dims: int = 4,
    nuisance_scale: float = 0.22,
    query_offset_m: float = 15.0,
    query_heading_jitter_deg: float = 25.0,
) -> City2DScenario:
    """Jittered grid of map poses plus queries perturbed from random map poses.

    The first `feature_dim - nuisance_dims` feature entries are a smooth
    random function of position (kernel length defaulting to half the grid
    span) and heading; the trailing `nuisance_dims` entries are pose-unrelated
    clutter that retrieval training can learn to suppress.
    """
    if n_map < 1 or n_query < 0:
        raise InvalidInputError("need at least one map pose and a non-negative query count")
    if not (0 <= nuisance_dims < feature_dim):
        raise InvalidInputError("nuisance dims must leave at least one signal dim")
    rng = np.random.default_rng(seed)
    side = math.ceil(math.sqrt(n_map))
    if position_scale is None:
        position_scale = max(0.5 * side * spacing, spacing)
    gi = np.arange(n_map)
    gx = (gi % side) * spacing
    gy = (gi // side) * spacing
    jitter = rng.uniform(-spacing / 3.0, spacing / 3.0, size=(n_map, 2))
    map_xy = np.stack([gx, gy], axis=1) + jitter
    map_heading = rng.uniform(0.0, 360.0, size=n_map)

    anchors = rng.integers(0, n_map, size=n_query)
    radii = query_offset_m * np.sqrt(rng.uniform(size=n_query))
    angles = rng.uniform(0.0, 2.0 * math.pi, size=n_query)
    query_xy = map_xy[anchors] + radii[:, None] * np.stack(
        [np.cos(angles), np.sin(angles)], axis=1
    )
    query_heading = (
        map_heading[anchors]
        + rng.uniform(-query_heading_jitter_deg, query_heading_jitter_deg, size=n_query)
    ) % 360.0

    width = max(4, len(str(max(n_map, max(n_query, 1)) - 1)))
    map_poses = [
        CameraPose2D(f"m{i:0{width}d}", float(x), float(y), float(h))
        for i, (x, y, h) in enumerate(zip(map_xy[:, 0], map_xy[:, 1], map_heading))
    ]
    query_poses = [
        CameraPose2D(f"q{i:0{width}d}", float(x), float(y), float(h))
        for i, (x, y, h) in enumerate(zip(query_xy[:, 0], query_xy[:, 1], query_heading))
    ]

    all_xy = np.concatenate([map_xy, query_xy]) if n_query else map_xy
    all_h = np.radians(np.concatenate([map_heading, query_heading]) if n_query else map_heading)
    u = np.column_stack(
        [
            all_xy / position_scale,
            heading_weight * np.cos(all_h),
            heading_weight * np.sin(all_h),
        ]
    )
    features = _fourier_features(u, feature_dim - nuisance_dims, rng, noise_std)
    if nuisance_dims:
        clutter = nuisance_scale * rng.normal(size=(features.shape[0], nuisance_dims))
        features = np.concatenate([features, clutter], axis=1)
    ids = [p.id for p in map_poses] + [p.id for p in query_poses]
    return City2DScenario(map_poses, query_poses, DescriptorStore(ids, features))


def _quaternion_from_matrix(r: np.ndarray) -> tuple[float, float, float, float]:
    """(w, x, y, z) quaternion of a proper rotation matrix."""
    t = np.trace(r)
    if t > 0:
        s = math.sqrt(t + 1.0) * 2.0
        w = 0.25 * s
        x = (r[2, 1] - r[1, 2]) / s
        y = (r[0, 2] - r[2, 0]) / s
        z = (r[1, 0] - r[0, 1]) / s
    elif r[0, 0] >= r[1, 1] and r[0, 0] >= r[2, 2]:
        s = math.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2]) * 2.0
        w = (r[2, 1] - r[1, 2]) / s
        x = 0.25 * s
        y = (r[0, 1] + r[1, 0]) / s
        z = (r[0, 2] + r[2, 0]) / s
    elif r[1, 1] >= r[2, 2]:
        s = math.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2]) * 2.0
        w = (r[0, 2] - r[2, 0]) / s
        x = (r[0, 1] + r[1, 0]) / s
        y = 0.25 * s
        z = (r[1, 2] + r[2, 1]) / s
    else:
        s = math.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1]) * 2.0
        w = (r[1, 0] - r[0, 1]) / s
        x = (r[0, 2] + r[2, 0]) / s
        y = (r[1, 2] + r[2, 1]) / s
        z = 0.25 * s
    q = np.array([w, x, y, z])
    q /= np.linalg.norm(q)
    return tuple(float(v) for v in q)


def looking_quaternion(direction_xy) -> tuple[float, float, float, float]:
    """Camera-to-world quaternion for a level camera looking along a horizontal direction.

    Camera axes follow the pinhole convention: +x right, +y down, +z forward.
    """
    d = np.asarray(direction_xy, dtype=float)
    n = np.linalg.norm(d)
    if n < 1e-12:
        raise InvalidInputError("look direction must be non-zero")
    fwd = np.array([d[0] / n, d[1] / n, 0.0])
    down = np.array([0.0, 0.0, -1.0])
    right = np.cross(down, fwd)
    return _quaternion_from_matrix(np.column_stack([right, down, fwd]))


DEFAULT_INTRINSICS = CameraIntrinsics(fx=400.0, fy=400.0, cx=320.0, cy=240.0, width=640, height=480)


def make_cloud3d(
    n_points: int,
    n_poses: int,
    seed: int,
    feature_dim: int = 16,
    box=((-4.0, 4.0), (-4.0, 4.0), (0.0, 2.5)),
    ring_radius: float = 6.0,
    camera_height: float = 1.2,
    intrinsics: CameraIntrinsics = DEFAULT_INTRINSICS,
) -> Cloud3DScenario:
    """Uniform box cloud ringed by inward-looking cameras."""
    if n_points < 1 or n_poses < 1:
        raise InvalidInputError("need at least one point and one pose")
    rng = np.random.default_rng(seed)
    lows = np.array([b[0] for b in box])
    highs = np.array([b[1] for b in box])
    points = rng.uniform(lows, highs, size=(n_points, 3))

    angles = np.sort(rng.uniform(0.0, 2.0 * math.pi, size=n_poses))
    radii = ring_radius * (1.0 + rng.uniform(-0.1, 0.1, size=n_poses))
    width = max(4, len(str(n_poses - 1)))
    poses = []
    for i, (a, r) in enumerate(zip(angles, radii)):
        pos = (float(r * math.cos(a)), float(r * math.sin(a)), camera_height)
        q = looking_quaternion([-math.cos(a), -math.sin(a)])
        poses.append(Pose6DOF(f"p{i:0{width}d}", pos, q))

    u = np.column_stack(
        [
            np.array([p.translation for p in poses]) / ring_radius,
            np.cos(angles)[:, None],
            np.sin(angles)[:, None],
        ]
    )
    features = _fourier_features(u, feature_dim, rng, noise_std=0.05)
    store = DescriptorStore([p.id for p in poses], features)
    return Cloud3DScenario(poses, PointCloud(points), intrinsics, store)
