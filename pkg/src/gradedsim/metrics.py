"""Retrieval and localization metrics.

Positives come from either a geometric criterion (position distance plus
viewpoint difference) or a graded-similarity threshold (psi strictly above a
cutoff). Queries that have no positive anywhere in the map set are excluded
from recall denominators. Average precision ranks all scored pairs by
ascending distance with ties resolved pessimistically (positives after
negatives). Localization inherits the top-1 match's pose and scores it
against translation/rotation tier thresholds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .fov2d import CameraPose2D
from .fov3d import Pose6DOF
from .pairs import GradedPairSet

Results = dict[str, list[tuple[str, float]]]

DEFAULT_TIERS: tuple[tuple[float, float], ...] = ((0.25, 2.0), (0.5, 5.0), (5.0, 10.0))


@dataclass(frozen=True)
class GeoCriterion:
    """Positive iff distance <= max_dist_m and viewpoint difference <= max_angle_deg.

    `max_angle_deg=None` disables the angle constraint.
    """

    max_dist_m: float = 25.0
    max_angle_deg: float | None = 40.0

    def __post_init__(self):
        if not self.max_dist_m > 0:
            raise InvalidInputError("distance threshold must be positive")
        if self.max_angle_deg is not None and not self.max_angle_deg > 0:
            raise InvalidInputError("angle threshold must be positive")


@dataclass(frozen=True)
class PsiCriterion:
    """Positive iff annotated similarity strictly exceeds `min_psi`."""

    min_psi: float = 0.5

    def __post_init__(self):
        if not (0.0 <= self.min_psi < 1.0):
            raise InvalidInputError("psi threshold must lie in [0, 1)")


def _position(pose) -> np.ndarray:
    if isinstance(pose, CameraPose2D):
        return np.array([pose.t0, pose.t1])
    if isinstance(pose, Pose6DOF):
        return np.asarray(pose.translation, dtype=float)
    raise InvalidInputError(f"unsupported pose type {type(pose)!r}")


def translation_error(a, b) -> float:
    pa, pb = _position(a), _position(b)
    if pa.shape != pb.shape:
        raise InvalidInputError("cannot mix 2D and 6DOF poses in one comparison")
    return float(np.linalg.norm(pa - pb))


def rotation_error_deg(a, b) -> float:
    """Absolute heading difference for planar poses, geodesic angle for 6DOF."""
    if isinstance(a, CameraPose2D) and isinstance(b, CameraPose2D):
        diff = abs(a.heading_deg - b.heading_deg) % 360.0
        return min(diff, 360.0 - diff)
    if isinstance(a, Pose6DOF) and isinstance(b, Pose6DOF):
        dot = abs(float(np.dot(a.rotation, b.rotation)))
        return math.degrees(2.0 * math.acos(min(dot, 1.0)))
    raise InvalidInputError("cannot mix 2D and 6DOF poses in one comparison")


def geo_positives(
    query_ids,
    map_ids,
    poses: dict,
    criterion: GeoCriterion = GeoCriterion(),
) -> dict[str, set[str]]:
    """Map ids satisfying the geometric criterion, per query id."""
    query_ids, map_ids = list(query_ids), list(map_ids)
    for pid in [*query_ids, *map_ids]:
        if pid not in poses:
            raise InvalidInputError(f"missing pose for id {pid!r}")
    kinds = {type(poses[pid]) for pid in [*query_ids, *map_ids]}
    if len(kinds) > 1:
        raise InvalidInputError("cannot mix 2D and 6DOF poses in one comparison")
    qpos = np.array([_position(poses[q]) for q in query_ids])
    mpos = np.array([_position(poses[m]) for m in map_ids])
    dist = np.linalg.norm(qpos[:, None, :] - mpos[None, :, :], axis=2)
    mask = dist <= criterion.max_dist_m
    if criterion.max_angle_deg is not None:
        if kinds == {CameraPose2D}:
            qh = np.array([poses[q].heading_deg for q in query_ids])
            mh = np.array([poses[m].heading_deg for m in map_ids])
            diff = np.abs(qh[:, None] - mh[None, :]) % 360.0
            ang = np.minimum(diff, 360.0 - diff)
        else:
            qq = np.array([poses[q].rotation for q in query_ids])
            mq = np.array([poses[m].rotation for m in map_ids])
            dots = np.minimum(np.abs(qq @ mq.T), 1.0)
            ang = np.degrees(2.0 * np.arccos(dots))
        mask &= ang <= criterion.max_angle_deg
    return {
        qid: {map_ids[j] for j in np.flatnonzero(mask[i])}
        for i, qid in enumerate(query_ids)
    }


def psi_positives(
    pair_set: GradedPairSet, criterion: PsiCriterion = PsiCriterion()
) -> dict[str, set[str]]:
    """Map ids whose annotated similarity strictly exceeds the threshold."""
    out: dict[str, set[str]] = {qid: set() for qid in pair_set.query_ids}
    for pair in pair_set:
        if pair.psi > criterion.min_psi:
            out[pair.query_id].add(pair.map_id)
    return out


def recall_at_k(results: Results, positives: dict[str, set[str]], ks) -> dict[int, float]:
    """Fraction of queries whose top-k contains at least one positive.

    Queries with an empty positive set are excluded from the denominator.
    """
    ks = [int(k) for k in ks]
    if any(k < 1 for k in ks):
        raise InvalidInputError("every k must be at least 1")
    for qid in results:
        if qid not in positives:
            raise InvalidInputError(f"missing ground truth for query id {qid!r}")
    counted = [qid for qid in results if positives[qid]]
    out: dict[int, float] = {}
    for k in ks:
        if not counted:
            out[k] = 0.0
            continue
        hits = sum(
            1
            for qid in counted
            if any(mid in positives[qid] for mid, _ in results[qid][:k])
        )
        out[k] = hits / len(counted)
    return out


def average_precision(distances, labels) -> float:
    """Area under the precision-recall curve of distance-ranked pairs.

    Pairs are ranked by ascending distance; at equal distance positives rank
    after negatives (deterministic, pessimistic). AP sums precision@k times
    the recall increment at each positive rank.
    """
    d = np.asarray(distances, dtype=float)
    y = np.asarray(labels)
    if d.shape != y.shape or d.ndim != 1:
        raise InvalidInputError("distances and labels must be equal-length vectors")
    if not np.all((y == 0) | (y == 1)):
        raise InvalidInputError("labels must be binary")
    n_pos = int(y.sum())
    if n_pos == 0 or n_pos == y.size:
        raise InvalidInputError("need at least one positive and one negative pair")
    order = np.lexsort((y, d))
    ranked = y[order]
    ranks = np.arange(1, y.size + 1)
    cum_pos = np.cumsum(ranked)
    precision_at_pos = cum_pos[ranked == 1] / ranks[ranked == 1]
    return float(precision_at_pos.sum() / n_pos)


def localized_fraction(
    results: Results,
    query_poses: dict,
    map_poses: dict,
    tiers=DEFAULT_TIERS,
) -> list[float]:
    """Per-tier fraction of queries localized by inheriting the top-1 pose."""
    tiers = [(float(t), float(r)) for t, r in tiers]
    if not results:
        raise InvalidInputError("no query results")
    errors = []
    for qid, matches in results.items():
        if qid not in query_poses:
            raise InvalidInputError(f"missing pose for query id {qid!r}")
        if not matches:
            raise InvalidInputError(f"query {qid!r} has an empty ranked list")
        top_id = matches[0][0]
        if top_id not in map_poses:
            raise InvalidInputError(f"missing pose for map id {top_id!r}")
        errors.append(
            (
                translation_error(query_poses[qid], map_poses[top_id]),
                rotation_error_deg(query_poses[qid], map_poses[top_id]),
            )
        )
    out = []
    for max_t, max_r in tiers:
        hits = sum(1 for terr, rerr in errors if terr <= max_t and rerr <= max_r)
        out.append(hits / len(errors))
    return out


def threshold_sweep(
    results: Results,
    axis: str,
    grid,
    poses: dict | None = None,
    pair_set: GradedPairSet | None = None,
    map_ids=None,
    k: int = 5,
) -> list[tuple[float, float]]:
    """Recall@k recomputed with the positive criterion swept over a grid.

    `axis="distance_m"` redefines positives as map images within the grid
    distance (no angle constraint; requires poses and the map id universe);
    `axis="psi"` uses similarity strictly above the grid value (requires the
    graded pair set).
    """
    grid = [float(g) for g in grid]
    if not grid:
        raise InvalidInputError("threshold grid must be non-empty")
    curve = []
    if axis == "distance_m":
        if poses is None:
            raise InvalidInputError("distance sweep requires poses")
        if map_ids is None:
            map_ids = sorted(set(poses) - set(results))
        for t in grid:
            positives = geo_positives(
                list(results), list(map_ids), poses, GeoCriterion(max_dist_m=t, max_angle_deg=None)
            )
            curve.append((t, recall_at_k(results, positives, [k])[k]))
    elif axis == "psi":
        if pair_set is None:
            raise InvalidInputError("psi sweep requires the graded pair set")
        for t in grid:
            positives = psi_positives(pair_set, PsiCriterion(min_psi=t))
            curve.append((t, recall_at_k(results, positives, [k])[k]))
    else:
        raise InvalidInputError(f"unknown sweep axis {axis!r}; expected 'distance_m' or 'psi'")
    return curve
