"""Evaluation harness: IoU matching, recall/precision, jitter, pose errors.

A frame counts as a true positive when some detection carries the right id
and overlaps the truth polygon with IoU >= 0.5; every unmatched detection is
a false positive; a frame with no true positive is a false negative.  Jitter
is the standard deviation of repeated estimates at a static viewpoint, and
adjacent-pose error compares estimated viewpoint-to-viewpoint motion against
ground truth.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .geometry import clip_convex, convex_hull, polygon_area
from .pose import Pose, rotation_angle

IOU_MATCH_THRESHOLD = 0.5
MIN_RELIABLE_SAMPLES = 50


def iou(poly_a: np.ndarray, poly_b: np.ndarray) -> float:
    """Intersection-over-union of two convex polygons (hulls are taken first).

    Degenerate zero-area inputs give 0.
    """
    a = convex_hull(np.asarray(poly_a, dtype=np.float64))
    b = convex_hull(np.asarray(poly_b, dtype=np.float64))
    area_a = polygon_area(a)
    area_b = polygon_area(b)
    if area_a == 0.0 or area_b == 0.0:
        return 0.0
    inter = polygon_area(clip_convex(a, b))
    union = area_a + area_b - inter
    return float(inter / union) if union > 0 else 0.0


@dataclass
class FrameTruth:
    """Ground truth for one frame (datasets hold one tag per frame)."""

    frame: str
    polygon: np.ndarray
    tag_value: int
    image: str | None = None
    pose: Pose | None = None
    viewpoint: str | None = None

    @classmethod
    def from_dict(cls, data: dict) -> "FrameTruth":
        pose = None
        if data.get("pose"):
            p = data["pose"]
            pose = Pose(p["rotation_quat"], p["translation_m"])
        return cls(
            frame=str(data["frame"]),
            polygon=np.asarray(data["polygon"], dtype=np.float64),
            tag_value=int(data["id"]),
            image=data.get("image"),
            pose=pose,
            viewpoint=None if data.get("viewpoint") is None else str(data["viewpoint"]),
        )


def load_manifest(path: str | Path) -> list[FrameTruth]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return [FrameTruth.from_dict(f) for f in doc["frames"]]


def _det_fields(det) -> tuple[int, np.ndarray]:
    if isinstance(det, dict):
        return int(det["id"]), np.asarray(det["polygon"], dtype=np.float64)
    return det.tag_id.value, det.polygon


def score_frames(
    detections_per_frame: dict[str, list], truths: Sequence[FrameTruth]
) -> tuple[int, int, int]:
    """(tp, fp, fn) counts over a dataset of frames.

    Detections may be :class:`~topotag.decode.Detection` objects or dicts with
    ``id`` and ``polygon`` entries, grouped by frame key.
    """
    tp = fp = fn = 0
    for truth in truths:
        dets = detections_per_frame.get(truth.frame, [])
        matched = False
        for det in dets:
            value, polygon = _det_fields(det)
            if (
                not matched
                and value == truth.tag_value
                and iou(polygon, truth.polygon) >= IOU_MATCH_THRESHOLD
            ):
                matched = True
            else:
                fp += 1
        if matched:
            tp += 1
        else:
            fn += 1
    return tp, fp, fn


def mean_quaternion(quats: np.ndarray) -> np.ndarray:
    """Average rotation as the principal eigenvector of the outer-product sum
    (sign-invariant)."""
    q = np.asarray(quats, dtype=np.float64)
    m = q.T @ q
    vals, vecs = np.linalg.eigh(m)
    mean = vecs[:, -1]
    if mean[0] < 0:
        mean = -mean
    return mean / np.linalg.norm(mean)


def _pose_arrays(poses: Sequence[Pose]) -> tuple[np.ndarray, np.ndarray]:
    quats = np.array([p.quaternion for p in poses])
    trans = np.array([p.translation for p in poses])
    return quats, trans


def mean_pose(poses: Sequence[Pose]) -> Pose:
    quats, trans = _pose_arrays(poses)
    return Pose(mean_quaternion(quats), trans.mean(axis=0))


@dataclass
class ViewpointJitter:
    viewpoint: str
    n_samples: int
    vertex_std_px: float | None = None
    position_std_mm: float | None = None
    rotation_std_deg: float | None = None
    reliable: bool = True


@dataclass
class JitterReport:
    viewpoints: list[ViewpointJitter] = field(default_factory=list)

    def _agg(self, attr: str) -> tuple[float, float] | None:
        vals = [
            getattr(v, attr)
            for v in self.viewpoints
            if v.reliable and getattr(v, attr) is not None
        ]
        if not vals:
            return None
        return float(np.mean(vals)), float(np.max(vals))

    @property
    def vertex_avg_max(self):
        return self._agg("vertex_std_px")

    @property
    def position_avg_max(self):
        return self._agg("position_std_mm")

    @property
    def rotation_avg_max(self):
        return self._agg("rotation_std_deg")

    def to_dict(self) -> dict:
        return {
            "viewpoints": [vars(v) for v in self.viewpoints],
            "vertex_jitter_px": self.vertex_avg_max,
            "position_jitter_mm": self.position_avg_max,
            "rotation_jitter_deg": self.rotation_avg_max,
        }


def jitter_stats(
    series: dict[str, dict],
    min_samples: int = MIN_RELIABLE_SAMPLES,
) -> JitterReport:
    """Per-viewpoint STD of repeated estimates.

    ``series`` maps a viewpoint name to a dict with optional entries:
    ``vertices`` (F, V, 2) in pixels, ``poses`` (list of Pose).  Viewpoints
    with fewer than ``min_samples`` frames are flagged unreliable and left out
    of the aggregates.  Vertex jitter is the mean over vertices of the 2-D
    positional STD; position jitter is the norm of the per-axis STDs;
    rotation jitter is the RMS angle to the mean rotation.
    """
    report = JitterReport()
    for name in sorted(series.keys()):
        data = series[name]
        n = 0
        vj = ViewpointJitter(viewpoint=name, n_samples=0)
        if "vertices" in data and data["vertices"] is not None:
            verts = np.asarray(data["vertices"], dtype=np.float64)
            n = max(n, verts.shape[0])
            if verts.shape[0] >= min_samples:
                var = verts.var(axis=0)  # (V, 2)
                vj.vertex_std_px = float(np.mean(np.sqrt(var.sum(axis=1))))
        if "poses" in data and data["poses"]:
            poses = data["poses"]
            n = max(n, len(poses))
            if len(poses) >= min_samples:
                quats, trans = _pose_arrays(poses)
                vj.position_std_mm = float(np.sqrt(trans.var(axis=0).sum()) * 1000.0)
                mean = Pose(mean_quaternion(quats), trans.mean(axis=0)).matrix
                angles = [rotation_angle(p.matrix @ mean.T) for p in poses]
                vj.rotation_std_deg = float(np.rad2deg(np.sqrt(np.mean(np.square(angles)))))
        vj.n_samples = n
        vj.reliable = n >= min_samples
        report.viewpoints.append(vj)
    return report


@dataclass
class AdjacentPoseErrors:
    position_mm: list[float]
    rotation_deg: list[float]
    skipped_pairs: list[int]

    @property
    def position_avg_max(self) -> tuple[float, float] | None:
        if not self.position_mm:
            return None
        return float(np.mean(self.position_mm)), float(np.max(self.position_mm))

    @property
    def rotation_avg_max(self) -> tuple[float, float] | None:
        if not self.rotation_deg:
            return None
        return float(np.mean(self.rotation_deg)), float(np.max(self.rotation_deg))

    def to_dict(self) -> dict:
        return {
            "position_mm": self.position_mm,
            "rotation_deg": self.rotation_deg,
            "skipped_pairs": self.skipped_pairs,
            "position_avg_max": self.position_avg_max,
            "rotation_avg_max": self.rotation_avg_max,
        }


def adjacent_pose_error(
    estimated: Sequence[Sequence[Pose] | Pose | None],
    truth: Sequence[Pose],
) -> AdjacentPoseErrors:
    """Relative-motion accuracy between consecutive viewpoints.

    ``estimated[k]`` holds the pose estimates at viewpoint k (a list is
    averaged first; None marks a missing viewpoint, skipping its pairs).
    Position error is ``|dt_est - dt_gt|`` in mm; rotation error is the
    angular distance between estimated and true relative rotations.
    """
    if len(estimated) != len(truth):
        raise ValueError("estimated and truth must cover the same viewpoints")
    means: list[Pose | None] = []
    for entry in estimated:
        if entry is None:
            means.append(None)
        elif isinstance(entry, Pose):
            means.append(entry)
        else:
            means.append(mean_pose(list(entry)) if len(entry) else None)

    pos: list[float] = []
    rot: list[float] = []
    skipped: list[int] = []
    for k in range(len(truth) - 1):
        a, b = means[k], means[k + 1]
        if a is None or b is None:
            skipped.append(k)
            continue
        dt_est = b.translation - a.translation
        dt_gt = truth[k + 1].translation - truth[k].translation
        pos.append(float(np.linalg.norm(dt_est - dt_gt) * 1000.0))
        rel_est = b.matrix @ a.matrix.T
        rel_gt = truth[k + 1].matrix @ truth[k].matrix.T
        rot.append(float(np.rad2deg(rotation_angle(rel_est @ rel_gt.T))))
    return AdjacentPoseErrors(position_mm=pos, rotation_deg=rot, skipped_pairs=skipped)


@dataclass
class MetricsReport:
    tp: int
    fp: int
    fn: int
    jitter: JitterReport | None = None
    adjacent: AdjacentPoseErrors | None = None

    @property
    def recall(self) -> float | None:
        return self.tp / (self.tp + self.fn) if (self.tp + self.fn) > 0 else None

    @property
    def precision(self) -> float | None:
        return self.tp / (self.tp + self.fp) if (self.tp + self.fp) > 0 else None

    def to_dict(self) -> dict:
        doc = {
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "recall": self.recall,
            "precision": self.precision,
        }
        if self.jitter is not None:
            doc["jitter"] = self.jitter.to_dict()
        if self.adjacent is not None:
            doc["adjacent_pose_error"] = self.adjacent.to_dict()
        return doc

    def write_csv(self, path: str | Path) -> None:
        """Summary table: one metric per row with avg/max columns."""
        rows = [
            ("recall", self.recall, ""),
            ("precision", self.precision, ""),
        ]
        if self.jitter is not None:
            for label, pair in (
                ("vertex_jitter_px", self.jitter.vertex_avg_max),
                ("position_jitter_mm", self.jitter.position_avg_max),
                ("rotation_jitter_deg", self.jitter.rotation_avg_max),
            ):
                if pair is not None:
                    rows.append((label, pair[0], pair[1]))
        if self.adjacent is not None:
            for label, pair in (
                ("adjacent_position_mm", self.adjacent.position_avg_max),
                ("adjacent_rotation_deg", self.adjacent.rotation_avg_max),
            ):
                if pair is not None:
                    rows.append((label, pair[0], pair[1]))
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["metric", "avg", "max"])
            for row in rows:
                writer.writerow(row)
