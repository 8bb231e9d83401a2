"""Camera model, homography estimation, and planar pose refinement.

Pipeline: normalized DLT gives the marker-plane-to-image homography; the
homography is decomposed against the intrinsics into an initial rigid pose
(points are coplanar, so plane decomposition is better conditioned than a
general PnP initialization); Levenberg-Marquardt then minimizes the pixel
reprojection error over all vertex correspondences.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.spatial.transform import Rotation


class DegenerateGeometryError(ValueError):
    """Point configuration is rank-deficient (e.g. collinear)."""


class BehindCameraError(ValueError):
    """A model point projected with non-positive depth."""


class NumericFailureError(RuntimeError):
    """Non-finite residuals encountered during refinement."""


@dataclass
class CameraIntrinsics:
    """Pinhole camera with radial-tangential distortion [k1, k2, p1, p2, k3]."""

    fx: float
    fy: float
    cx: float
    cy: float
    dist: np.ndarray = field(default_factory=lambda: np.zeros(5))

    def __post_init__(self) -> None:
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        self.dist = np.asarray(self.dist, dtype=np.float64).reshape(-1)
        if self.dist.size != 5:
            d = np.zeros(5)
            d[: self.dist.size] = self.dist
            self.dist = d

    @property
    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    @property
    def has_distortion(self) -> bool:
        return bool(np.any(self.dist != 0.0))

    def to_dict(self) -> dict:
        return {
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "dist": [float(v) for v in self.dist],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CameraIntrinsics":
        return cls(
            fx=float(data["fx"]),
            fy=float(data["fy"]),
            cx=float(data["cx"]),
            cy=float(data["cy"]),
            dist=np.asarray(data.get("dist", np.zeros(5)), dtype=np.float64),
        )

    @classmethod
    def from_json_file(cls, path: str | Path) -> "CameraIntrinsics":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


class Pose:
    """Rigid transform camera<-marker: p_cam = R @ p_marker + t.

    Rotation is stored as a unit quaternion (w, x, y, z); ``matrix`` exposes
    the equivalent orthonormal 3x3 matrix.
    """

    __slots__ = ("quaternion", "translation")

    def __init__(self, quaternion, translation):
        q = np.asarray(quaternion, dtype=np.float64).reshape(4)
        norm = np.linalg.norm(q)
        if not np.isfinite(norm) or norm == 0.0:
            raise ValueError("quaternion must be finite and nonzero")
        self.quaternion = q / norm
        self.translation = np.asarray(translation, dtype=np.float64).reshape(3).copy()

    @classmethod
    def from_matrix(cls, rotation: np.ndarray, translation) -> "Pose":
        x, y, z, w = Rotation.from_matrix(np.asarray(rotation)).as_quat()
        return cls((w, x, y, z), translation)

    @classmethod
    def identity(cls, translation=(0.0, 0.0, 0.0)) -> "Pose":
        return cls((1.0, 0.0, 0.0, 0.0), translation)

    @property
    def matrix(self) -> np.ndarray:
        w, x, y, z = self.quaternion
        return Rotation.from_quat((x, y, z, w)).as_matrix()

    def rotation_angle_to(self, other: "Pose") -> float:
        """Angular distance between the two rotations, radians."""
        return rotation_angle(self.matrix @ other.matrix.T)

    def __repr__(self) -> str:
        q = ", ".join(f"{v:.4f}" for v in self.quaternion)
        t = ", ".join(f"{v:.4f}" for v in self.translation)
        return f"Pose(q=[{q}], t=[{t}])"


@dataclass(frozen=True)
class Correspondence:
    """One 3-D model point (marker frame, z = 0) and its 2-D image point."""

    model: np.ndarray
    image: np.ndarray


def _unpack(correspondences) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(correspondences, tuple) and len(correspondences) == 2:
        model, image = correspondences
    else:
        model = np.array([c.model for c in correspondences], dtype=np.float64)
        image = np.array([c.image for c in correspondences], dtype=np.float64)
    model = np.asarray(model, dtype=np.float64)
    image = np.asarray(image, dtype=np.float64)
    if model.shape[1] == 2:
        model = np.hstack([model, np.zeros((model.shape[0], 1))])
    return model, image


def rotation_angle(r: np.ndarray) -> float:
    """Rotation angle of a rotation matrix, radians."""
    c = (np.trace(r) - 1.0) / 2.0
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def so3_exp(omega: np.ndarray) -> np.ndarray:
    """Matrix exponential of a rotation vector (Rodrigues formula)."""
    omega = np.asarray(omega, dtype=np.float64)
    theta = np.linalg.norm(omega)
    if theta < 1e-12:
        k = _skew(omega)
        return np.eye(3) + k + 0.5 * k @ k
    a = omega / theta
    k = _skew(a)
    return np.eye(3) + np.sin(theta) * k + (1.0 - np.cos(theta)) * (k @ k)


def _skew(v: np.ndarray) -> np.ndarray:
    return np.array(
        [[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]]
    )


# ---------------------------------------------------------------------------
# Homography
# ---------------------------------------------------------------------------


def _normalize_2d(pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Hartley normalization: centroid at origin, RMS distance sqrt(2)."""
    centroid = pts.mean(axis=0)
    rms = np.sqrt(np.mean(np.sum((pts - centroid) ** 2, axis=1)))
    scale = np.sqrt(2.0) / rms if rms > 0 else 1.0
    t = np.array(
        [
            [scale, 0.0, -scale * centroid[0]],
            [0.0, scale, -scale * centroid[1]],
            [0.0, 0.0, 1.0],
        ]
    )
    return (pts - centroid) * scale, t


def dlt_homography(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Normalized DLT homography mapping src (N,2) onto dst (N,2).

    Scaled so the bottom-right element is 1.  Raises
    :class:`DegenerateGeometryError` for rank-deficient configurations.
    """
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    n = src.shape[0]
    if n < 4 or dst.shape[0] != n:
        raise ValueError("at least 4 matched points are required")
    sn, ts = _normalize_2d(src)
    dn, td = _normalize_2d(dst)

    a = np.zeros((2 * n, 9))
    x, y = sn[:, 0], sn[:, 1]
    u, v = dn[:, 0], dn[:, 1]
    a[0::2, 0] = -x
    a[0::2, 1] = -y
    a[0::2, 2] = -1.0
    a[0::2, 6] = u * x
    a[0::2, 7] = u * y
    a[0::2, 8] = u
    a[1::2, 3] = -x
    a[1::2, 4] = -y
    a[1::2, 5] = -1.0
    a[1::2, 6] = v * x
    a[1::2, 7] = v * y
    a[1::2, 8] = v

    _, s, vt = np.linalg.svd(a)
    # Rank must be 8: a vanishing second-smallest singular value means the
    # solution is not unique (collinear/coincident points).
    if s[-2] <= max(s[0] * 1e-9, 1e-300):
        raise DegenerateGeometryError("degenerate point configuration for homography")
    h = vt[-1].reshape(3, 3)
    h = np.linalg.inv(td) @ h @ ts
    if abs(h[2, 2]) < 1e-12 * np.linalg.norm(h):
        raise DegenerateGeometryError("homography has vanishing scale element")
    return h / h[2, 2]


def estimate_homography_dlt(correspondences) -> np.ndarray:
    """Homography sending model-plane (x, y) coordinates to image pixels."""
    model, image = _unpack(correspondences)
    return dlt_homography(model[:, :2], image)


def pose_from_homography(h: np.ndarray, intrinsics: CameraIntrinsics) -> Pose:
    """Decompose a model-plane-to-image homography into a rigid pose.

    The first two columns of K^-1 H approximate the first two rotation
    columns; the nearest rotation is recovered by SVD and the translation is
    scaled by the mean column norm.  The sign is fixed so the marker sits in
    front of the camera (positive z).
    """
    h = np.asarray(h, dtype=np.float64)
    if abs(np.linalg.det(h)) < 1e-15:
        raise DegenerateGeometryError("homography is not invertible")
    m = np.linalg.solve(intrinsics.matrix, h)
    n1, n2 = np.linalg.norm(m[:, 0]), np.linalg.norm(m[:, 1])
    if n1 == 0.0 or n2 == 0.0:
        raise DegenerateGeometryError("homography column collapsed to zero")
    scale = 2.0 / (n1 + n2)
    if m[2, 2] * scale < 0:
        m = -m
    r1 = m[:, 0] * scale
    r2 = m[:, 1] * scale
    a = np.column_stack([r1, r2, np.cross(r1, r2)])
    u, _, vt = np.linalg.svd(a)
    r = u @ np.diag([1.0, 1.0, np.sign(np.linalg.det(u @ vt))]) @ vt
    t = m[:, 2] * scale
    return Pose.from_matrix(r, t)


# ---------------------------------------------------------------------------
# Projection model
# ---------------------------------------------------------------------------


def _distort(xn: np.ndarray, yn: np.ndarray, dist: np.ndarray):
    k1, k2, p1, p2, k3 = dist
    r2 = xn * xn + yn * yn
    radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3))
    xd = xn * radial + 2.0 * p1 * xn * yn + p2 * (r2 + 2.0 * xn * xn)
    yd = yn * radial + p1 * (r2 + 2.0 * yn * yn) + 2.0 * p2 * xn * yn
    return xd, yd, r2, radial


def _project_rt(
    rotation: np.ndarray, translation: np.ndarray, intrinsics: CameraIntrinsics, pts: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    cam = pts @ rotation.T + translation
    z = cam[:, 2]
    xn = cam[:, 0] / z
    yn = cam[:, 1] / z
    xd, yd, _, _ = _distort(xn, yn, intrinsics.dist)
    pix = np.column_stack([intrinsics.fx * xd + intrinsics.cx, intrinsics.fy * yd + intrinsics.cy])
    return pix, z


def project(pose: Pose, intrinsics: CameraIntrinsics, pts: np.ndarray) -> np.ndarray:
    """Project marker-frame 3-D points to pixel coordinates."""
    pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
    pix, z = _project_rt(pose.matrix, pose.translation, intrinsics, pts)
    if np.any(z <= 0):
        raise BehindCameraError("model points project with non-positive depth")
    return pix


def project_jacobian(
    pose: Pose, intrinsics: CameraIntrinsics, pts: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Projections plus the (N, 2, 6) Jacobian w.r.t. [omega, t].

    The rotation increment is multiplicative on the left:
    R(omega) = exp([omega]x) @ R, so d(R X)/d omega = -[R X]x.
    """
    pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
    rotation = pose.matrix
    cam = pts @ rotation.T + pose.translation
    z = cam[:, 2]
    if np.any(z <= 0):
        raise BehindCameraError("model points project with non-positive depth")
    xn = cam[:, 0] / z
    yn = cam[:, 1] / z
    k1, k2, p1, p2, k3 = intrinsics.dist
    xd, yd, r2, radial = _distort(xn, yn, intrinsics.dist)
    pix = np.column_stack(
        [intrinsics.fx * xd + intrinsics.cx, intrinsics.fy * yd + intrinsics.cy]
    )

    n = pts.shape[0]
    # d(cam)/d(omega, t): rotation part -[cam]x, translation part I
    dcam = np.zeros((n, 3, 6))
    dcam[:, 0, 1] = cam[:, 2]
    dcam[:, 0, 2] = -cam[:, 1]
    dcam[:, 1, 0] = -cam[:, 2]
    dcam[:, 1, 2] = cam[:, 0]
    dcam[:, 2, 0] = cam[:, 1]
    dcam[:, 2, 1] = -cam[:, 0]
    dcam[:, 0, 3] = 1.0
    dcam[:, 1, 4] = 1.0
    dcam[:, 2, 5] = 1.0

    # d(xn, yn)/d(cam)
    inv_z = 1.0 / z
    dn = np.zeros((n, 2, 3))
    dn[:, 0, 0] = inv_z
    dn[:, 0, 2] = -xn * inv_z
    dn[:, 1, 1] = inv_z
    dn[:, 1, 2] = -yn * inv_z

    # d(xd, yd)/d(xn, yn)
    dradial = k1 + r2 * (2.0 * k2 + 3.0 * k3 * r2)
    dd = np.zeros((n, 2, 2))
    dd[:, 0, 0] = radial + 2.0 * xn * xn * dradial + 2.0 * p1 * yn + 6.0 * p2 * xn
    dd[:, 0, 1] = 2.0 * xn * yn * dradial + 2.0 * p1 * xn + 2.0 * p2 * yn
    dd[:, 1, 0] = 2.0 * xn * yn * dradial + 2.0 * p1 * xn + 2.0 * p2 * yn
    dd[:, 1, 1] = radial + 2.0 * yn * yn * dradial + 6.0 * p1 * yn + 2.0 * p2 * xn

    focal = np.array([[intrinsics.fx], [intrinsics.fy]])
    jac = focal[None, :, :] * (dd @ dn @ dcam)
    return pix, jac


def undistort_points(pts: np.ndarray, intrinsics: CameraIntrinsics, iterations: int = 10) -> np.ndarray:
    """Invert lens distortion; returns ideal-pinhole pixel coordinates."""
    pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
    if not intrinsics.has_distortion:
        return pts.copy()
    x0 = (pts[:, 0] - intrinsics.cx) / intrinsics.fx
    y0 = (pts[:, 1] - intrinsics.cy) / intrinsics.fy
    k1, k2, p1, p2, k3 = intrinsics.dist
    x, y = x0.copy(), y0.copy()
    for _ in range(iterations):
        r2 = x * x + y * y
        radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3))
        dx = 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x)
        dy = p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y
        x = (x0 - dx) / radial
        y = (y0 - dy) / radial
    return np.column_stack(
        [intrinsics.fx * x + intrinsics.cx, intrinsics.fy * y + intrinsics.cy]
    )


# ---------------------------------------------------------------------------
# Levenberg-Marquardt refinement
# ---------------------------------------------------------------------------


def refine_pose_lm(
    init: Pose,
    correspondences,
    intrinsics: CameraIntrinsics,
    max_iterations: int = 100,
) -> tuple[Pose, float]:
    """Minimize squared pixel reprojection error over the 6-DoF pose.

    Rotation updates compose multiplicatively through the exponential map;
    damping starts at 1e-3, multiplied by 10 on rejected steps and divided by
    10 on accepted ones.  The returned cost never exceeds the initial cost.
    ``rmse`` is the root mean square over all residual components (2N).
    """
    model, image = _unpack(correspondences)
    n = model.shape[0]
    if n < 4:
        raise ValueError("at least 4 correspondences are required")

    def cost_of(rot: np.ndarray, tr: np.ndarray) -> float:
        pix, z = _project_rt(rot, tr, intrinsics, model)
        if np.any(z <= 0) or not np.all(np.isfinite(pix)):
            return np.inf
        return float(np.sum((pix - image) ** 2))

    rot = init.matrix
    tr = init.translation.copy()
    cost = cost_of(rot, tr)
    if not np.isfinite(cost):
        raise NumericFailureError("initial pose has non-finite reprojection residuals")

    lam = 1e-3
    for _ in range(max_iterations):
        pose = Pose.from_matrix(rot, tr)
        pix, jac = project_jacobian(pose, intrinsics, model)
        res = (pix - image).reshape(-1)
        j = jac.reshape(-1, 6)
        jtj = j.T @ j
        g = j.T @ res
        if np.linalg.norm(g, np.inf) < 1e-14:
            break

        stepped = False
        while lam < 1e12:
            damped = jtj + lam * np.diag(np.diag(jtj))
            try:
                delta = np.linalg.solve(damped, -g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            new_rot = so3_exp(delta[:3]) @ rot
            new_tr = tr + delta[3:]
            new_cost = cost_of(new_rot, new_tr)
            if new_cost < cost:
                decrease = cost - new_cost
                rot, tr, cost = new_rot, new_tr, new_cost
                lam = max(lam / 10.0, 1e-12)
                stepped = True
                if decrease < 1e-10 * max(cost, 1e-30) or np.linalg.norm(delta) < 1e-12:
                    stepped = False  # converged
                break
            lam *= 10.0
        if not stepped:
            break

    rmse = float(np.sqrt(cost / (2 * n)))
    return Pose.from_matrix(rot, tr), rmse


def _flipped_candidate(pose: Pose) -> Pose | None:
    """Second hypothesis of the planar-pose ambiguity: reflect the plane
    normal about the viewing direction, keeping the in-plane orientation."""
    rot = pose.matrix
    t = pose.translation
    norm_t = np.linalg.norm(t)
    if norm_t < 1e-12:
        return None
    view = t / norm_t
    normal = rot[:, 2]
    reflected = 2.0 * np.dot(normal, view) * view - normal
    axis = np.cross(normal, reflected)
    s = np.linalg.norm(axis)
    if s < 1e-9:
        return None
    angle = np.arctan2(s, float(np.dot(normal, reflected)))
    return Pose.from_matrix(so3_exp(axis / s * angle) @ rot, t)


def estimate_pose(detection, layout, intrinsics: CameraIntrinsics) -> tuple[Pose, float]:
    """Full planar pose from a detection's vertices and the family layout.

    Builds one correspondence per grid node (both baseline dots included),
    runs DLT + homography decomposition for the initial pose, then LM over
    the full distortion model.  Near fronto-parallel views carry a two-fold
    ambiguity; both hypotheses are refined and the lower-residual one wins.
    """
    vertices = np.asarray(getattr(detection, "vertices", detection), dtype=np.float64)
    model = np.asarray(layout.model_points, dtype=np.float64)
    if vertices.shape[0] != model.shape[0]:
        raise ValueError(
            f"{vertices.shape[0]} vertices vs {model.shape[0]} model points"
        )
    undistorted = undistort_points(vertices, intrinsics)
    h = dlt_homography(model[:, :2], undistorted)
    init = pose_from_homography(h, intrinsics)

    best = refine_pose_lm(init, (model, vertices), intrinsics)
    alt = _flipped_candidate(init)
    if alt is not None:
        try:
            other = refine_pose_lm(alt, (model, vertices), intrinsics)
        except (NumericFailureError, BehindCameraError):
            other = None
        if other is not None and other[1] < best[1]:
            best = other
    return best
