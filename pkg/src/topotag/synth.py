"""Synthetic scene oracle: markers rendered under exact known pose.

The marker raster is placed in the frame by the exact plane-to-image
homography ``K [r1 r2 t]`` using supersampled inverse mapping, composited
over a generated background, blurred, noised (seeded), and optionally
occluded by a gray strip sweeping in from the baseline side or the opposite
side.  Ground truth (vertex projections, boundary polygon) is computed
analytically from the pose and never touches the rendering path, so it can
arbitrate any detector output.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .family import CanonicalLayout, TagFamily, TagId
from .generate import RenderOptions, marker_plane_transform, render_tag
from .geometry import convex_hull
from .image import gaussian_blur, read_gray
from .pose import CameraIntrinsics, Pose, project, so3_exp

SCENE_SCHEMA = "topotag-scene/1"
GROUND_TRUTH_SCHEMA = "topotag-ground-truth/1"

BACKGROUNDS = ("flat", "checker", "perlin-noise", "image-file")
OCCLUSION_SIDES = ("toward-baseline", "away-from-baseline")

OCCLUDER_VALUE = 128


class InvalidSceneError(ValueError):
    """Scene cannot be rendered (e.g. marker behind the camera)."""


def default_intrinsics(width: int = 1280, height: int = 960) -> CameraIntrinsics:
    """Plausible desk-camera intrinsics for a given frame size."""
    f = 0.9 * width
    return CameraIntrinsics(fx=f, fy=f, cx=(width - 1) / 2.0, cy=(height - 1) / 2.0)


def pose_from_view(
    out_of_plane_deg: float = 0.0,
    in_plane_deg: float = 0.0,
    distance: float = 0.5,
    tilt_axis_deg: float = 90.0,
    offset: tuple[float, float] = (0.0, 0.0),
) -> Pose:
    """Pose of a marker centered at `distance` meters, tilted out of plane
    about an image-plane axis and spun in plane."""
    phi = np.deg2rad(in_plane_deg)
    r_inplane = so3_exp(np.array([0.0, 0.0, phi]))
    axis_ang = np.deg2rad(tilt_axis_deg)
    axis = np.array([np.cos(axis_ang), np.sin(axis_ang), 0.0])
    r_tilt = so3_exp(axis * np.deg2rad(out_of_plane_deg))
    return Pose.from_matrix(r_tilt @ r_inplane, (offset[0], offset[1], distance))


@dataclass
class SynthScene:
    """Full description of one synthetic frame."""

    tag: TagId
    pose: Pose
    intrinsics: CameraIntrinsics
    tag_size: float = 0.05
    width: int = 1280
    height: int = 960
    background: str = "checker"
    background_value: int = 160
    background_path: str | None = None
    blur_sigma: float = 0.0
    noise_sigma: float = 0.0  # fraction of full scale
    occlusion: float = 0.0
    occlusion_side: str = "toward-baseline"
    rng_seed: int = 0
    node_shape: str = "square"
    dot_fraction: float = 0.5
    border_cells: float = 1.5
    supersampling: int = 8

    def __post_init__(self) -> None:
        if self.background not in BACKGROUNDS:
            raise ValueError(f"unknown background {self.background!r}")
        if self.occlusion_side not in OCCLUSION_SIDES:
            raise ValueError(f"unknown occlusion side {self.occlusion_side!r}")
        if not 0.0 <= self.occlusion <= 1.0:
            raise ValueError("occlusion fraction must be within [0, 1]")
        if self.background == "image-file" and not self.background_path:
            raise ValueError("background 'image-file' requires background_path")

    def to_dict(self) -> dict:
        w, x, y, z = self.pose.quaternion
        return {
            "schema": SCENE_SCHEMA,
            "grid": self.tag.family.grid_n,
            "id": self.tag.value,
            "pose": {
                "rotation_quat": [w, x, y, z],
                "translation_m": [float(v) for v in self.pose.translation],
            },
            "intrinsics": self.intrinsics.to_dict(),
            "tag_size": self.tag_size,
            "width": self.width,
            "height": self.height,
            "background": self.background,
            "background_value": self.background_value,
            "background_path": self.background_path,
            "blur_sigma": self.blur_sigma,
            "noise_sigma": self.noise_sigma,
            "occlusion": self.occlusion,
            "occlusion_side": self.occlusion_side,
            "rng_seed": self.rng_seed,
            "node_shape": self.node_shape,
            "dot_fraction": self.dot_fraction,
            "border_cells": self.border_cells,
            "supersampling": self.supersampling,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SynthScene":
        family = TagFamily.of(int(data["grid"]))
        tag = TagId(family, int(data["id"]))
        if "pose" in data:
            p = data["pose"]
            pose = Pose(p["rotation_quat"], p["translation_m"])
        else:
            pose = pose_from_view(**data.get("view", {}))
        intr = (
            CameraIntrinsics.from_dict(data["intrinsics"])
            if "intrinsics" in data
            else default_intrinsics(int(data.get("width", 1280)), int(data.get("height", 960)))
        )
        kwargs = {
            k: data[k]
            for k in (
                "tag_size",
                "width",
                "height",
                "background",
                "background_value",
                "background_path",
                "blur_sigma",
                "noise_sigma",
                "occlusion",
                "occlusion_side",
                "rng_seed",
                "node_shape",
                "dot_fraction",
                "border_cells",
                "supersampling",
            )
            if k in data and data[k] is not None
        }
        return cls(tag=tag, pose=pose, intrinsics=intr, **kwargs)


@dataclass
class GroundTruth:
    """Analytic truth for a scene, independent of the rendering."""

    tag: TagId
    pose: Pose
    vertex_pixels: np.ndarray  # (grid_n**2, 2), layout order
    boundary_polygon: np.ndarray

    def to_dict(self) -> dict:
        w, x, y, z = self.pose.quaternion
        return {
            "schema": GROUND_TRUTH_SCHEMA,
            "grid": self.tag.family.grid_n,
            "id": self.tag.value,
            "pose": {
                "rotation_quat": [w, x, y, z],
                "translation_m": [float(v) for v in self.pose.translation],
            },
            "vertices": [[float(a), float(b)] for a, b in self.vertex_pixels],
            "polygon": [[float(a), float(b)] for a, b in self.boundary_polygon],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GroundTruth":
        family = TagFamily.of(int(data["grid"]))
        p = data["pose"]
        return cls(
            tag=TagId(family, int(data["id"])),
            pose=Pose(p["rotation_quat"], p["translation_m"]),
            vertex_pixels=np.asarray(data["vertices"], dtype=np.float64),
            boundary_polygon=np.asarray(data["polygon"], dtype=np.float64),
        )


def _pinhole(intrinsics: CameraIntrinsics) -> CameraIntrinsics:
    # scenes are rendered without lens distortion
    return CameraIntrinsics(intrinsics.fx, intrinsics.fy, intrinsics.cx, intrinsics.cy)


def _background(scene: SynthScene, rng: np.random.Generator) -> np.ndarray:
    h, w = scene.height, scene.width
    if scene.background == "flat":
        return np.full((h, w), np.uint8(scene.background_value))
    if scene.background == "checker":
        tile = int(rng.integers(16, 40))
        dark = int(rng.integers(60, 120))
        light = int(rng.integers(150, 220))
        yy, xx = np.mgrid[0:h, 0:w]
        parity = ((yy // tile) + (xx // tile)) % 2
        return np.where(parity == 0, np.uint8(dark), np.uint8(light))
    if scene.background == "perlin-noise":
        # two octaves of smooth value noise
        from .image import upsample_bilinear

        out = np.zeros((h, w))
        for factor, weight in ((48, 0.7), (16, 0.3)):
            gh = -(-h // factor)
            gw = -(-w // factor)
            grid = rng.uniform(40, 220, size=(gh, gw))
            out += weight * upsample_bilinear(grid, factor, w, h)
        return np.clip(np.rint(out), 0, 255).astype(np.uint8)
    img = read_gray(scene.background_path)
    reps = (-(-h // img.shape[0]), -(-w // img.shape[1]))
    return np.tile(img, reps)[:h, :w]


def marker_to_image_homography(scene: SynthScene) -> np.ndarray:
    """Exact homography from marker-plane meters to pixel coordinates."""
    rot = scene.pose.matrix
    t = scene.pose.translation
    plane = np.column_stack([rot[:, 0], rot[:, 1], t])
    return _pinhole(scene.intrinsics).matrix @ plane


def ground_truth(scene: SynthScene) -> GroundTruth:
    layout = CanonicalLayout.for_family(
        scene.tag.family, scene.tag_size, black_border_cells=2.0 * scene.border_cells / 3.0
    )
    vertices = project(scene.pose, _pinhole(scene.intrinsics), layout.model_points)
    return GroundTruth(
        tag=scene.tag,
        pose=scene.pose,
        vertex_pixels=vertices,
        boundary_polygon=convex_hull(vertices),
    )


def render_scene(scene: SynthScene) -> tuple[np.ndarray, GroundTruth]:
    """Render a scene and return the frame plus its analytic ground truth."""
    family = scene.tag.family
    if scene.pose.translation[2] <= 0:
        raise InvalidSceneError("marker must sit in front of the camera")
    truth = ground_truth(scene)

    h2img = marker_to_image_homography(scene)
    layout = CanonicalLayout.for_family(
        family, scene.tag_size, black_border_cells=2.0 * scene.border_cells / 3.0
    )
    # apparent scale decides the canonical raster resolution
    n_cells = family.grid_n + 2.0 * scene.border_cells
    half = n_cells / 2.0 * layout.cell_pitch
    corners_m = np.array(
        [[-half, -half, 0], [half, -half, 0], [half, half, 0], [-half, half, 0]]
    )
    cam = corners_m @ scene.pose.matrix.T + scene.pose.translation
    if np.any(cam[:, 2] <= 0):
        raise InvalidSceneError("marker corner behind the camera")
    corners_px = project(scene.pose, _pinhole(scene.intrinsics), corners_m)
    edges = np.linalg.norm(np.roll(corners_px, -1, axis=0) - corners_px, axis=1)
    apparent_ppc = float(edges.max()) / n_cells
    ppc = int(np.clip(np.ceil(2.0 * apparent_ppc), 8, 96))

    opts = RenderOptions(
        pixels_per_cell=ppc,
        node_shape=scene.node_shape,
        dot_fraction=scene.dot_fraction,
        border_cells=scene.border_cells,
        supersampling=4,
    )
    marker = render_tag(scene.tag, opts).astype(np.float64)
    to_meters = marker_plane_transform(family, opts, layout)
    # canonical raster pixel-centers -> scene pixels
    warp = h2img @ to_meters
    inv = np.linalg.inv(warp)

    rng = np.random.default_rng(scene.rng_seed)
    img = _background(scene, rng).astype(np.float64)

    x0 = int(np.clip(np.floor(corners_px[:, 0].min()) - 2, 0, scene.width))
    x1 = int(np.clip(np.ceil(corners_px[:, 0].max()) + 3, 0, scene.width))
    y0 = int(np.clip(np.floor(corners_px[:, 1].min()) - 2, 0, scene.height))
    y1 = int(np.clip(np.ceil(corners_px[:, 1].max()) + 3, 0, scene.height))
    if x1 > x0 and y1 > y0:
        ss = scene.supersampling
        sub = (np.arange(ss) + 0.5) / ss - 0.5
        xs = (np.arange(x0, x1)[:, None] + sub[None, :]).reshape(-1)
        size = marker.shape[0]
        # process in row strips to bound peak memory at high supersampling
        strip = max(1, 2_000_000 // max(xs.size * ss, 1))
        for sy in range(y0, y1, strip):
            ey = min(sy + strip, y1)
            ys = (np.arange(sy, ey)[:, None] + sub[None, :]).reshape(-1)
            gx, gy = np.meshgrid(xs, ys)
            denom = inv[2, 0] * gx + inv[2, 1] * gy + inv[2, 2]
            u = (inv[0, 0] * gx + inv[0, 1] * gy + inv[0, 2]) / denom
            v = (inv[1, 0] * gx + inv[1, 1] * gy + inv[1, 2]) / denom

            inside = (u > -0.5) & (u < size - 0.5) & (v > -0.5) & (v < size - 0.5)
            uc = np.clip(u, 0, size - 1)
            vc = np.clip(v, 0, size - 1)
            iu = np.clip(np.floor(uc).astype(np.intp), 0, size - 2)
            iv = np.clip(np.floor(vc).astype(np.intp), 0, size - 2)
            fu = uc - iu
            fv = vc - iv
            samples = (
                marker[iv, iu] * (1 - fu) * (1 - fv)
                + marker[iv, iu + 1] * fu * (1 - fv)
                + marker[iv + 1, iu] * (1 - fu) * fv
                + marker[iv + 1, iu + 1] * fu * fv
            )
            samples = np.where(inside, samples, 0.0)

            bh, bw = ey - sy, x1 - x0
            tag_mean = samples.reshape(bh, ss, bw, ss).mean(axis=(1, 3))
            cover = inside.reshape(bh, ss, bw, ss).mean(axis=(1, 3))
            img[sy:ey, x0:x1] = tag_mean + img[sy:ey, x0:x1] * (1.0 - cover)

    img = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    if scene.blur_sigma > 0:
        kernel = 2 * int(np.ceil(3 * scene.blur_sigma)) + 1
        img = gaussian_blur(img, kernel, scene.blur_sigma, scene.blur_sigma)
    if scene.noise_sigma > 0:
        noise = rng.normal(0.0, scene.noise_sigma * 255.0, size=img.shape)
        img = np.clip(np.rint(img.astype(np.float64) + noise), 0, 255).astype(np.uint8)
    if scene.occlusion > 0:
        img = _apply_occlusion(scene, h2img, img)
    return img, truth


def _apply_occlusion(scene: SynthScene, h2img: np.ndarray, img: np.ndarray) -> np.ndarray:
    """Gray strip covering `occlusion` of the black-square marker area,
    sweeping from the baseline side (top) or away from it (bottom)."""
    half = scene.tag_size / 2.0
    depth = scene.occlusion * scene.tag_size
    if scene.occlusion_side == "toward-baseline":
        y_lo, y_hi = -half, -half + depth
    else:
        y_lo, y_hi = half - depth, half
    pad = 0.25 * scene.tag_size
    x_lo, x_hi = -half - pad, half + pad

    inv = np.linalg.inv(h2img)
    yy, xx = np.mgrid[0 : img.shape[0], 0 : img.shape[1]]
    denom = inv[2, 0] * xx + inv[2, 1] * yy + inv[2, 2]
    mx = (inv[0, 0] * xx + inv[0, 1] * yy + inv[0, 2]) / denom
    my = (inv[1, 0] * xx + inv[1, 1] * yy + inv[1, 2]) / denom
    band = (mx >= x_lo) & (mx <= x_hi) & (my >= y_lo) & (my <= y_hi) & (denom > 0)
    out = img.copy()
    out[band] = OCCLUDER_VALUE
    return out


def sweep(spec: dict, base_seed: int = 0) -> Iterator[tuple[SynthScene, GroundTruth, np.ndarray]]:
    """Deterministic Cartesian sweep over scene parameters.

    ``spec`` maps parameter names to value lists.  Pose parameters
    (``out_of_plane_deg``, ``in_plane_deg``, ``distance``, ``tilt_axis_deg``)
    build the pose via :func:`pose_from_view`; ``grid`` and ``id`` select the
    marker; remaining keys map directly onto :class:`SynthScene` fields.
    Every grid cell gets a derived seed, so the sweep is reproducible.
    """
    keys = sorted(spec.keys())
    lists = [list(spec[k]) for k in keys]
    if any(len(v) == 0 for v in lists):
        return
    view_keys = {"out_of_plane_deg", "in_plane_deg", "distance", "tilt_axis_deg"}

    def cells(idx: int, chosen: dict) -> Iterator[dict]:
        if idx == len(keys):
            yield dict(chosen)
            return
        for v in lists[idx]:
            chosen[keys[idx]] = v
            yield from cells(idx + 1, chosen)
        chosen.pop(keys[idx], None)

    for index, chosen in enumerate(cells(0, {})):
        grid = int(chosen.pop("grid", 4))
        tag_value = int(chosen.pop("id", 0))
        view = {k: chosen.pop(k) for k in list(chosen) if k in view_keys}
        width = int(chosen.pop("width", 1280))
        height = int(chosen.pop("height", 960))
        family = TagFamily.of(grid)
        scene = SynthScene(
            tag=TagId(family, tag_value),
            pose=pose_from_view(**view),
            intrinsics=default_intrinsics(width, height),
            width=width,
            height=height,
            rng_seed=(base_seed * 1_000_003 + index) % (1 << 63),
            **chosen,
        )
        img, truth = render_scene(scene)
        yield scene, truth, img


def save_scene(scene: SynthScene, path: str | Path) -> None:
    Path(path).write_text(json.dumps(scene.to_dict(), indent=2), encoding="utf-8")


def load_scene(path: str | Path) -> SynthScene:
    return SynthScene.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
