"""Topological fiducial markers: generation, detection, and pose estimation.

The marker's identity lives in its region containment tree: a black border
encloses a white interior, which encloses a grid of black nodes, each
carrying one bit as the presence of a white child dot.  A unique two-dot
baseline node anchors orientation, so every remaining bit encodes identity.

Typical use::

    import topotag

    family = topotag.TagFamily.of(4)
    img = topotag.render_tag(topotag.TagId(family, 8390))
    detections = topotag.detect(img, family)
"""

from .config import Config
from .decode import DecodeFailure, DecodeParams, Detection, detect
from .family import (
    CanonicalLayout,
    TagFamily,
    TagId,
    capacity,
    decode_bits,
    encode_id,
    enumerate_dictionary,
    expected_tree_counts,
)
from .generate import RenderOptions, render_model_points, render_tag, svg_tag
from .image import read_gray, write_gray
from .metrics import FrameTruth, MetricsReport, adjacent_pose_error, iou, jitter_stats, score_frames
from .pose import (
    CameraIntrinsics,
    Correspondence,
    Pose,
    estimate_homography_dlt,
    estimate_pose,
    pose_from_homography,
    project,
    refine_pose_lm,
)
from .regions import FilterParams, build_region_tree, correct_errors, filter_candidates, label_components
from .segment import SegmentationParams, binarize, estimate_threshold_map
from .synth import GroundTruth, SynthScene, pose_from_view, render_scene, sweep

__version__ = "0.1.0"

__all__ = [
    "CameraIntrinsics",
    "CanonicalLayout",
    "Config",
    "Correspondence",
    "DecodeFailure",
    "DecodeParams",
    "Detection",
    "FilterParams",
    "FrameTruth",
    "GroundTruth",
    "MetricsReport",
    "Pose",
    "RenderOptions",
    "SegmentationParams",
    "SynthScene",
    "TagFamily",
    "TagId",
    "adjacent_pose_error",
    "binarize",
    "build_region_tree",
    "capacity",
    "correct_errors",
    "decode_bits",
    "detect",
    "encode_id",
    "enumerate_dictionary",
    "estimate_homography_dlt",
    "estimate_pose",
    "estimate_threshold_map",
    "expected_tree_counts",
    "filter_candidates",
    "iou",
    "jitter_stats",
    "label_components",
    "pose_from_homography",
    "pose_from_view",
    "project",
    "read_gray",
    "refine_pose_lm",
    "render_model_points",
    "render_scene",
    "render_tag",
    "score_frames",
    "svg_tag",
    "sweep",
    "write_gray",
]
