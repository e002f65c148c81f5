"""Target selection: synthetic depth scans of the food on the fork,
bounding-box offsets in the mouth frame, mouth-center recovery from
facial keypoints, and final target-pose composition.

Clouds live in the mouth frame anchored at the fork tip, units mm:
z out of the mouth, y up toward the eyes, x along the lips to the
user's left. A failed or empty scan is always a hard error; feeding at
an unadjusted pose is never the silent default.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose
from .humansim import FoodPreset, FoodGeometry
from .transfer import transfer_orientation, DEFAULT_FORK_PITCH

DEFAULT_RESOLUTION_MM = 0.1
OFFSET_SANITY_MM = 50.0

# labels the default landmark scheme requires (subject's own left/right)
DEFAULT_LANDMARK_LABELS = (
    "mouth_corner_left", "mouth_corner_right", "inner_lip_top", "inner_lip_bottom",
)


class EmptyCloudError(ValueError):
    """Scan produced no points; offsets must not silently default."""


@dataclass(frozen=True)
class PointCloud:
    """Points (N, 3) in mm, mouth frame, with the scan grid resolution."""

    points: np.ndarray
    resolution: float = DEFAULT_RESOLUTION_MM
    frame: str = "mouth"

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3).copy()
        if pts.size and not np.all(np.isfinite(pts)):
            raise ValueError("cloud points must be finite")
        if self.resolution <= 0:
            raise ValueError("resolution must be > 0")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class MouthFrameSpec:
    """Right-handed mouth triad: z out of the mouth, y up, x along lips."""

    origin: np.ndarray = field(default_factory=lambda: np.zeros(3))
    x_axis: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0]))
    y_axis: np.ndarray = field(default_factory=lambda: np.array([0.0, 1.0, 0.0]))
    z_axis: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))

    def __post_init__(self):
        axes = [np.asarray(a, dtype=float).reshape(3) for a in
                (self.x_axis, self.y_axis, self.z_axis)]
        for a in axes:
            if abs(np.linalg.norm(a) - 1.0) > 1e-9:
                raise ValueError("mouth frame axes must be unit length")
        if (abs(axes[0] @ axes[1]) > 1e-9 or abs(axes[0] @ axes[2]) > 1e-9
                or abs(axes[1] @ axes[2]) > 1e-9):
            raise ValueError("mouth frame axes must be orthogonal")
        if np.linalg.norm(np.cross(axes[0], axes[1]) - axes[2]) > 1e-9:
            raise ValueError("mouth frame must be right-handed")
        o = np.asarray(self.origin, dtype=float).reshape(3).copy()
        for a in axes:
            a.setflags(write=False)
        o.setflags(write=False)
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "x_axis", axes[0])
        object.__setattr__(self, "y_axis", axes[1])
        object.__setattr__(self, "z_axis", axes[2])


@dataclass(frozen=True)
class FoodOffsets:
    """Face-plane target corrections, mm: dx along lips, dy vertical."""

    dx: float
    dy: float

    def __post_init__(self):
        if not (np.isfinite(self.dx) and np.isfinite(self.dy)):
            raise ValueError("offsets must be finite")
        if abs(self.dx) > OFFSET_SANITY_MM or abs(self.dy) > OFFSET_SANITY_MM:
            raise ValueError(
                f"offsets ({self.dx}, {self.dy}) mm exceed the {OFFSET_SANITY_MM} mm "
                "sanity bound; the scan looks degenerate")


@dataclass(frozen=True)
class Aabb:
    """Axis-aligned bounding box, mm."""

    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.min, dtype=float).reshape(3).copy()
        hi = np.asarray(self.max, dtype=float).reshape(3).copy()
        if np.any(lo > hi):
            raise ValueError("bbox min must be <= max componentwise")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "min", lo)
        object.__setattr__(self, "max", hi)


def _grid(lo: float, hi: float, res: float) -> np.ndarray:
    n = max(1, int(round((hi - lo) / res)))
    return np.linspace(lo, hi, n + 1)


def _sample_box(g: FoodGeometry, res: float) -> np.ndarray:
    cx, cy, cz = g.center
    sx, sy, sz = g.size / 2.0
    xs = _grid(cx - sx, cx + sx, res)
    ys = _grid(cy - sy, cy + sy, res)
    zs = _grid(cz - sz, cz + sz, res)
    faces = []
    for x in (cx - sx, cx + sx):
        yy, zz = np.meshgrid(ys, zs, indexing="ij")
        faces.append(np.column_stack([np.full(yy.size, x), yy.ravel(), zz.ravel()]))
    for y in (cy - sy, cy + sy):
        xx, zz = np.meshgrid(xs, zs, indexing="ij")
        faces.append(np.column_stack([xx.ravel(), np.full(xx.size, y), zz.ravel()]))
    for z in (cz - sz, cz + sz):
        xx, yy = np.meshgrid(xs, ys, indexing="ij")
        faces.append(np.column_stack([xx.ravel(), yy.ravel(), np.full(xx.size, z)]))
    return np.vstack(faces)


def _sample_sphere(g: FoodGeometry, res: float) -> np.ndarray:
    r = float(g.radius)
    n_lat = max(2, int(round(np.pi * r / res)))
    n_lon = max(3, int(round(2.0 * np.pi * r / res)))
    phi = np.linspace(0.0, np.pi, n_lat + 1)
    theta = np.linspace(0.0, 2.0 * np.pi, n_lon, endpoint=False)
    pp, tt = np.meshgrid(phi, theta, indexing="ij")
    pts = np.column_stack([
        r * np.sin(pp.ravel()) * np.cos(tt.ravel()),
        r * np.sin(pp.ravel()) * np.sin(tt.ravel()),
        r * np.cos(pp.ravel()),
    ])
    return pts + g.center


def _sample_cylinder(g: FoodGeometry, res: float) -> np.ndarray:
    r = float(g.radius)
    half = float(g.length) / 2.0
    n_ang = max(3, int(round(2.0 * np.pi * r / res)))
    theta = np.linspace(0.0, 2.0 * np.pi, n_ang, endpoint=False)
    axial = _grid(-half, half, res)
    tt, aa = np.meshgrid(theta, axial, indexing="ij")
    side = np.column_stack([aa.ravel(), r * np.cos(tt.ravel()), r * np.sin(tt.ravel())])
    # end caps as radial rings
    caps = []
    radii = _grid(0.0, r, res)
    for a in (-half, half):
        for rr in radii:
            ring = np.column_stack([
                np.full_like(theta, a), rr * np.cos(theta), rr * np.sin(theta)])
            caps.append(ring)
    pts = np.vstack([side] + caps)
    order = {"x": (0, 1, 2), "y": (1, 0, 2), "z": (2, 1, 0)}[g.axis]
    return pts[:, order] + g.center


def synth_depth_scan(food: FoodPreset, fork_pose_on_scan: Pose,
                     resolution: float = DEFAULT_RESOLUTION_MM,
                     seed: int = 0, noise_mm: float = 0.0) -> PointCloud:
    """Synthesize the scan cloud of the food on the fork.

    The sampler walks each primitive's surface on a grid at the scan
    resolution, standing in for the physical camera sweep; points are
    reported in the mouth frame anchored at the fork tip. Optional
    seeded Gaussian jitter models sensor noise (off by default, so the
    scan is deterministic either way).
    """
    if resolution <= 0:
        raise ValueError("resolution must be > 0")
    parts = []
    for g in food.geometry:
        if g.kind == "box":
            parts.append(_sample_box(g, resolution))
        elif g.kind == "sphere":
            parts.append(_sample_sphere(g, resolution))
        elif g.kind == "cylinder":
            parts.append(_sample_cylinder(g, resolution))
    if not parts:
        raise EmptyCloudError(f"food {food.name!r} has no geometry to scan")
    pts = np.vstack(parts)
    if pts.shape[0] == 0:
        raise EmptyCloudError(f"scan of {food.name!r} produced no points")
    if noise_mm > 0.0:
        rng = np.random.default_rng(seed)
        pts = pts + rng.normal(scale=noise_mm, size=pts.shape)
    return PointCloud(pts, resolution)


def food_bounding_box(cloud: PointCloud) -> Aabb:
    """Componentwise min/max over the cloud; empty clouds are an error."""
    if len(cloud) == 0:
        raise EmptyCloudError("cannot bound an empty cloud")
    return Aabb(cloud.points.min(axis=0), cloud.points.max(axis=0))


def compute_offsets(bbox: Aabb, dy_mode: str = "top") -> FoodOffsets:
    """Face-plane offsets from the food bounding box.

    dx recenters the food (not the fork) on the mouth. dy drops the
    target by the food's extent above the fork-tip plane so the top
    clears the upper teeth; mode 'min-y' instead applies the raw lowest
    extent (alternate reading, kept for comparison).
    """
    dx = -(bbox.min[0] + bbox.max[0]) / 2.0
    if dy_mode == "top":
        dy = -max(0.0, float(bbox.max[1]))
    elif dy_mode == "min-y":
        dy = -float(bbox.min[1])
    else:
        raise ValueError(f"unknown dy mode {dy_mode!r}")
    return FoodOffsets(float(dx), float(dy))


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float = 600.0
    fy: float = 600.0
    cx: float = 320.0
    cy: float = 240.0


def project_point(p: np.ndarray, intrinsics: CameraIntrinsics) -> tuple[float, float]:
    """World point to pixel (camera at origin looking along +z, y up)."""
    p = np.asarray(p, dtype=float)
    if p[2] <= 0:
        raise ValueError("point must be in front of the camera")
    u = intrinsics.fx * p[0] / p[2] + intrinsics.cx
    v = -intrinsics.fy * p[1] / p[2] + intrinsics.cy
    return float(u), float(v)


def _backproject(u: float, v: float, depth: float, intr: CameraIntrinsics) -> np.ndarray:
    return np.array([
        (u - intr.cx) * depth / intr.fx,
        -(v - intr.cy) * depth / intr.fy,
        depth,
    ])


def mouth_center_from_keypoints(keypoints, intrinsics: CameraIntrinsics | None = None,
                                face_depth: float = 0.4,
                                required_labels=DEFAULT_LANDMARK_LABELS) -> Pose:
    """Mouth-frame pose from labeled facial keypoints.

    Accepts 3D landmarks {label, x, y, z} or 2D {label, u, v}; 2D points
    are back-projected at the nominal face depth. The center is the
    centroid of the lip landmarks; axes come from the corner-to-corner
    and bottom-to-top directions, orthonormalized right-handed.
    """
    by_label = {}
    for kp in keypoints:
        label = kp["label"]
        if "x" in kp:
            by_label[label] = np.array([kp["x"], kp["y"], kp["z"]], dtype=float)
        else:
            if intrinsics is None:
                intrinsics = CameraIntrinsics()
            by_label[label] = _backproject(kp["u"], kp["v"], face_depth, intrinsics)
    missing = [lb for lb in required_labels if lb not in by_label]
    if missing:
        raise ValueError(f"missing landmarks: {missing}")

    pts = np.array([by_label[lb] for lb in required_labels])
    center = pts.mean(axis=0)

    left = by_label["mouth_corner_left"]
    right = by_label["mouth_corner_right"]
    top = by_label["inner_lip_top"]
    bottom = by_label["inner_lip_bottom"]

    x_raw = left - right
    y_raw = top - bottom
    nx = np.linalg.norm(x_raw)
    if nx < 1e-9:
        raise ValueError("degenerate landmarks: mouth corners coincide")
    x_hat = x_raw / nx
    y_orth = y_raw - (y_raw @ x_hat) * x_hat
    ny = np.linalg.norm(y_orth)
    if ny < 1e-9:
        raise ValueError("degenerate landmarks: lip points collinear with corners")
    y_hat = y_orth / ny
    z_hat = np.cross(x_hat, y_hat)

    rot = np.column_stack([x_hat, y_hat, z_hat])
    from .kinematics import _mat_to_quat
    return Pose(center, _mat_to_quat(rot))


def target_pose(mouth_center: Pose, offsets: FoodOffsets,
                entry_depth: float = 0.018,
                fork_pitch: float = DEFAULT_FORK_PITCH) -> Pose:
    """Pre-mouth target: mouth center shifted by the food offsets.

    The entry depth is validated here but carried by the entry segment,
    which later takes the fork that far along -z of the mouth frame.
    """
    if entry_depth <= 0:
        raise ValueError("entry depth must be > 0")
    p = (mouth_center.position
         + (offsets.dx / 1000.0) * mouth_center.x_axis
         + (offsets.dy / 1000.0) * mouth_center.y_axis)
    return Pose(p, transfer_orientation(mouth_center, fork_pitch))


def save_cloud(cloud: PointCloud, path):
    """CSV of x,y,z in mm with a one-line frame/resolution header."""
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"# frame={cloud.frame} resolution_mm={cloud.resolution}\n")
        f.write("x_mm,y_mm,z_mm\n")
        for p in cloud.points:
            f.write(f"{p[0]:.6f},{p[1]:.6f},{p[2]:.6f}\n")


def load_cloud(path) -> PointCloud:
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline().strip()
        if not header.startswith("#"):
            raise ValueError("cloud file missing the frame/resolution header")
        fields = dict(item.split("=", 1) for item in header.lstrip("# ").split())
        frame = fields.get("frame", "mouth")
        resolution = float(fields.get("resolution_mm", DEFAULT_RESOLUTION_MM))
        second = f.readline().strip()
        rows = []
        if second and not second.startswith("x_mm"):
            rows.append([float(x) for x in second.split(",")])
        for line in f:
            line = line.strip()
            if line:
                rows.append([float(x) for x in line.split(",")])
    pts = np.array(rows, dtype=float).reshape(-1, 3)
    return PointCloud(pts, resolution, frame)


def load_keypoints(path) -> list[dict]:
    """Keypoint JSON: a list of {label, u, v} or {label, x, y, z}."""
    with open(path, "r", encoding="utf-8") as f:
        data = json.load(f)
    if not isinstance(data, list):
        raise ValueError("keypoint file must hold a JSON list")
    return data
