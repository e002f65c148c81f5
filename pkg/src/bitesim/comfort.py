"""Wrist-vs-fixed-mount study: sample fork poses near the mouth, solve
IK on both chains from a shared home, and compare arm-joint displacement
and a personal-space comfort cost.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .geometry import Pose, quat_from_axis_angle, quat_mul
from .kinematics import (ChainModel, IkParams, ik_damped_least_squares,
                         joint_displacement, link_points)

ARM_JOINT_COUNT = 7


class StudyInvalidError(RuntimeError):
    """Convergence too poor for the statistics to mean anything."""


@dataclass(frozen=True)
class PoseDistribution:
    """Uniform box of fork poses around a center pose.

    Translations are offsets along the center's axes; rotations are
    sampled about the center's x, y, z axes (applied in that order).
    """

    center: Pose
    translation_bounds: np.ndarray  # (3, 2) m
    rotation_bounds: np.ndarray  # (3, 2) rad
    count: int = 10000
    seed: int = 0

    def __post_init__(self):
        tb = np.asarray(self.translation_bounds, dtype=float).reshape(3, 2).copy()
        rb = np.asarray(self.rotation_bounds, dtype=float).reshape(3, 2).copy()
        if not (np.all(np.isfinite(tb)) and np.all(np.isfinite(rb))):
            raise ValueError("bounds must be finite")
        if np.any(tb[:, 0] > tb[:, 1]) or np.any(rb[:, 0] > rb[:, 1]):
            raise ValueError("bounds must satisfy lo <= hi")
        if self.count <= 0:
            raise ValueError("count must be > 0")
        tb.setflags(write=False)
        rb.setflags(write=False)
        object.__setattr__(self, "translation_bounds", tb)
        object.__setattr__(self, "rotation_bounds", rb)

    @classmethod
    def around(cls, center: Pose, translation: float = 0.10,
               rotation: float = np.deg2rad(30.0), count: int = 10000,
               seed: int = 0) -> "PoseDistribution":
        t = np.array([[-translation, translation]] * 3)
        r = np.array([[-rotation, rotation]] * 3)
        return cls(center, t, r, count, seed)


def sample_fork_poses(dist: PoseDistribution) -> list[Pose]:
    """Deterministic uniform pose samples, exactly dist.count of them."""
    rng = np.random.default_rng(dist.seed)
    tb = dist.translation_bounds
    rb = dist.rotation_bounds
    offsets = rng.uniform(tb[:, 0], tb[:, 1], size=(dist.count, 3))
    angles = rng.uniform(rb[:, 0], rb[:, 1], size=(dist.count, 3))
    axes = (np.array([1.0, 0, 0]), np.array([0, 1.0, 0]), np.array([0, 0, 1.0]))
    poses = []
    for off, ang in zip(offsets, angles):
        q = dist.center.orientation
        for axis, a in zip(axes, ang):
            q = quat_mul(q, quat_from_axis_angle(axis, a))
        poses.append(Pose(dist.center.transform_point(off), q))
    return poses


@dataclass(frozen=True)
class ComfortParams:
    """Personal-space cone: apex at the head, axis out of the mouth."""

    head_position: np.ndarray
    axis: np.ndarray
    half_angle: float = np.deg2rad(30.0)
    length: float = 0.8
    weight: float = 1.0

    def __post_init__(self):
        hp = np.asarray(self.head_position, dtype=float).reshape(3).copy()
        ax = np.asarray(self.axis, dtype=float).reshape(3).copy()
        n = np.linalg.norm(ax)
        if n < 1e-12:
            raise ValueError("cone axis must be nonzero")
        ax /= n
        if not 0.0 < self.half_angle < np.pi / 2:
            raise ValueError("half angle must lie in (0, pi/2)")
        if self.weight < 0:
            raise ValueError("weight must be >= 0")
        hp.setflags(write=False)
        ax.setflags(write=False)
        object.__setattr__(self, "head_position", hp)
        object.__setattr__(self, "axis", ax)


def comfort_cost(chain: ChainModel, q, params: ComfortParams) -> float:
    """Sum of cone-penetration depths over the arm link frames and tip.

    A point at axial distance s inside the cone contributes
    weight * max(0, s*tan(half_angle) - radial_distance); anything
    behind the apex or past the cone length contributes nothing. Only
    the arm joint origins (first 7) plus the tool tip are scored, so a
    chain with extra tool-side joints is compared on the same point set
    as the bare mount.
    """
    pts = link_points(chain, q)
    if pts.shape[0] > ARM_JOINT_COUNT + 1:
        pts = np.vstack([pts[:ARM_JOINT_COUNT], pts[-1]])
    rel = pts - params.head_position
    s = rel @ params.axis
    radial = np.linalg.norm(rel - np.outer(s, params.axis), axis=1)
    cone_r = s * np.tan(params.half_angle)
    inside = (s >= 0.0) & (s <= params.length)
    depth = np.where(inside, np.maximum(0.0, cone_r - radial), 0.0)
    return float(params.weight * depth.sum())


@dataclass(frozen=True)
class StudyReport:
    """Aggregate wrist-study results plus optional per-sample records."""

    sample_count: int
    used_count: int
    seed: int
    convergence_rate_with: float
    convergence_rate_without: float
    per_joint_mean_with: np.ndarray  # (7,)
    per_joint_mean_without: np.ndarray
    mean_displacement_with: float
    mean_displacement_without: float
    mean_comfort_with: float
    mean_comfort_without: float
    max_comfort_with: float
    max_comfort_without: float
    p_displacement: float
    p_comfort: float
    samples: np.ndarray | None = field(default=None, repr=False, compare=False)

    def to_dict(self) -> dict:
        return {
            "sample_count": self.sample_count,
            "used_count": self.used_count,
            "seed": self.seed,
            "convergence_rate_with": self.convergence_rate_with,
            "convergence_rate_without": self.convergence_rate_without,
            "per_joint_mean_with": [float(x) for x in self.per_joint_mean_with],
            "per_joint_mean_without": [float(x) for x in self.per_joint_mean_without],
            "mean_displacement_with": self.mean_displacement_with,
            "mean_displacement_without": self.mean_displacement_without,
            "mean_comfort_with": self.mean_comfort_with,
            "mean_comfort_without": self.mean_comfort_without,
            "max_comfort_with": self.max_comfort_with,
            "max_comfort_without": self.max_comfort_without,
            "p_displacement": self.p_displacement,
            "p_comfort": self.p_comfort,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def write_samples_csv(self, path):
        """Per-sample records for external plotting."""
        if self.samples is None:
            raise ValueError("report carries no per-sample records")
        header = ("idx,px,py,pz,qw,qx,qy,qz,converged_with,converged_without,"
                  "disp_with,disp_without,cost_with,cost_without")
        with open(path, "w", encoding="utf-8") as f:
            f.write(header + "\n")
            for row in self.samples:
                f.write(",".join(_fmt(v) for v in row) + "\n")


def _fmt(v) -> str:
    f = float(v)
    if f == int(f) and abs(f) < 1e15:
        return str(int(f))
    return repr(f)


def _one_sided_less(diff: np.ndarray) -> float:
    """Wilcoxon signed-rank p for 'differences are negative'."""
    d = diff[diff != 0.0]
    if d.size == 0:
        return 1.0
    return float(stats.wilcoxon(d, alternative="less").pvalue)


def run_wrist_study(chain_with: ChainModel, chain_without: ChainModel,
                    dist: PoseDistribution, ik_params: IkParams,
                    comfort: ComfortParams, home=None,
                    keep_samples: bool = True) -> StudyReport:
    """Solve every sampled pose on both chains and compare them.

    Both solves start from the shared home; displacement is measured
    from home over the 7 arm joints. A pose is excluded when either
    chain fails to converge, so the statistics always compare the same
    sample set. Raises StudyInvalidError below 50% convergence.
    """
    if chain_without.dof < ARM_JOINT_COUNT or chain_with.dof < ARM_JOINT_COUNT:
        raise ValueError("both chains need the 7 arm joints")
    home_without = chain_without.home if home is None else np.asarray(home, dtype=float)
    if home_without.shape[0] != chain_without.dof:
        raise ValueError("home must match the without-wrist chain DOF")
    home_with = np.concatenate([
        home_without, chain_with.home[chain_without.dof:]])
    arm_idx = list(range(ARM_JOINT_COUNT))

    poses = sample_fork_poses(dist)
    n = len(poses)
    conv_w = np.zeros(n, dtype=bool)
    conv_wo = np.zeros(n, dtype=bool)
    disp_w = np.zeros(n)
    disp_wo = np.zeros(n)
    per_joint_w = np.zeros((n, ARM_JOINT_COUNT))
    per_joint_wo = np.zeros((n, ARM_JOINT_COUNT))
    cost_w = np.zeros(n)
    cost_wo = np.zeros(n)

    for i, pose in enumerate(poses):
        rw = ik_damped_least_squares(chain_with, pose, home_with, ik_params)
        rwo = ik_damped_least_squares(chain_without, pose, home_without, ik_params)
        conv_w[i] = rw.converged
        conv_wo[i] = rwo.converged
        if rw.converged:
            per_joint_w[i], disp_w[i] = joint_displacement(rw.q[:ARM_JOINT_COUNT],
                                                           home_with[:ARM_JOINT_COUNT],
                                                           arm_idx)
            cost_w[i] = comfort_cost(chain_with, rw.q, comfort)
        if rwo.converged:
            per_joint_wo[i], disp_wo[i] = joint_displacement(rwo.q[:ARM_JOINT_COUNT],
                                                             home_without[:ARM_JOINT_COUNT],
                                                             arm_idx)
            cost_wo[i] = comfort_cost(chain_without, rwo.q, comfort)

    rate_w = float(conv_w.mean())
    rate_wo = float(conv_wo.mean())
    if rate_w < 0.5 or rate_wo < 0.5:
        raise StudyInvalidError(
            f"convergence too low: with={rate_w:.1%}, without={rate_wo:.1%}")

    used = conv_w & conv_wo
    m = int(used.sum())
    if m == 0:
        raise StudyInvalidError("no pose converged on both chains")

    samples = None
    if keep_samples:
        samples = np.column_stack([
            np.arange(n),
            np.array([p.position for p in poses]),
            np.array([p.orientation for p in poses]),
            conv_w.astype(float), conv_wo.astype(float),
            disp_w, disp_wo, cost_w, cost_wo,
        ])

    return StudyReport(
        sample_count=n,
        used_count=m,
        seed=dist.seed,
        convergence_rate_with=rate_w,
        convergence_rate_without=rate_wo,
        per_joint_mean_with=per_joint_w[used].mean(axis=0),
        per_joint_mean_without=per_joint_wo[used].mean(axis=0),
        mean_displacement_with=float(disp_w[used].mean()),
        mean_displacement_without=float(disp_wo[used].mean()),
        mean_comfort_with=float(cost_w[used].mean()),
        mean_comfort_without=float(cost_wo[used].mean()),
        max_comfort_with=float(cost_w[used].max()),
        max_comfort_without=float(cost_wo[used].max()),
        p_displacement=_one_sided_less(disp_w[used] - disp_wo[used]),
        p_comfort=_one_sided_less(cost_w[used] - cost_wo[used]),
        samples=samples,
    )
