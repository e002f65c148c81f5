"""Serial-chain kinematics: forward kinematics, Jacobians, damped
least-squares inverse kinematics, and joint-displacement metrics.

Chains are revolute-only and loaded from JSON files; two parameter sets
ship with the package (7-DOF arm, and the same arm with a 2-DOF
scoop/twirl wrist ahead of the fork).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .geometry import Pose, quat_to_matrix, quat_to_rotvec

__all__ = [
    "JointSpec",
    "ChainModel",
    "IkParams",
    "IkResult",
    "forward_kinematics",
    "fk_frames",
    "jacobian",
    "ik_damped_least_squares",
    "joint_displacement",
    "link_points",
    "load_chain",
    "bundled_chain",
]


@dataclass(frozen=True)
class JointSpec:
    """One revolute joint: fixed parent offset, local rotation axis, limits."""

    offset: Pose
    axis: np.ndarray
    limits: tuple[float, float]

    def __post_init__(self):
        a = np.asarray(self.axis, dtype=float).reshape(3)
        n = np.linalg.norm(a)
        if n < 1e-12:
            raise ValueError("joint axis must be nonzero")
        a = a / n
        a.setflags(write=False)
        object.__setattr__(self, "axis", a)
        lo, hi = self.limits
        if lo > hi:
            raise ValueError(f"joint limits reversed: [{lo}, {hi}]")
        object.__setattr__(self, "limits", (float(lo), float(hi)))


class ChainModel:
    """Immutable serial chain with a tool-tip offset after the last joint."""

    def __init__(self, name: str, joints: list[JointSpec], tool_tip: Pose,
                 has_wrist: bool = False, home: np.ndarray | None = None):
        self.name = name
        self.joints = tuple(joints)
        self.tool_tip = tool_tip
        self.has_wrist = bool(has_wrist)
        if home is None:
            home = np.zeros(len(joints))
        self.home = np.asarray(home, dtype=float).reshape(len(joints)).copy()
        self.home.setflags(write=False)

        self.lower = np.array([j.limits[0] for j in self.joints])
        self.upper = np.array([j.limits[1] for j in self.joints])
        self.lower.setflags(write=False)
        self.upper.setflags(write=False)

        # cached per-joint arrays for the FK hot loop
        self._r_off = [quat_to_matrix(j.offset.orientation) for j in self.joints]
        self._t_off = [np.array(j.offset.position) for j in self.joints]
        self._axes = [np.array(j.axis) for j in self.joints]
        skews = [np.array([[0, -a[2], a[1]], [a[2], 0, -a[0]], [-a[1], a[0], 0]])
                 for a in self._axes]
        self._skew = skews
        self._skew2 = [k @ k for k in skews]
        self._r_tool = quat_to_matrix(tool_tip.orientation)
        self._t_tool = np.array(tool_tip.position)

    @property
    def dof(self) -> int:
        return len(self.joints)

    def check_config(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float).reshape(-1)
        if q.shape[0] != self.dof:
            raise ValueError(f"config length {q.shape[0]} != chain DOF {self.dof}")
        return q

    def clamp(self, q) -> np.ndarray:
        return np.clip(self.check_config(q), self.lower, self.upper)

    def within_limits(self, q, tol: float = 1e-12) -> bool:
        q = self.check_config(q)
        return bool(np.all(q >= self.lower - tol) and np.all(q <= self.upper + tol))

    def __repr__(self):
        return f"ChainModel({self.name!r}, dof={self.dof}, has_wrist={self.has_wrist})"


def _mat_to_quat(r: np.ndarray) -> np.ndarray:
    """Rotation matrix to (w, x, y, z), Shepperd's branch selection."""
    t = np.trace(r)
    if t > 0.0:
        s = np.sqrt(t + 1.0) * 2.0
        return np.array([0.25 * s,
                         (r[2, 1] - r[1, 2]) / s,
                         (r[0, 2] - r[2, 0]) / s,
                         (r[1, 0] - r[0, 1]) / s])
    i = int(np.argmax(np.diag(r)))
    if i == 0:
        s = np.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2]) * 2.0
        q = [(r[2, 1] - r[1, 2]) / s, 0.25 * s,
             (r[0, 1] + r[1, 0]) / s, (r[0, 2] + r[2, 0]) / s]
    elif i == 1:
        s = np.sqrt(1.0 - r[0, 0] + r[1, 1] - r[2, 2]) * 2.0
        q = [(r[0, 2] - r[2, 0]) / s, (r[0, 1] + r[1, 0]) / s,
             0.25 * s, (r[1, 2] + r[2, 1]) / s]
    else:
        s = np.sqrt(1.0 - r[0, 0] - r[1, 1] + r[2, 2]) * 2.0
        q = [(r[1, 0] - r[0, 1]) / s, (r[0, 2] + r[2, 0]) / s,
             (r[1, 2] + r[2, 1]) / s, 0.25 * s]
    return np.array(q)


def fk_frames(chain: ChainModel, q) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """World joint origins (N,3), world joint axes (N,3), tip position, tip rotation."""
    q = chain.check_config(q)
    n = chain.dof
    origins = np.empty((n, 3))
    axes = np.empty((n, 3))
    r = np.eye(3)
    p = np.zeros(3)
    eye = np.eye(3)
    for i in range(n):
        p = p + r @ chain._t_off[i]
        r = r @ chain._r_off[i]
        origins[i] = p
        axes[i] = r @ chain._axes[i]
        # Rodrigues about the local joint axis
        c = np.cos(q[i])
        s = np.sin(q[i])
        r = r @ (eye + s * chain._skew[i] + (1.0 - c) * chain._skew2[i])
    tip_p = p + r @ chain._t_tool
    tip_r = r @ chain._r_tool
    return origins, axes, tip_p, tip_r


def forward_kinematics(chain: ChainModel, q) -> Pose:
    """Fork-tip pose in the world frame (pure function of chain and q)."""
    _, _, tip_p, tip_r = fk_frames(chain, q)
    return Pose(tip_p, _mat_to_quat(tip_r))


def link_points(chain: ChainModel, q) -> np.ndarray:
    """Joint origins plus the tool tip, (N+1, 3); used by the comfort cost."""
    origins, _, tip_p, _ = fk_frames(chain, q)
    return np.vstack([origins, tip_p])


def jacobian(chain: ChainModel, q) -> np.ndarray:
    """Geometric Jacobian at the fork tip, 6xN (linear rows first)."""
    origins, axes, tip_p, _ = fk_frames(chain, q)
    jac = np.empty((6, chain.dof))
    jac[:3] = np.cross(axes, tip_p - origins).T
    jac[3:] = axes.T
    return jac


@dataclass(frozen=True)
class IkParams:
    damping: float = 0.02
    pos_tol: float = 1e-3
    rot_tol: float = 1e-2
    max_iter: int = 200
    # per-iterate error clip, keeps far targets from causing wild steps
    max_lin_step: float = 0.2
    max_ang_step: float = 0.5
    # iterations without relative improvement before a seeded re-seed
    stall_window: int = 10
    restart_seed: int = 0x5EED

    def __post_init__(self):
        if self.damping <= 0:
            raise ValueError("damping must be > 0")
        if self.pos_tol <= 0 or self.rot_tol <= 0:
            raise ValueError("tolerances must be > 0")


@dataclass(frozen=True)
class IkResult:
    q: np.ndarray
    converged: bool
    iterations: int
    residual: np.ndarray


def _tip_error(target: Pose, tip_p: np.ndarray, tip_r: np.ndarray) -> np.ndarray:
    e = np.empty(6)
    e[:3] = target.position - tip_p
    r_rel = quat_to_matrix(target.orientation) @ tip_r.T
    e[3:] = quat_to_rotvec(_mat_to_quat(r_rel))
    return e


def ik_damped_least_squares(chain: ChainModel, target: Pose, seed,
                            params: IkParams = IkParams()) -> IkResult:
    """Iterative damped least-squares IK with per-iterate limit clamping.

    Two stabilizers keep hard targets convergent inside the iteration
    budget: joints pinned at a limit that still push outward are masked
    out of the step, and a stalled attempt (no relative progress over
    ``stall_window`` iterates) re-seeds from an internally seeded draw,
    alternating between aiming the base yaw at the target azimuth and a
    uniform configuration. The iterate sequence is a pure function of
    the inputs. On failure the best iterate seen is returned with
    converged=False.
    """
    q = chain.clamp(seed)
    lam2 = params.damping ** 2
    eye6 = np.eye(6)
    rng = np.random.default_rng(params.restart_seed)
    azimuth = np.arctan2(target.position[1], target.position[0])

    best_q = q
    best_err = None
    best_score = np.inf
    attempt_best = np.inf
    since_improve = 0
    n_restarts = 0

    for it in range(params.max_iter + 1):
        origins, axes, tip_p, tip_r = fk_frames(chain, q)
        err = _tip_error(target, tip_p, tip_r)
        pos_n = np.linalg.norm(err[:3])
        rot_n = np.linalg.norm(err[3:])
        if pos_n <= params.pos_tol and rot_n <= params.rot_tol:
            return IkResult(q, True, it, err)
        score = pos_n + 0.1 * rot_n
        if score < best_score:
            best_score = score
            best_q = q
            best_err = err
        if score < attempt_best * 0.99 - 1e-12:
            attempt_best = score
            since_improve = 0
        else:
            since_improve += 1
        if it == params.max_iter:
            break

        if since_improve >= params.stall_window:
            n_restarts += 1
            q = chain.lower + rng.random(chain.dof) * (chain.upper - chain.lower)
            if n_restarts % 2 == 1:
                q[0] = np.clip(azimuth + rng.normal(0.0, 0.3),
                               chain.lower[0], chain.upper[0])
            attempt_best = np.inf
            since_improve = 0
            continue

        step = err.copy()
        if pos_n > params.max_lin_step:
            step[:3] *= params.max_lin_step / pos_n
        if rot_n > params.max_ang_step:
            step[3:] *= params.max_ang_step / rot_n

        jac = np.empty((6, chain.dof))
        jac[:3] = np.cross(axes, tip_p - origins).T
        jac[3:] = axes.T
        dq = jac.T @ np.linalg.solve(jac @ jac.T + lam2 * eye6, step)
        at_lo = q <= chain.lower + 1e-9
        at_hi = q >= chain.upper - 1e-9
        pinned = (at_lo & (dq < 0)) | (at_hi & (dq > 0))
        if pinned.any():
            jac = jac.copy()
            jac[:, pinned] = 0.0
            dq = jac.T @ np.linalg.solve(jac @ jac.T + lam2 * eye6, step)
        q = np.clip(q + dq, chain.lower, chain.upper)

    return IkResult(best_q, False, params.max_iter, best_err)


def joint_displacement(q_a, q_b, joint_subset=None) -> tuple[np.ndarray, float]:
    """Per-joint |delta| (rad) over the subset, plus the arithmetic mean."""
    q_a = np.asarray(q_a, dtype=float).reshape(-1)
    q_b = np.asarray(q_b, dtype=float).reshape(-1)
    if q_a.shape != q_b.shape:
        raise ValueError(f"config lengths differ: {q_a.shape[0]} vs {q_b.shape[0]}")
    delta = np.abs(q_a - q_b)
    if joint_subset is not None:
        idx = np.asarray(joint_subset, dtype=int)
        if idx.size and (idx.min() < 0 or idx.max() >= q_a.shape[0]):
            raise ValueError("joint subset index out of range")
        delta = delta[idx]
    return delta, float(np.mean(delta))


def _pose_from_flat(vals) -> Pose:
    vals = list(vals)
    if len(vals) != 7:
        raise ValueError("pose record must be [x, y, z, qw, qx, qy, qz]")
    return Pose(np.array(vals[:3]), np.array(vals[3:]))


def chain_from_dict(spec: dict) -> ChainModel:
    joints = [
        JointSpec(
            offset=_pose_from_flat(j["fixed_offset"]),
            axis=np.asarray(j["axis"], dtype=float),
            limits=(float(j["limits"][0]), float(j["limits"][1])),
        )
        for j in spec["joints"]
    ]
    return ChainModel(
        name=spec.get("name", "chain"),
        joints=joints,
        tool_tip=_pose_from_flat(spec["tool_tip"]),
        has_wrist=bool(spec.get("has_wrist", False)),
        home=spec.get("home"),
    )


def load_chain(path) -> ChainModel:
    """Load a chain definition from a JSON file."""
    with open(path, "r", encoding="utf-8") as f:
        return chain_from_dict(json.load(f))


def bundled_chain(name: str) -> ChainModel:
    """Load one of the packaged chain definitions by name.

    Names: ``panda_7dof`` (tool on the stock mount) and ``panda_wrist_9dof``
    (tool behind the 2-DOF scoop/twirl wrist).
    """
    ref = resources.files("bitesim.data").joinpath(f"{name}.json")
    with ref.open("r", encoding="utf-8") as f:
        return chain_from_dict(json.load(f))
