"""Kinematic articulated hand: 16 links, 27 DoF.

Joint coordinate layout (27 values):

====  =========================================
0-2   wrist translation x, y, z (meters)
3-5   wrist rotation, intrinsic xyz Euler (rad)
6-10  thumb: MCP abduction, MCP flexion, MCP twist, IP1 flexion, IP2 flexion
11-14 index: MCP abduction, MCP flexion, PIP, DIP
15-18 middle (same layout as index)
19-22 ring
23-26 pinky
====  =========================================

At the all-zero configuration the hand lies flat with fingers extended
along +x of the palm frame; positive flexion curls fingertips toward -z.
Link order: palm, then proximal/middle/distal per finger
(thumb, index, middle, ring, pinky).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from .geometry import CylinderSegment, FretboardGeometry

FINGERS = ("thumb", "index", "middle", "ring", "pinky")
PRESSING_FINGERS = ("index", "middle", "ring", "pinky")
LINK_NAMES = ("palm",) + tuple(
    f"{f}_{part}" for f in FINGERS for part in ("prox", "mid", "dist")
)
NUM_LINKS = 16
NUM_DOF = 27
AVAILABILITY_MAX_ANGLE_DEG = 5.0

JOINT_NAMES = (
    "wrist_tx", "wrist_ty", "wrist_tz", "wrist_rx", "wrist_ry", "wrist_rz",
    "thumb_abd", "thumb_mcp", "thumb_twist", "thumb_ip1", "thumb_ip2",
    "index_abd", "index_mcp", "index_pip", "index_dip",
    "middle_abd", "middle_mcp", "middle_pip", "middle_dip",
    "ring_abd", "ring_mcp", "ring_pip", "ring_dip",
    "pinky_abd", "pinky_mcp", "pinky_pip", "pinky_dip",
)


class HandModelError(ValueError):
    pass


class InfeasibleChordError(ValueError):
    """More simultaneous target frets than fingers can cover."""


def _default_bone_lengths():
    # Anthropometric defaults for an adult hand (meters).
    return {
        "thumb": (0.050, 0.035, 0.028),
        "index": (0.045, 0.026, 0.022),
        "middle": (0.050, 0.030, 0.023),
        "ring": (0.046, 0.028, 0.022),
        "pinky": (0.036, 0.022, 0.019),
    }


def _default_mcp_offsets():
    return {
        "thumb": (0.025, 0.035, -0.005),
        "index": (0.090, 0.027, 0.0),
        "middle": (0.092, 0.009, 0.0),
        "ring": (0.088, -0.009, 0.0),
        "pinky": (0.082, -0.027, 0.0),
    }


def _default_limits():
    lo = np.empty(NUM_DOF)
    hi = np.empty(NUM_DOF)
    lo[0:3], hi[0:3] = -1.0, 1.0            # wrist translation
    lo[3:6], hi[3:6] = -np.pi, np.pi        # wrist rotation
    for base in (6,):                        # thumb
        lo[base], hi[base] = -0.8, 0.8       # abduction
        lo[base + 1], hi[base + 1] = -0.4, 1.6
        lo[base + 2], hi[base + 2] = -0.8, 0.8
        lo[base + 3], hi[base + 3] = -0.2, 1.4
        lo[base + 4], hi[base + 4] = -0.2, 1.4
    for base in (11, 15, 19, 23):            # index..pinky
        lo[base], hi[base] = -0.45, 0.45
        lo[base + 1], hi[base + 1] = -0.4, 1.7
        lo[base + 2], hi[base + 2] = -0.1, 1.9
        lo[base + 3], hi[base + 3] = -0.1, 1.5
    return lo, hi


@dataclass(frozen=True)
class HandSkeleton:
    """Immutable hand structure: bone lengths, joint limits, finger radius."""

    bone_lengths: dict = field(default_factory=_default_bone_lengths)
    mcp_offsets: dict = field(default_factory=_default_mcp_offsets)
    joint_limits_low: np.ndarray = None
    joint_limits_high: np.ndarray = None
    finger_radius: float = 0.006
    pick_mount_offset: tuple = (0.07, 0.02, -0.015)
    pick_tip_offset: tuple = (0.02, 0.0, 0.0)

    def __post_init__(self):
        lo, hi = _default_limits()
        if self.joint_limits_low is None:
            object.__setattr__(self, "joint_limits_low", lo)
        else:
            object.__setattr__(self, "joint_limits_low", np.asarray(self.joint_limits_low, float))
        if self.joint_limits_high is None:
            object.__setattr__(self, "joint_limits_high", hi)
        else:
            object.__setattr__(self, "joint_limits_high", np.asarray(self.joint_limits_high, float))
        if self.joint_limits_low.shape != (NUM_DOF,) or self.joint_limits_high.shape != (NUM_DOF,):
            raise HandModelError("joint limits must have 27 entries")
        if self.finger_radius <= 0:
            raise HandModelError("finger_radius must be positive")

    def to_json(self) -> str:
        return json.dumps(
            {
                "bone_lengths": {k: list(v) for k, v in self.bone_lengths.items()},
                "mcp_offsets": {k: list(v) for k, v in self.mcp_offsets.items()},
                "joint_limits_low": self.joint_limits_low.tolist(),
                "joint_limits_high": self.joint_limits_high.tolist(),
                "finger_radius": self.finger_radius,
                "pick_mount_offset": list(self.pick_mount_offset),
                "pick_tip_offset": list(self.pick_tip_offset),
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "HandSkeleton":
        doc = json.loads(text)
        return cls(
            bone_lengths={k: tuple(v) for k, v in doc["bone_lengths"].items()},
            mcp_offsets={k: tuple(v) for k, v in doc["mcp_offsets"].items()},
            joint_limits_low=np.asarray(doc["joint_limits_low"]),
            joint_limits_high=np.asarray(doc["joint_limits_high"]),
            finger_radius=doc["finger_radius"],
            pick_mount_offset=tuple(doc["pick_mount_offset"]),
            pick_tip_offset=tuple(doc["pick_tip_offset"]),
        )


@dataclass(frozen=True)
class HandPose:
    """A hand configuration with derived link transforms in the guitar frame."""

    skeleton: HandSkeleton
    joint_coordinates: np.ndarray        # (27,)
    link_positions: np.ndarray           # (16, 3) proximal-joint origins
    link_rotations: np.ndarray           # (16, 3, 3)
    finger_chains: dict                  # finger -> (4, 3): mcp, pip, dip, tip

    def fingertip(self, finger: str) -> np.ndarray:
        return self.finger_chains[finger][3]

    @property
    def wrist_position(self) -> np.ndarray:
        return self.link_positions[0]

    def pick_mount(self) -> np.ndarray:
        R, p = self.link_rotations[0], self.link_positions[0]
        return p + R @ np.asarray(self.skeleton.pick_mount_offset)

    def pick_tip(self) -> np.ndarray:
        R = self.link_rotations[0]
        return self.pick_mount() + R @ np.asarray(self.skeleton.pick_tip_offset)


def _rot_y(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _rot_z(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _rot_x(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def forward_kinematics(
    skeleton: HandSkeleton, joint_coordinates, check_limits: bool = True
) -> HandPose:
    """Compute link transforms from the 27 joint coordinates."""
    q = np.asarray(joint_coordinates, float)
    if q.shape != (NUM_DOF,):
        raise HandModelError(f"expected {NUM_DOF} joint coordinates, got {q.shape}")
    if check_limits:
        lo, hi = skeleton.joint_limits_low, skeleton.joint_limits_high
        bad = np.where((q < lo - 1e-9) | (q > hi + 1e-9))[0]
        if bad.size:
            j = int(bad[0])
            raise HandModelError(
                f"joint {JOINT_NAMES[j]} value {q[j]:.4f} outside "
                f"[{lo[j]:.4f}, {hi[j]:.4f}]"
            )

    palm_p = q[0:3].copy()
    palm_R = Rotation.from_euler("xyz", q[3:6]).as_matrix()

    positions = np.zeros((NUM_LINKS, 3))
    rotations = np.zeros((NUM_LINKS, 3, 3))
    positions[0] = palm_p
    rotations[0] = palm_R
    chains = {}

    link = 1
    for finger in FINGERS:
        lengths = skeleton.bone_lengths[finger]
        base = palm_p + palm_R @ np.asarray(skeleton.mcp_offsets[finger])
        if finger == "thumb":
            abd, flex, twist, f1, f2 = q[6:11]
            R0 = palm_R @ _rot_z(abd) @ _rot_y(flex) @ _rot_x(twist)
            flexes = (f1, f2)
        else:
            off = 11 + 4 * (PRESSING_FINGERS.index(finger))
            abd, flex, pip_q, dip_q = q[off : off + 4]
            R0 = palm_R @ _rot_z(abd) @ _rot_y(flex)
            flexes = (pip_q, dip_q)

        pts = [base]
        R = R0
        p = base
        for seg_i, length in enumerate(lengths):
            positions[link + seg_i] = p
            rotations[link + seg_i] = R
            p = p + R @ np.array([length, 0.0, 0.0])
            pts.append(p)
            if seg_i < 2:
                R = R @ _rot_y(flexes[seg_i])
        chains[finger] = np.stack(pts)
        link += 3

    return HandPose(
        skeleton=skeleton,
        joint_coordinates=q,
        link_positions=positions,
        link_rotations=rotations,
        finger_chains=chains,
    )


def finger_part_segments(pose: HandPose) -> list[CylinderSegment]:
    """The 12 pressing segments (index..pinky x MCP-PIP, PIP-DIP, DIP-tip).

    The thumb is excluded: it braces the neck rather than pressing.
    """
    radius = pose.skeleton.finger_radius
    segments = []
    for finger in PRESSING_FINGERS:
        pts = pose.finger_chains[finger]
        for a, b in zip(pts[:-1], pts[1:]):
            segments.append(CylinderSegment(a, b, radius))
    return segments


def part_owner(part_index: int) -> tuple[str, int]:
    """Map a 0..11 part index to (finger name, part 0..2; 2 = tip part)."""
    return PRESSING_FINGERS[part_index // 3], part_index % 3


def segment_plane_angle_deg(seg: CylinderSegment) -> float:
    """Angle between a segment's axis and the fretboard plane (z = 0)."""
    axis = seg.axis
    return float(np.degrees(np.arcsin(abs(axis[2]) / np.linalg.norm(axis))))


def available_parts(
    pose: HandPose, target_frets, geometry: FretboardGeometry | None = None
) -> np.ndarray:
    """Availability mask over (finger, part, fret order).

    ``target_frets`` is the sorted list of distinct frets of the current
    note (1..4 entries). Finger j (1 = index .. 4 = pinky) may serve the
    fret of ascending order o iff o <= j and (m - o) <= (4 - j), which
    forbids crossing assignments. Non-tip parts additionally require the
    segment to lie within 5 degrees of the fretboard plane.

    Returns a boolean array of shape (4, 3, m) indexed by
    (finger - 1, part, order - 1).
    """
    frets = sorted(set(int(k) for k in target_frets))
    m = len(frets)
    if not 1 <= m <= 4:
        raise InfeasibleChordError(
            f"{m} simultaneous target frets; at most 4 are playable"
        )
    segments = finger_part_segments(pose)
    mask = np.zeros((4, 3, m), dtype=bool)
    for j in range(1, 5):
        for part in range(3):
            seg = segments[(j - 1) * 3 + part]
            flat_ok = part == 2 or segment_plane_angle_deg(seg) < AVAILABILITY_MAX_ANGLE_DEG
            if not flat_ok:
                continue
            for o in range(1, m + 1):
                if o <= j and (m - o) <= (4 - j):
                    mask[j - 1, part, o - 1] = True
    return mask


@dataclass(frozen=True)
class PoseObservation:
    """Stacked 2-frame observation: (2, 16, 13) in the guitar frame.

    Per link: position (3), unit quaternion wxyz (4), linear velocity (3),
    angular velocity (3). Velocities are finite differences over dt and are
    shared by both stacked frames.
    """

    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != (2, NUM_LINKS, 13):
            raise HandModelError(f"bad observation shape {self.values.shape}")

    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)


def _quat_wxyz(R: np.ndarray) -> np.ndarray:
    q = Rotation.from_matrix(R).as_quat()  # xyzw
    q = np.array([q[3], q[0], q[1], q[2]])
    if q[0] < 0:  # canonical sign for determinism
        q = -q
    return q / np.linalg.norm(q)


def pose_observation(prev: HandPose, curr: HandPose, dt: float) -> PoseObservation:
    """Build the 2x16x13 observation from consecutive poses."""
    if dt <= 0:
        raise HandModelError("dt must be positive")
    lin_vel = (curr.link_positions - prev.link_positions) / dt
    ang_vel = np.zeros((NUM_LINKS, 3))
    for i in range(NUM_LINKS):
        rel = curr.link_rotations[i] @ prev.link_rotations[i].T
        ang_vel[i] = Rotation.from_matrix(rel).as_rotvec() / dt

    out = np.zeros((2, NUM_LINKS, 13))
    for f, pose in enumerate((prev, curr)):
        for i in range(NUM_LINKS):
            out[f, i, 0:3] = pose.link_positions[i]
            out[f, i, 3:7] = _quat_wxyz(pose.link_rotations[i])
            out[f, i, 7:10] = lin_vel[i]
            out[f, i, 10:13] = ang_vel[i]
    return PoseObservation(out)
