"""Per-frame reward functions for fret pressing and string picking.

All evaluators are pure functions of geometry, contact state and goal
targets; constants follow the shaping that keeps the press reward
sensitive near one fret width (~0.01 m) without saturating across the
fretboard (~0.45 m).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import (
    CylinderSegment,
    FretboardGeometry,
    point_to_segment_distance,
    segment_to_segment_distance,
)
from .hand import HandPose, PRESSING_FINGERS, available_parts, finger_part_segments
from .session import NoteLedger, StringFrameState, expected_press_predicate
from .tab import MUTE, OPEN, TabNote

FINGER_TOUCH_SCALE = 0.007    # ~finger radius + margin, normalizes clearance
PICK_CLEARANCE = 0.003        # expected pick-tip clearance from strings

LEFT_GOAL_WEIGHT = 0.8
LEFT_CORRECT_WEIGHT = 0.2
LEFT_ENERGY_WEIGHT = 0.05

RIGHT_CONTACT_WEIGHT = 0.05
RIGHT_ENERGY_WEIGHT = 0.05
CONTACT_RADIUS = 0.008        # thumb/index tip distance to pick mount


class RewardError(ValueError):
    pass


def press_reward(d: float) -> float:
    """Distance-shaped reward toward a press point (two-scale exponential)."""
    return 0.8 * math.exp(-1000.0 * d * d) + 0.2 * math.exp(-30.0 * d * d)


def open_string_reward(d: float) -> float:
    """Clearance reward for a string that must stay untouched."""
    return min((d / FINGER_TOUCH_SCALE) ** 2, 1.0)


def mute_string_reward(d: float) -> float:
    """Loose clearance constraint for a mute string."""
    return 0.9 + 0.1 * open_string_reward(d)


def pick_distance_reward(d: float) -> float:
    """Distance shaping for the pick tip (millimeters-to-decimeters range)."""
    return 0.175 * math.exp(-10000.0 * d * d) + 0.025 * math.exp(-2000.0 * d * d)


def left_energy_reward(wrist_velocity, fingertip_velocities) -> float:
    """Energy term from wrist and finger speeds.

    ``fingertip_velocities`` are relative to the wrist; the wrist velocity
    is in the guitar frame.
    """
    v = float(np.linalg.norm(wrist_velocity))
    v += 0.1 * sum(float(np.linalg.norm(f)) for f in fingertip_velocities)
    return math.exp(-(v * v))


def pick_energy_reward(pick_velocity, pick_acceleration) -> float:
    """Stability term for the pick: velocity decay minus acceleration penalty."""
    v2 = float(np.dot(pick_velocity, pick_velocity))
    a = 0.05 * np.asarray(pick_acceleration, float)
    return math.exp(-20.0 * v2) - 14.0 * float(np.dot(a, a)) ** 2


@dataclass(frozen=True)
class LeftRewardBreakdown:
    per_string: np.ndarray         # r_i, 6 values in [0, 1]
    correct: float                 # 0 or 1
    energy: float                  # in [0, 1]

    @property
    def objective_totals(self) -> np.ndarray:
        return (
            LEFT_GOAL_WEIGHT * self.per_string
            + LEFT_CORRECT_WEIGHT * self.correct
            - LEFT_ENERGY_WEIGHT * self.energy
        )


@dataclass(frozen=True)
class RightRewardBreakdown:
    pick: float
    branch: str                    # "+", "-" or "x"
    contact: float                 # 0 or 1
    energy_hand: float
    energy_pick: float

    @property
    def total(self) -> float:
        return (
            self.pick
            + RIGHT_CONTACT_WEIGHT * self.contact
            + RIGHT_ENERGY_WEIGHT * (self.energy_hand + self.energy_pick)
        )


def left_string_reward(
    string: int,
    code: int,
    pose: HandPose,
    geometry: FretboardGeometry,
    availability: np.ndarray | None = None,
    target_frets=None,
) -> float:
    """Goal reward for one string given its target code.

    For a pressed target the distance is taken over *available* finger
    parts only; ``availability`` is the mask from
    :func:`fretsync.hand.available_parts` over ``target_frets``.
    """
    segments = finger_part_segments(pose)
    if code >= 1:
        if not 1 <= code <= geometry.num_frets:
            raise RewardError(f"target fret {code} out of range")
        if target_frets is None:
            target_frets = [code]
        frets = sorted(set(target_frets))
        if availability is None:
            availability = available_parts(pose, frets)
        order = frets.index(code)
        p = geometry.press_point(string, code)
        d = math.inf
        for part_idx, seg in enumerate(segments):
            finger, part = part_idx // 3, part_idx % 3
            if not availability[finger, part, order]:
                continue
            dist, _ = point_to_segment_distance(p, seg)
            d = min(d, dist)
        if not math.isfinite(d):
            return 0.0  # no available part at all
        return press_reward(d)
    d = min(geometry.string_distance(string, seg)[0] for seg in segments)
    if code == OPEN:
        return open_string_reward(d)
    return mute_string_reward(d)


def left_frame_rewards(
    note: TabNote,
    pose_prev: HandPose,
    pose_curr: HandPose,
    dt: float,
    geometry: FretboardGeometry,
    states: list[StringFrameState] | None = None,
) -> LeftRewardBreakdown:
    """Full left-hand breakdown for one control frame."""
    from .session import detect_presses

    if states is None:
        states = detect_presses(pose_curr, geometry)
    frets = note.pressed_frets()
    availability = available_parts(pose_curr, frets) if frets else None
    per_string = np.array([
        left_string_reward(
            i + 1, code, pose_curr, geometry,
            availability=availability, target_frets=frets or None,
        )
        for i, code in enumerate(note.strings)
    ])
    correct = 1.0 if expected_press_predicate(states, note) else 0.0
    v_wrist = (pose_curr.wrist_position - pose_prev.wrist_position) / dt
    tip_vels = []
    for finger in PRESSING_FINGERS + ("thumb",):
        rel_curr = pose_curr.fingertip(finger) - pose_curr.wrist_position
        rel_prev = pose_prev.fingertip(finger) - pose_prev.wrist_position
        tip_vels.append((rel_curr - rel_prev) / dt)
    energy = left_energy_reward(v_wrist, tip_vels)
    return LeftRewardBreakdown(per_string=per_string, correct=correct, energy=energy)


def _tip_string_distance(tip, string: int, geometry: FretboardGeometry) -> float:
    a, b = geometry.string_segment(string)
    d, _ = point_to_segment_distance(tip, CylinderSegment(a, b, 1e-6))
    return d


def right_pick_reward(
    ledger: NoteLedger,
    pick_tip,
    geometry: FretboardGeometry,
    picked_this_frame: bool,
    cooperative_gate: bool = False,
    press_states_ok: bool = True,
) -> tuple[float, str]:
    """r_pick with its branch tag for one control frame.

    With the cooperative gate active, the no-pick shaping branch is used
    whenever the left hand is not at the expected pressing states, so the
    pick holds position instead of playing unfretted strings.
    """
    tip = np.asarray(pick_tip, float)
    targets = ledger.note.pick_targets()
    remaining = ledger.remaining_targets()

    def r_cross() -> float:
        span = remaining or targets
        if not span:
            return r_minus()
        top = min(span)
        bottom = max(span)
        r_top = pick_distance_reward(_tip_string_distance(tip, top, geometry))
        r_bot = pick_distance_reward(_tip_string_distance(tip, bottom, geometry))
        return 0.2 + 2.0 * min(r_top, r_bot)

    def r_minus() -> float:
        d_min = min(
            _tip_string_distance(tip, s, geometry)
            for s in range(1, geometry.num_strings + 1)
        )
        r = np.zeros(geometry.num_strings)
        for s in range(1, geometry.num_strings + 1):
            if s in targets:
                r[s - 1] = 1.0 if ledger.picked[s - 1] and not ledger.wrongly_tackled[s - 1] else 0.0
            else:
                r[s - 1] = 0.0 if ledger.wrongly_tackled[s - 1] else 1.0
        return 0.4 * min(d_min / PICK_CLEARANCE, 1.0) + 0.1 * float(r.sum()) + 0.5 * float(r.prod())

    if cooperative_gate and not press_states_ok and not picked_this_frame:
        return r_cross(), "x"
    if picked_this_frame:
        if cooperative_gate and not press_states_ok:
            return r_cross(), "x"
        wrong = [s + 1 for s in range(geometry.num_strings) if ledger.wrongly_tackled[s]]
        if wrong:
            return min(
                pick_distance_reward(_tip_string_distance(tip, s, geometry)) for s in wrong
            ), "+"
        return 1.0, "+"
    if not remaining:
        return r_minus(), "-"
    return r_cross(), "x"


def right_frame_reward(
    ledger: NoteLedger,
    pose: HandPose,
    pick_track,
    dt: float,
    geometry: FretboardGeometry,
    picked_this_frame: bool,
    cooperative_gate: bool = False,
    press_states_ok: bool = True,
    pose_prev: HandPose | None = None,
) -> RightRewardBreakdown:
    """Full right-hand breakdown for one control frame.

    ``pick_track`` holds the last 2-3 pick-tip positions (oldest first);
    acceleration uses central differences when three frames exist.
    """
    track = [np.asarray(p, float) for p in pick_track]
    tip = track[-1]
    pick, branch = right_pick_reward(
        ledger, tip, geometry, picked_this_frame,
        cooperative_gate=cooperative_gate, press_states_ok=press_states_ok,
    )
    mount = pose.pick_mount()
    contact = float(
        np.linalg.norm(pose.fingertip("thumb") - mount) < CONTACT_RADIUS
        and np.linalg.norm(pose.fingertip("index") - mount) < CONTACT_RADIUS
    )
    if len(track) >= 2:
        v = (track[-1] - track[-2]) / dt
    else:
        v = np.zeros(3)
    if len(track) >= 3:
        a = (track[-1] - 2 * track[-2] + track[-3]) / (dt * dt)
    else:
        a = np.zeros(3)
    if pose_prev is not None:
        v_wrist = (pose.wrist_position - pose_prev.wrist_position) / dt
        tip_vels = [
            ((pose.fingertip(f) - pose.wrist_position)
             - (pose_prev.fingertip(f) - pose_prev.wrist_position)) / dt
            for f in PRESSING_FINGERS + ("thumb",)
        ]
        energy_hand = left_energy_reward(v_wrist, tip_vels)
    else:
        energy_hand = 1.0  # no history: treat the hand as static
    return RightRewardBreakdown(
        pick=pick,
        branch=branch,
        contact=contact,
        energy_hand=energy_hand,
        energy_pick=pick_energy_reward(v, a),
    )
