"""Heuristic kinematic player: scripted trajectories over virtual strings.

The oracle assigns fingers to pressed targets by exhaustive search over
order-preserving (non-crossing) selections, solves fingertip placement to
the press points with bounded least squares, and drives the pick tip
through scripted sweeps that cross exactly the target span below string
height. It produces left-hand joint trajectories and pick-tip tracks that
exercise sessions, rewards and metrics end-to-end without any learning.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares

from .geometry import FretboardGeometry, GuitarSpec, build_geometry
from .hand import (
    HandPose,
    HandSkeleton,
    NUM_DOF,
    PRESSING_FINGERS,
    forward_kinematics,
)
from .metrics import ScoreReport, aggregate, evaluate_ledgers
from .session import PickDirection, StringSession
from .tab import CONTROL_RATE_HZ, TabNote, TabScore

TIP_PART = 2
PLACEMENT_TOLERANCE = 0.004     # m, must stay inside the 0.006 press threshold
PICK_X = 0.55                   # axial picking position, past the last fret
PICK_DEPTH = 0.002              # how far below string height the sweep travels
PICK_CLEARANCE = 0.003          # preferred entry/exit clearance from non-targets
STAGING_HEIGHT = 0.03           # pick hold height above the strings

# Frame-to-frame trajectory rate limits.
MAX_TRANSLATION_PER_FRAME = 0.02   # m (1.2 m/s at 60 Hz)
MAX_ROTATION_PER_FRAME = 0.15      # rad (9 rad/s at 60 Hz)


class FingeringError(ValueError):
    def __init__(self, message: str, note_index: int | None = None):
        super().__init__(message)
        self.note_index = note_index


class PlacementError(ValueError):
    def __init__(self, message: str, residuals=None):
        super().__init__(message)
        self.residuals = residuals


@dataclass(frozen=True)
class Press:
    string: int      # 1..6
    fret: int        # 1..24
    finger: int      # 1 = index .. 4 = pinky


@dataclass(frozen=True)
class BarreGroup:
    fret: int
    strings: tuple   # contiguous ascending string indices
    finger: int


@dataclass(frozen=True)
class FingeringAssignment:
    presses: tuple = ()
    barre_groups: tuple = ()

    def finger_frets(self) -> dict:
        """finger -> fret over both individual presses and barres."""
        out = {}
        for p in self.presses:
            out[p.finger] = p.fret
        for g in self.barre_groups:
            out[g.finger] = g.fret
        return out

    def covered_targets(self) -> set:
        covered = {(p.string, p.fret) for p in self.presses}
        for g in self.barre_groups:
            covered |= {(s, g.fret) for s in g.strings}
        return covered


def validate_assignment(assignment: FingeringAssignment, note: TabNote) -> None:
    """Independent constraint check, separate from the assignment search.

    Verifies full target coverage, at most one fret per finger, and the
    non-crossing rule: the finger serving the fret of ascending order o
    must satisfy o <= finger and (m - o) <= (4 - finger).
    """
    targets = set(note.pressed_targets())
    covered = assignment.covered_targets()
    if covered != targets:
        raise FingeringError(f"assignment covers {covered}, targets are {targets}")
    finger_frets = {}
    for p in assignment.presses:
        if p.finger in finger_frets and finger_frets[p.finger] != p.fret:
            raise FingeringError(f"finger {p.finger} assigned to two frets")
        finger_frets[p.finger] = p.fret
    for g in assignment.barre_groups:
        if g.finger in finger_frets and finger_frets[g.finger] != g.fret:
            raise FingeringError(f"finger {g.finger} assigned to two frets")
        finger_frets[g.finger] = g.fret
        span = range(min(g.strings), max(g.strings) + 1)
        if tuple(span) != tuple(g.strings):
            raise FingeringError("barre strings must be contiguous")
    frets = sorted(set(finger_frets.values()))
    m = len(frets)
    for finger, fret in finger_frets.items():
        order = frets.index(fret) + 1
        if not (order <= finger and (m - order) <= (4 - finger)):
            raise FingeringError(
                f"finger {finger} on fret order {order} of {m} crosses another finger"
            )


def _fret_groups(note: TabNote) -> dict:
    groups: dict[int, list[int]] = {}
    for string, fret in note.pressed_targets():
        groups.setdefault(fret, []).append(string)
    return {k: sorted(v) for k, v in groups.items()}


def _is_contiguous(strings: list[int]) -> bool:
    return strings == list(range(strings[0], strings[-1] + 1))


def assign_fingers(
    note: TabNote,
    geometry: FretboardGeometry,
    previous: FingeringAssignment | None = None,
    note_index: int | None = None,
) -> FingeringAssignment:
    """Minimum-travel finger assignment over all non-crossing selections.

    A fret hosting at least three targets on adjacent strings becomes a
    barre; every other target takes a fingertip of its own. The search is
    exhaustive over strictly increasing finger selections, which are
    non-crossing by construction; cost is the axial travel of each finger
    from its previous fret plus a small bias toward low finger indices.
    """
    groups = _fret_groups(note)
    if not groups:
        return FingeringAssignment()
    units = []   # (fret, strings tuple or None-for-single, is_barre)
    for fret in sorted(groups):
        strings = groups[fret]
        if len(strings) >= 3 and _is_contiguous(strings):
            units.append((fret, tuple(strings), True))
        else:
            units.extend((fret, (s,), False) for s in strings)
    units.sort(key=lambda u: (u[0], u[1][0]))
    if len(units) > 4:
        raise FingeringError(
            f"{len(units)} press units exceed the four usable fingers",
            note_index=note_index,
        )
    frets = sorted(groups)
    m = len(frets)
    prev_frets = previous.finger_frets() if previous else {}
    best = None
    for fingers in itertools.combinations(range(1, 5), len(units)):
        ok = True
        for finger, (fret, _strings, _barre) in zip(fingers, units):
            order = frets.index(fret) + 1
            if not (order <= finger and (m - order) <= (4 - finger)):
                ok = False
                break
        if not ok:
            continue
        cost = 0.0
        for finger, (fret, _strings, _barre) in zip(fingers, units):
            x = geometry.fret_mid_distance[fret]
            if finger in prev_frets:
                cost += abs(x - geometry.fret_mid_distance[prev_frets[finger]])
            elif prev_frets:
                cost += 0.05    # deploying a resting finger beats long slides only
            cost += 1e-4 * finger   # prefer the index finger, all else equal
        if best is None or cost < best[0]:
            best = (cost, fingers)
    if best is None:
        raise FingeringError(
            f"no non-crossing finger selection for frets {frets}",
            note_index=note_index,
        )
    presses, barres = [], []
    for finger, (fret, strings, is_barre) in zip(best[1], units):
        if is_barre:
            barres.append(BarreGroup(fret=fret, strings=strings, finger=finger))
        else:
            presses.append(Press(string=strings[0], fret=fret, finger=finger))
    assignment = FingeringAssignment(presses=tuple(presses),
                                     barre_groups=tuple(barres))
    validate_assignment(assignment, note)
    return assignment


# ---------------------------------------------------------------------------
# Placement


def _rest_coordinates(skeleton: HandSkeleton) -> np.ndarray:
    """Fingers-down posture with every finger folded out of the way."""
    q = np.zeros(NUM_DOF)
    q[4] = np.pi / 2
    q[7] = 1.2
    for base in (11, 15, 19, 23):
        q[base + 1] = 1.2
        q[base + 2] = 1.2
    return q


def away_coordinates(skeleton: HandSkeleton, offset=(0.3, 0.0, 0.3)) -> np.ndarray:
    q = _rest_coordinates(skeleton)
    q[0:3] = offset
    return q


def _finger_base(finger: int) -> int:
    return 11 + 4 * (finger - 1)


@dataclass
class PlacementResult:
    joint_coordinates: np.ndarray
    residuals: np.ndarray         # per-target distances (m)
    solver_evaluations: int


def _barre_coordinates(skeleton, geometry, group: BarreGroup) -> np.ndarray:
    """Analytic lay-flat placement of one finger across a string span."""
    q = np.zeros(NUM_DOF)
    q[5] = -np.pi / 2   # palm +x maps to -y: the finger crosses the strings
    q[7] = 1.2
    finger_name = PRESSING_FINGERS[group.finger - 1]
    for i, name in enumerate(PRESSING_FINGERS):
        if name != finger_name:
            base = 11 + 4 * i
            q[base + 1] = 1.2
            q[base + 2] = 1.2
    probe = forward_kinematics(skeleton, q, check_limits=False)
    x = geometry.fret_mid_distance[group.fret]
    z = geometry.spec.string_action_height
    mcp = probe.finger_chains[finger_name][0]
    # the straight finger points toward -y; anchor its MCP just above the
    # top-most string of the span so the segments lie over the whole span
    top_string = min(group.strings)
    top_y = geometry.string_point_at(top_string, x)[1] + 0.01
    q[0:3] += np.array([x, top_y, z]) - mcp
    return q


def solve_placement(
    assignment: FingeringAssignment,
    geometry: FretboardGeometry,
    skeleton: HandSkeleton,
    previous: np.ndarray | None = None,
) -> PlacementResult:
    """Joint coordinates placing each assigned fingertip on its press point.

    Bounded least squares over the wrist plus the active fingers' joints;
    barre-only assignments are placed analytically. Raises
    :class:`PlacementError` with the per-target residuals when any tip
    ends farther than ``PLACEMENT_TOLERANCE`` from its press point.
    """
    if not assignment.presses and not assignment.barre_groups:
        # no targets: clear the fretboard so nothing stays pressed
        return PlacementResult(away_coordinates(skeleton), np.zeros(0), 0)
    if assignment.barre_groups:
        if assignment.presses or len(assignment.barre_groups) > 1:
            raise PlacementError(
                "mixed barre-plus-melody placements are not supported"
            )
        q = _barre_coordinates(skeleton, geometry, assignment.barre_groups[0])
        return PlacementResult(q, np.zeros(0), 0)

    targets = [(p.finger, geometry.press_point(p.string, p.fret))
               for p in assignment.presses]
    fingers = sorted({f for f, _ in targets})
    # wrist translation only: a fixed fingers-down orientation keeps the
    # folded fingers clear of the strings in every solution
    active = [0, 1, 2]
    for f in fingers:
        active.extend(range(_finger_base(f), _finger_base(f) + 4))
    active = np.array(active)

    q0 = _rest_coordinates(skeleton)
    for f in fingers:
        base = _finger_base(f)
        q0[base + 1: base + 3] = 0.0   # point the active finger down
    if previous is not None:
        q0[0:3] = previous[0:3]        # warm start: keep the wrist placement
    else:
        probe = forward_kinematics(skeleton, q0, check_limits=False)
        anchor = probe.fingertip(PRESSING_FINGERS[fingers[0] - 1])
        q0[0:3] += targets[0][1] - anchor

    q_init = q0[active].copy()

    def residual(x):
        q = q0.copy()
        q[active] = x
        pose = forward_kinematics(skeleton, q, check_limits=False)
        parts = [
            pose.fingertip(PRESSING_FINGERS[f - 1]) - p for f, p in targets
        ]
        parts.append(0.001 * (x - q_init))
        return np.concatenate(parts)

    lo = skeleton.joint_limits_low[active]
    hi = skeleton.joint_limits_high[active]
    result = least_squares(
        residual, np.clip(q_init, lo, hi), bounds=(lo, hi),
        xtol=1e-10, ftol=1e-10, max_nfev=200 * len(active),
    )
    q = q0.copy()
    q[active] = result.x
    pose = forward_kinematics(skeleton, q, check_limits=False)
    dists = np.array([
        float(np.linalg.norm(pose.fingertip(PRESSING_FINGERS[f - 1]) - p))
        for f, p in targets
    ])
    if np.any(dists > PLACEMENT_TOLERANCE):
        raise PlacementError(
            f"placement residuals {dists} exceed {PLACEMENT_TOLERANCE} m",
            residuals=dists,
        )
    return PlacementResult(q, dists, int(result.nfev))


# ---------------------------------------------------------------------------
# Picking


@dataclass(frozen=True)
class PickSweep:
    track: np.ndarray                 # (frames, 3) pick-tip positions
    direction: PickDirection
    expected_false_positives: tuple   # non-target strings crossed below height


def script_pick_sweep(
    targets,
    direction: PickDirection,
    duration_frames: int,
    geometry: FretboardGeometry,
    x: float = PICK_X,
) -> PickSweep:
    """Linear sweep crossing exactly the contiguous target span.

    The track stays ``PICK_DEPTH`` below string height and enters/exits
    half a string gap (at least ``PICK_CLEARANCE`` where the spacing
    allows) outside the span. Non-target strings inside a non-contiguous
    span cannot be avoided; they are reported as expected false positives.
    """
    targets = sorted(set(int(t) for t in targets))
    if not targets:
        raise FingeringError("a pick sweep needs at least one target string")
    if duration_frames < 2:
        raise FingeringError("a pick sweep needs at least two frames")
    top, bottom = targets[0], targets[-1]
    crossed = list(range(top, bottom + 1))
    expected_fp = tuple(s for s in crossed if s not in targets)

    ys = {s: geometry.string_point_at(s, x)[1]
          for s in range(1, geometry.num_strings + 1)}
    z = geometry.string_point_at(top, x)[2] - PICK_DEPTH

    def edge_y(string: int, side: int) -> float:
        """Entry/exit y just outside ``string`` on the +1 (top) / -1 side."""
        neighbor = string - side
        if 1 <= neighbor <= geometry.num_strings:
            gap = abs(ys[neighbor] - ys[string]) / 2.0
        else:
            gap = 2.0 * PICK_CLEARANCE
        return ys[string] + side * max(gap, 1e-4)

    y_top = edge_y(top, +1)
    y_bottom = edge_y(bottom, -1)
    if direction == PickDirection.TOP_TO_DOWN:
        y_start, y_end = y_top, y_bottom
    else:
        y_start, y_end = y_bottom, y_top
    u = np.linspace(0.0, 1.0, duration_frames)
    y_track = y_start + u * (y_end - y_start)
    # crossing detection needs a sign *change*; nudge any sample that
    # lands exactly on a crossed string
    for s in crossed:
        exact = y_track == ys[s]
        if exact.any():
            y_track[exact] += 1e-7 * (y_end - y_start)
    track = np.column_stack([
        np.full(duration_frames, x),
        y_track,
        np.full(duration_frames, z),
    ])
    return PickSweep(track=track, direction=direction,
                     expected_false_positives=expected_fp)


# ---------------------------------------------------------------------------
# Playthrough


@dataclass
class PlayResult:
    score: TabScore
    joint_trajectory: np.ndarray      # (T, 27) left-hand joint coordinates
    pick_track: np.ndarray            # (T, 3) pick-tip positions
    ledgers: list
    report: ScoreReport
    warnings: list = field(default_factory=list)

    def trajectory_jsonl(self) -> str:
        lines = []
        for frame in range(len(self.joint_trajectory)):
            lines.append(json.dumps({
                "frame": frame,
                "time": frame / CONTROL_RATE_HZ,
                "joints": [round(v, 9) for v in self.joint_trajectory[frame]],
                "pick_tip": [round(v, 9) for v in self.pick_track[frame]],
            }))
        return "\n".join(lines) + "\n"


def _rate_limited_path(q_from: np.ndarray, q_to: np.ndarray) -> np.ndarray:
    """Frames needed to move between poses under the per-frame rate limits."""
    delta = q_to - q_from
    steps_t = np.abs(delta[0:3]).max() / MAX_TRANSLATION_PER_FRAME
    steps_r = np.abs(delta[3:]).max() / MAX_ROTATION_PER_FRAME
    steps = max(1, int(math.ceil(max(steps_t, steps_r))))
    return np.linspace(q_from, q_to, steps + 1)[1:]


def _staging_point(geometry: FretboardGeometry) -> np.ndarray:
    mid = geometry.string_point_at(3, PICK_X)
    return np.array([PICK_X, mid[1], mid[2] + STAGING_HEIGHT])


def _pick_note_track(
    note: TabNote,
    duration: int,
    sweep_start: int,
    direction: PickDirection,
    geometry: FretboardGeometry,
    staging: np.ndarray,
):
    """(per-frame tips, next direction) for one note's right hand."""
    targets = note.pick_targets()
    if not targets:
        return [staging.copy() for _ in range(duration)], direction
    sweep_frames = max(3, 2 * (max(targets) - min(targets) + 1))
    descend = 2
    latest = duration - sweep_frames - descend - 1
    # keep at least one hover frame so the approach never crosses a string
    start = min(max(sweep_start, 1), max(latest, 1))
    sweep = script_pick_sweep(targets, direction, sweep_frames, geometry)
    tips = []
    entry = sweep.track[0]
    hover = np.array([entry[0], entry[1], staging[2]])
    for _ in range(min(start, duration)):
        tips.append(hover.copy())
    for k in range(descend):
        if len(tips) >= duration:
            break
        u = (k + 1) / descend
        tips.append(hover + u * (entry - hover))
    for point in sweep.track:
        if len(tips) >= duration:
            break
        tips.append(point.copy())
    exit_hover = np.array([sweep.track[-1][0], sweep.track[-1][1], staging[2]])
    while len(tips) < duration:
        tips.append(exit_hover.copy())
    next_direction = (
        PickDirection.DOWN_TO_UP
        if direction == PickDirection.TOP_TO_DOWN
        else PickDirection.TOP_TO_DOWN
    )
    return tips, next_direction


def play(
    score: TabScore,
    geometry: FretboardGeometry | None = None,
    skeleton: HandSkeleton | None = None,
) -> PlayResult:
    """Scripted two-hand playthrough of a score, scored by the metrics.

    The left hand transitions to each note's placement under the rate
    limits and holds; the pick sweeps once per note, alternating
    directions, only after the left hand has arrived.
    """
    geometry = geometry or build_geometry(GuitarSpec())
    skeleton = skeleton or HandSkeleton()
    warnings = []

    q_prev = away_coordinates(skeleton)
    assignment_prev = None
    joint_rows, tip_rows = [], []
    direction = PickDirection.TOP_TO_DOWN
    staging = _staging_point(geometry)

    for idx, note in enumerate(score.notes):
        duration = note.duration_frames
        try:
            assignment = assign_fingers(note, geometry, assignment_prev,
                                        note_index=idx)
            try:
                warm = q_prev if assignment_prev else None
                placement = solve_placement(assignment, geometry, skeleton,
                                            previous=warm)
            except PlacementError:
                placement = solve_placement(assignment, geometry, skeleton)
        except (FingeringError, PlacementError) as exc:
            exc.args = (f"note {idx}: {exc.args[0]}",)
            raise
        path = _rate_limited_path(q_prev, placement.joint_coordinates)
        if len(path) > duration:
            warnings.append({
                "note": idx,
                "kind": "rate-limit",
                "detail": f"transition needs {len(path)} frames, "
                          f"note lasts {duration}",
            })
        note_rows = [path[min(f, len(path) - 1)] for f in range(duration)]
        joint_rows.extend(note_rows)
        arrival = min(len(path), duration)
        tips, direction = _pick_note_track(
            note, duration, arrival, direction, geometry, staging)
        tip_rows.extend(tips)
        q_prev = placement.joint_coordinates
        assignment_prev = assignment

    joints = np.array(joint_rows)
    tips = np.array(tip_rows)
    session = StringSession(geometry, score)
    for frame in range(score.total_frames):
        pose = forward_kinematics(skeleton, joints[frame], check_limits=False)
        session.step(pose, tips[frame])
    results = evaluate_ledgers(session.ledgers)
    return PlayResult(
        score=score,
        joint_trajectory=joints,
        pick_track=tips,
        ledgers=session.ledgers,
        report=aggregate(results),
        warnings=warnings,
    )
