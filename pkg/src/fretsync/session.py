"""Virtual-string state machine: press/pick detection and note ledgers.

Strings are virtual: a string is pressed when a finger-part axis comes
within ``PRESS_THRESHOLD`` of it, and picked when the pick tip crosses its
lateral position between consecutive control frames with a trajectory
below the string. Per-note bookkeeping (press runs, pick events,
wrongly-tackled flags) feeds the reward engine and the metrics module.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .geometry import FretboardGeometry
from .hand import HandPose, finger_part_segments
from .tab import MUTE, OPEN, NUM_STRINGS, TabNote, TabScore

PRESS_THRESHOLD = 0.006


class PickDirection(str, Enum):
    TOP_TO_DOWN = "top_to_down"   # from string 1 (top-most) toward string 6
    DOWN_TO_UP = "down_to_up"


@dataclass(frozen=True)
class PickEvent:
    frame: int
    string: int                   # 1..6
    direction: PickDirection
    crossing_parameter: float = 0.0


@dataclass
class StringFrameState:
    """Per-string contact state observed in one control frame."""

    pressed_fret: int | None = None
    pressing_part: int | None = None
    contact_distance: float = float("inf")
    touched: bool = False
    _best_press: float = float("inf")


def detect_presses(pose: HandPose, geometry: FretboardGeometry) -> list[StringFrameState]:
    """Per-string pressed fret from finger-part-to-string distances.

    A string is pressed at fret k iff some pressing part is within
    PRESS_THRESHOLD of it and the contact point lies between wires k-1
    and k. The closest part wins; the thumb never presses.
    """
    segments = finger_part_segments(pose)
    states = []
    for string in range(1, geometry.num_strings + 1):
        state = StringFrameState()
        for part_idx, seg in enumerate(segments):
            d, x = geometry.string_distance(string, seg)
            if d < state.contact_distance:
                state.contact_distance = d
            if d < PRESS_THRESHOLD:
                state.touched = True
                fret = geometry.fret_at(x)
                if fret is not None and (
                    state.pressed_fret is None or d < state._best_press
                ):
                    state.pressed_fret = fret
                    state.pressing_part = part_idx
                    state._best_press = d
        states.append(state)
    return states


def detect_picks(
    tip_prev, tip_curr, geometry: FretboardGeometry, frame: int = 0
) -> list[PickEvent]:
    """Pick events for one frame pair of the pick-tip track.

    For each string the signed lateral coordinate (tip y minus string y at
    the tip's axial position) must change sign between frames, and the
    interpolated tip height at the crossing must be strictly below the
    string. Events are ordered by crossing parameter.
    """
    tip_prev = np.asarray(tip_prev, float)
    tip_curr = np.asarray(tip_curr, float)
    events = []
    for string in range(1, geometry.num_strings + 1):
        l_prev = _lateral(tip_prev, string, geometry)
        l_curr = _lateral(tip_curr, string, geometry)
        if l_prev == 0.0 or l_prev * l_curr >= 0.0:
            continue
        u = l_prev / (l_prev - l_curr)
        cross = tip_prev + u * (tip_curr - tip_prev)
        string_pt = _string_point_at_x(cross[0], string, geometry)
        if cross[2] < string_pt[2]:
            direction = (
                PickDirection.TOP_TO_DOWN if l_prev > 0 else PickDirection.DOWN_TO_UP
            )
            events.append(
                PickEvent(frame=frame, string=string, direction=direction,
                          crossing_parameter=float(u))
            )
    events.sort(key=lambda e: e.crossing_parameter)
    return events


def _string_point_at_x(x: float, string: int, geometry: FretboardGeometry) -> np.ndarray:
    a, b = geometry.string_segment(string)
    t = np.clip((x - a[0]) / (b[0] - a[0]), 0.0, 1.0)
    return a + t * (b - a)


def _lateral(tip: np.ndarray, string: int, geometry: FretboardGeometry) -> float:
    return float(tip[1] - _string_point_at_x(tip[0], string, geometry)[1])


@dataclass
class NoteLedger:
    """Per-note running state for one note of the score."""

    note_index: int
    note: TabNote
    start_frame: int
    pick_events: list = field(default_factory=list)
    picked: np.ndarray = field(default_factory=lambda: np.zeros(NUM_STRINGS, bool))
    wrongly_tackled: np.ndarray = field(default_factory=lambda: np.zeros(NUM_STRINGS, bool))
    direction: PickDirection | None = None
    # Per frame within the note: per-string (pressed_fret or None, touched).
    frames: list = field(default_factory=list)

    @property
    def duration_frames(self) -> int:
        return self.note.duration_frames

    def record_frame(self, states: list[StringFrameState]):
        self.frames.append(
            tuple((s.pressed_fret, s.touched) for s in states)
        )

    def longest_press_run(self, string: int, fret: int) -> int:
        """Longest contiguous run of frames with ``string`` pressed at ``fret``."""
        best = run = 0
        for fr in self.frames:
            if fr[string - 1][0] == fret:
                run += 1
                best = max(best, run)
            else:
                run = 0
        return best

    def longest_any_press_run(self, string: int) -> int:
        best = run = 0
        prev_fret = None
        for fr in self.frames:
            fret = fr[string - 1][0]
            if fret is not None and fret == prev_fret:
                run += 1
            elif fret is not None:
                run = 1
            else:
                run = 0
            prev_fret = fret
            best = max(best, run)
        return best

    def left_state_ok(self, string: int, frame_offset: int) -> bool:
        """Whether the string was at its expected left-hand state at a frame."""
        code = self.note.strings[string - 1]
        pressed, touched = self.frames[frame_offset][string - 1]
        if code >= 1:
            return pressed == code
        if code == OPEN:
            return not touched
        return True  # mute: unconstrained

    def remaining_targets(self) -> list[int]:
        return [s for s in self.note.pick_targets() if not self.picked[s - 1]]


def update_note_ledger(ledger: NoteLedger, events: list[PickEvent]) -> None:
    """Apply one frame's pick events to the note ledger.

    Wrongly-tackled rules: (1) a picked non-target string, (2) under a
    top-to-down sweep, an unpicked string above a picked one, (3) under
    down-to-up, an unpicked string below a picked one. A second pick of an
    already-picked target also flags it. The direction of the note's first
    pick fixes the expected order; flags are sticky within the note.
    """
    targets = set(ledger.note.pick_targets())
    for ev in events:
        if ledger.direction is None:
            ledger.direction = ev.direction
        s = ev.string
        ledger.pick_events.append(ev)
        if s not in targets:
            ledger.wrongly_tackled[s - 1] = True
        elif ledger.picked[s - 1]:
            ledger.wrongly_tackled[s - 1] = True  # picked more than once
        # Order rules: strings skipped by this pick under the note direction.
        # String 1 is top-most: a top-to-down sweep picks in increasing index.
        if ledger.direction == PickDirection.TOP_TO_DOWN:
            skipped = [t for t in targets if t < s and not ledger.picked[t - 1]]
        else:
            skipped = [t for t in targets if t > s and not ledger.picked[t - 1]]
        # Strings picked in this same frame before this event are not skipped.
        same_frame = {e.string for e in events if e.crossing_parameter <= ev.crossing_parameter}
        for t in skipped:
            if t not in same_frame:
                ledger.wrongly_tackled[t - 1] = True
        if s in targets:
            ledger.picked[s - 1] = True


def expected_press_predicate(states: list[StringFrameState], note: TabNote) -> bool:
    """True iff all strings are at the expected pressing states.

    Pressed targets must be pressed at their fret, open targets untouched,
    mute strings unconstrained.
    """
    for i, code in enumerate(note.strings):
        st = states[i]
        if code >= 1 and st.pressed_fret != code:
            return False
        if code == OPEN and st.touched:
            return False
    return True


class StringSession:
    """Single-threaded per-playthrough state: drives ledgers frame by frame."""

    def __init__(self, geometry: FretboardGeometry, score: TabScore):
        self.geometry = geometry
        self.score = score
        self.frame = 0
        self._tip_prev = None
        self.ledgers: list[NoteLedger] = [
            NoteLedger(note_index=i, note=n, start_frame=score.note_start_frame(i))
            for i, n in enumerate(score.notes)
        ]

    @property
    def current_ledger(self) -> NoteLedger:
        idx, _ = self.score.note_at_frame(min(self.frame, self.score.total_frames - 1))
        return self.ledgers[idx]

    def step(self, pose: HandPose, pick_tip) -> tuple[list[StringFrameState], list[PickEvent]]:
        """Advance one 60 Hz control frame."""
        if self.frame >= self.score.total_frames:
            raise ValueError("session stepped past the end of the score")
        ledger = self.current_ledger
        states = detect_presses(pose, self.geometry)
        ledger.record_frame(states)
        events = []
        if pick_tip is not None:
            tip = np.asarray(pick_tip, float)
            if self._tip_prev is not None:
                events = detect_picks(self._tip_prev, tip, self.geometry, frame=self.frame)
                update_note_ledger(ledger, events)
            self._tip_prev = tip
        self.frame += 1
        return states, events

    def finished(self) -> bool:
        return self.frame >= self.score.total_frames

    def event_log_jsonl(self) -> str:
        """All pick events as JSON-lines (frame, string, kind, direction)."""
        lines = []
        for ledger in self.ledgers:
            for ev in ledger.pick_events:
                lines.append(json.dumps({
                    "frame": ev.frame,
                    "string": ev.string,
                    "kind": "pick",
                    "direction": ev.direction.value,
                }))
        return "\n".join(lines)
