"""Tab score ingestion, validation, augmentation and goal-state encoding.

Internal per-string codes follow the goal encoding: -1 = open string,
0 = mute string, k in 1..24 = pressed fret. The JSON document format uses
the human tab convention (0 = open, "x" = mute, k = fret); see
docs/formats.md for the schema.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np

CONTROL_RATE_HZ = 60
OPEN = -1
MUTE = 0
NUM_STRINGS = 6
MAX_FRET = 24
GOAL_HORIZON = 5
TIMER_SCALE_FRAMES = 60.0
TIMER_CLAMP = 4.0


class TabError(ValueError):
    pass


class TabParseError(TabError):
    def __init__(self, message, line=None):
        self.line = line
        super().__init__(message if line is None else f"line {line}: {message}")


class TabFeasibilityError(TabError):
    def __init__(self, message, note_index=None):
        self.note_index = note_index
        super().__init__(message)


def frames_for_beats(beats: Fraction, bpm: float) -> float:
    """Exact (possibly fractional) 60 Hz frame count of a duration in beats."""
    return float(CONTROL_RATE_HZ * 60.0 * beats / bpm)


@dataclass(frozen=True)
class TabNote:
    """One note: per-string targets plus its duration."""

    strings: tuple            # 6 internal codes
    duration_beats: Fraction
    duration_frames: int = 0  # derived at score construction

    def __post_init__(self):
        if len(self.strings) != NUM_STRINGS:
            raise TabError(f"expected {NUM_STRINGS} per-string entries, got {len(self.strings)}")
        for code in self.strings:
            if not (code == OPEN or code == MUTE or 1 <= code <= MAX_FRET):
                raise TabError(f"invalid string code {code}")
        if self.duration_beats <= 0:
            raise TabError("note duration must be positive")
        frets = self.pressed_frets()
        if len(frets) > 4:
            raise TabFeasibilityError(
                f"chord spans {len(frets)} distinct frets; at most 4 are playable"
            )

    def pressed_frets(self) -> list[int]:
        return sorted({c for c in self.strings if c >= 1})

    def pressed_targets(self) -> list[tuple[int, int]]:
        """(string 1..6, fret) pairs for pressed strings."""
        return [(i + 1, c) for i, c in enumerate(self.strings) if c >= 1]

    def pick_targets(self) -> list[int]:
        """Strings (1..6) that must be picked: pressed or open, not mute."""
        return [i + 1 for i, c in enumerate(self.strings) if c != MUTE]

    def is_chord(self) -> bool:
        return len(self.pressed_targets()) >= 2


@dataclass(frozen=True)
class TabScore:
    tempo_bpm: float
    notes: tuple
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.tempo_bpm <= 0:
            raise TabError("tempo must be positive")
        if not self.notes:
            raise TabError("empty score: at least one note is required")
        resolved = []
        for idx, note in enumerate(self.notes):
            frames = frames_for_beats(note.duration_beats, self.tempo_bpm)
            n = int(round(frames))
            if n < 1:
                raise TabFeasibilityError(
                    f"note {idx} shorter than one control frame", note_index=idx
                )
            resolved.append(replace(note, duration_frames=n))
        object.__setattr__(self, "notes", tuple(resolved))

    @property
    def total_frames(self) -> int:
        return sum(n.duration_frames for n in self.notes)

    def note_at_frame(self, frame: int) -> tuple[int, int]:
        """(note index, frame offset within that note) for a global frame."""
        if frame < 0 or frame >= self.total_frames:
            raise TabError(f"frame {frame} outside score span 0..{self.total_frames - 1}")
        acc = 0
        for idx, note in enumerate(self.notes):
            if frame < acc + note.duration_frames:
                return idx, frame - acc
            acc += note.duration_frames
        raise AssertionError("unreachable")

    def note_start_frame(self, index: int) -> int:
        return sum(n.duration_frames for n in self.notes[:index])


# ---------------------------------------------------------------------------
# Parsing / serialization

def _beats_from_doc(value) -> Fraction:
    if isinstance(value, (list, tuple)) and len(value) == 2:
        return Fraction(int(value[0]), int(value[1]))
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, float):
        return Fraction(value).limit_denominator(3600)
    if isinstance(value, str):
        return Fraction(value)
    raise TabError(f"cannot interpret duration {value!r}")


def _code_from_doc(entry) -> int:
    # Human convention: 0 = open, "x" = mute, k = fret.
    if entry in ("x", "X", "mute", None):
        return MUTE
    if entry in ("open",):
        return OPEN
    if isinstance(entry, bool) or not isinstance(entry, int):
        raise TabError(f"invalid string entry {entry!r}")
    if entry == 0:
        return OPEN
    if 1 <= entry <= MAX_FRET:
        return entry
    raise TabError(f"fret {entry} out of range 1..{MAX_FRET}")


def _code_to_doc(code: int):
    if code == OPEN:
        return 0
    if code == MUTE:
        return "x"
    return code


def parse_tab(source) -> TabScore:
    """Parse a tab from a JSON document (dict or text) or ASCII tab text."""
    if isinstance(source, dict):
        return _parse_json_doc(source)
    text = source.strip()
    if text.startswith("{"):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise TabParseError(str(exc), line=exc.lineno) from None
        return _parse_json_doc(doc)
    return parse_ascii_tab(text)


def _parse_json_doc(doc: dict) -> TabScore:
    if "tempo_bpm" not in doc:
        raise TabParseError("missing tempo_bpm")
    if not doc.get("notes"):
        raise TabError("empty score: at least one note is required")
    notes = []
    for idx, nd in enumerate(doc["notes"]):
        try:
            strings = tuple(_code_from_doc(e) for e in nd["strings"])
            note = TabNote(strings=strings, duration_beats=_beats_from_doc(nd["duration_beats"]))
        except TabFeasibilityError as exc:
            raise TabFeasibilityError(f"note {idx}: {exc}", note_index=idx) from None
        except (KeyError, TabError) as exc:
            raise TabParseError(f"note {idx}: {exc}") from None
        notes.append(note)
    return TabScore(
        tempo_bpm=float(doc["tempo_bpm"]),
        notes=tuple(notes),
        metadata=dict(doc.get("metadata", {})),
    )


def serialize_tab(score: TabScore) -> str:
    doc = {
        "version": 1,
        "tempo_bpm": score.tempo_bpm,
        "metadata": score.metadata,
        "notes": [
            {
                "strings": [_code_to_doc(c) for c in n.strings],
                "duration_beats": [n.duration_beats.numerator, n.duration_beats.denominator],
            }
            for n in score.notes
        ],
    }
    return json.dumps(doc, indent=2)


def parse_ascii_tab(text: str, tempo_bpm: float = 100.0, beats_per_column: Fraction = Fraction(1, 2)) -> TabScore:
    """Convenience importer for 6-line ASCII tab art.

    Expects six lines (string 1 first), columns aligned; '-' is mute,
    digits are frets, '0' open. Each column is one note of
    ``beats_per_column`` beats.
    """
    lines = [ln.rstrip() for ln in text.splitlines() if ln.strip()]
    if len(lines) != NUM_STRINGS:
        raise TabParseError(f"expected {NUM_STRINGS} string lines, got {len(lines)}")
    rows = []
    for i, ln in enumerate(lines):
        body = ln.split("|", 1)[-1].replace("|", "")
        rows.append(body)
    width = min(len(r) for r in rows)
    notes = []
    col = 0
    while col < width:
        entries = []
        span = 1
        for r in rows:
            ch = r[col]
            if ch.isdigit():
                nxt = r[col + 1] if col + 1 < width else ""
                tok = ch + (nxt if nxt.isdigit() else "")
                span = max(span, len(tok))
                entries.append(int(tok))
            elif ch in "xX":
                entries.append("x")
            else:
                entries.append("x")
        if any(e != "x" for e in entries):
            strings = tuple(_code_from_doc(e if e != 0 else 0) for e in entries)
            notes.append(TabNote(strings=strings, duration_beats=beats_per_column))
        col += span
    if not notes:
        raise TabError("empty score: at least one note is required")
    return TabScore(tempo_bpm=tempo_bpm, notes=tuple(notes))


# ---------------------------------------------------------------------------
# Goal states

def normalize_fret_code(code: int) -> float:
    """Affine map of raw codes [-1, 24] onto [-1, 1]."""
    return 2.0 * (code + 1) / (MAX_FRET + 1) - 1.0


@dataclass(frozen=True)
class LeftGoalState:
    """5x7 left-hand goal: normalized fret codes + frame timer per note."""

    codes: np.ndarray   # (5, 6) normalized
    timers: np.ndarray  # (5,) frames remaining (row 0) / full durations

    def matrix(self, normalize_timer: bool = True) -> np.ndarray:
        t = self.timers / TIMER_SCALE_FRAMES
        if normalize_timer:
            t = np.clip(t, 0.0, TIMER_CLAMP)
        return np.concatenate([self.codes, t[:, None]], axis=1)


@dataclass(frozen=True)
class RightGoalState:
    """5x7 right-hand goal: pick-pending flags + frame timer per note.

    ``wrongly_tackled`` extends the encoding for the critic (5x7+6).
    """

    flags: np.ndarray             # (5, 6) binary
    timers: np.ndarray            # (5,)
    wrongly_tackled: np.ndarray   # (6,) binary

    def matrix(self) -> np.ndarray:
        t = np.clip(self.timers / TIMER_SCALE_FRAMES, 0.0, TIMER_CLAMP)
        return np.concatenate([self.flags, t[:, None]], axis=1)

    def extended_vector(self) -> np.ndarray:
        return np.concatenate([self.matrix().reshape(-1), self.wrongly_tackled])


def goal_states(
    score: TabScore,
    current_frame: int,
    picked=None,
    wrongly_tackled=None,
) -> tuple[LeftGoalState, RightGoalState]:
    """Encode the five-note goal horizon at ``current_frame``.

    ``picked`` marks strings of the current note already picked (their
    pick flags drop to 0 for the rest of the note); ``wrongly_tackled``
    feeds the critic extension. Rows past the end of the score are zero.
    """
    idx, offset = score.note_at_frame(current_frame)
    codes = np.zeros((GOAL_HORIZON, NUM_STRINGS))
    flags = np.zeros((GOAL_HORIZON, NUM_STRINGS))
    timers = np.zeros(GOAL_HORIZON)
    picked = np.asarray(picked, bool) if picked is not None else np.zeros(NUM_STRINGS, bool)
    wrong = (
        np.asarray(wrongly_tackled, float)
        if wrongly_tackled is not None
        else np.zeros(NUM_STRINGS)
    )
    for row in range(GOAL_HORIZON):
        j = idx + row
        if j >= len(score.notes):
            break
        note = score.notes[j]
        codes[row] = [normalize_fret_code(c) for c in note.strings]
        for s in note.pick_targets():
            flags[row, s - 1] = 1.0
        if row == 0:
            timers[row] = note.duration_frames - offset
            flags[row][picked] = 0.0
        else:
            timers[row] = note.duration_frames
    return (
        LeftGoalState(codes=codes, timers=timers),
        RightGoalState(flags=flags, timers=timers, wrongly_tackled=wrong),
    )


# ---------------------------------------------------------------------------
# Augmentation / tempo quantization

def augment(
    score: TabScore,
    shift_range: int = 0,
    tempo_jitter: float = 0.0,
    rng: random.Random | None = None,
    shift: int | None = None,
) -> TabScore:
    """Shift pressed frets by a common offset and jitter the tempo.

    Open/mute entries are unchanged. If any note contains an open string
    the whole score is excluded from shifting (offset forced to 0),
    since moving an open string would change the chord voicing.
    """
    rng = rng or random.Random()
    has_open = any(OPEN in n.strings for n in score.notes)
    if shift is None:
        shift = rng.randint(-shift_range, shift_range) if shift_range else 0
    if has_open and shift != 0:
        shift = 0
    if shift != 0:
        for idx, note in enumerate(score.notes):
            for code in note.strings:
                if code >= 1 and not 1 <= code + shift <= MAX_FRET:
                    raise TabFeasibilityError(
                        f"shift {shift:+d} moves fret {code} of note {idx} "
                        f"outside 1..{MAX_FRET}",
                        note_index=idx,
                    )
    tempo = score.tempo_bpm
    if tempo_jitter:
        tempo = rng.uniform(score.tempo_bpm - tempo_jitter, score.tempo_bpm + tempo_jitter)
    notes = tuple(
        TabNote(
            strings=tuple(c + shift if c >= 1 else c for c in n.strings),
            duration_beats=n.duration_beats,
        )
        for n in score.notes
    )
    return TabScore(tempo_bpm=tempo, notes=notes, metadata=dict(score.metadata))


def quantize_tempo(bpm: float, shortest_note_beats) -> float:
    """Largest tempo <= bpm making the shortest note an integer frame count.

    E.g. with 1/16th shortest notes, tempos in (100, 105] round down to 100.
    """
    if bpm <= 0:
        raise TabError("tempo must be positive")
    beats = Fraction(shortest_note_beats) if not isinstance(shortest_note_beats, Fraction) else shortest_note_beats
    exact = CONTROL_RATE_HZ * 60.0 * float(beats)  # frame count at 1 BPM
    frames = exact / bpm
    n = math.ceil(frames - 1e-9)
    return exact / n
