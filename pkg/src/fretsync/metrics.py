"""Note-level precision/recall/F1 from session ledgers.

Three evaluation modes: left (press correctness), right (pick
correctness) and joint (two-hand coordination). Verdicts are per string
per note; track-level numbers are micro-averaged over all verdicts.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

from .session import NoteLedger
from .tab import NUM_STRINGS

TP, FP, FN, TN = "tp", "fp", "fn", "tn"
MODES = ("left", "right", "joint")


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class NoteResult:
    note_index: int
    is_chord: bool
    left: tuple       # 6 verdicts
    right: tuple
    joint: tuple

    def verdicts(self, mode: str) -> tuple:
        return getattr(self, mode)


@dataclass(frozen=True)
class ModeScores:
    precision: float
    recall: float
    f1: float
    counts: dict

    @staticmethod
    def from_verdicts(verdicts) -> "ModeScores":
        counts = {TP: 0, FP: 0, FN: 0, TN: 0}
        for v in verdicts:
            counts[v] += 1
        return ModeScores(
            precision=_ratio(counts[TP], counts[TP] + counts[FP]),
            recall=_ratio(counts[TP], counts[TP] + counts[FN]),
            f1=f1_score(
                _ratio(counts[TP], counts[TP] + counts[FP]),
                _ratio(counts[TP], counts[TP] + counts[FN]),
            ),
            counts=counts,
        )


@dataclass(frozen=True)
class ScoreReport:
    overall: dict          # mode -> ModeScores
    chords: dict | None    # mode -> ModeScores over chord notes only
    per_note: list         # [{note, mode -> f1}]

    def to_json(self) -> str:
        def enc(scores: ModeScores):
            return {
                "precision": scores.precision,
                "recall": scores.recall,
                "f1": scores.f1,
                "counts": scores.counts,
            }

        return json.dumps(
            {
                "version": 1,
                "overall": {m: enc(s) for m, s in self.overall.items()},
                "chords": {m: enc(s) for m, s in self.chords.items()} if self.chords else None,
                "per_note": self.per_note,
            },
            indent=2,
        )


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


def f1_score(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def press_run_threshold(duration_frames: int) -> int:
    """Minimum contiguous correct run: at least 2/3 of the note duration."""
    return math.ceil(2.0 * duration_frames / 3.0)


def _check_complete(ledger: NoteLedger):
    if len(ledger.frames) != ledger.duration_frames:
        raise MetricsError(
            f"incomplete ledger for note {ledger.note_index}: "
            f"{len(ledger.frames)}/{ledger.duration_frames} frames"
        )


def left_note_verdicts(ledger: NoteLedger) -> tuple:
    """Press verdicts: a target is correct iff pressed at its fret for a
    contiguous run of at least 2/3 of the note."""
    _check_complete(ledger)
    thr = press_run_threshold(ledger.duration_frames)
    verdicts = []
    for s in range(1, NUM_STRINGS + 1):
        code = ledger.note.strings[s - 1]
        if code >= 1:
            verdicts.append(TP if ledger.longest_press_run(s, code) >= thr else FN)
        else:
            verdicts.append(FP if ledger.longest_any_press_run(s) >= thr else TN)
    return tuple(verdicts)


def right_note_verdicts(ledger: NoteLedger) -> tuple:
    """Pick verdicts: a target is correct iff picked exactly once in a
    consistent order; a picked non-target is a false positive."""
    _check_complete(ledger)
    picks = [0] * NUM_STRINGS
    for ev in ledger.pick_events:
        picks[ev.string - 1] += 1
    verdicts = []
    for s in range(1, NUM_STRINGS + 1):
        is_target = ledger.note.strings[s - 1] != 0  # pressed or open
        if is_target:
            ok = picks[s - 1] == 1 and not ledger.wrongly_tackled[s - 1]
            verdicts.append(TP if ok else FN)
        else:
            verdicts.append(FP if picks[s - 1] > 0 else TN)
    return tuple(verdicts)


def joint_note_verdicts(left_ledger: NoteLedger, right_ledger: NoteLedger) -> tuple:
    """Two-hand verdicts: picked correctly, pressed correctly at the pick,
    and the pressing state kept from the pick to the end of the note
    (2/3-duration threshold, capped by the remaining frames)."""
    _check_complete(left_ledger)
    _check_complete(right_ledger)
    right = right_note_verdicts(right_ledger)
    duration = left_ledger.duration_frames
    thr = press_run_threshold(duration)
    verdicts = []
    for s in range(1, NUM_STRINGS + 1):
        is_target = right_ledger.note.strings[s - 1] != 0
        if not is_target:
            verdicts.append(right[s - 1])  # FP iff picked, else TN
            continue
        if right[s - 1] != TP:
            verdicts.append(FN)
            continue
        ev = next(e for e in right_ledger.pick_events if e.string == s)
        offset = ev.frame - right_ledger.start_frame
        if not 0 <= offset < duration:
            verdicts.append(FN)
            continue
        needed = min(thr, duration - offset)
        run = 0
        for f in range(offset, duration):
            if left_ledger.left_state_ok(s, f):
                run += 1
                if run >= needed:
                    break
            else:
                break
        verdicts.append(TP if run >= needed else FN)
    return tuple(verdicts)


def evaluate_ledgers(ledgers: list[NoteLedger]) -> list[NoteResult]:
    return [
        NoteResult(
            note_index=lg.note_index,
            is_chord=lg.note.is_chord(),
            left=left_note_verdicts(lg),
            right=right_note_verdicts(lg),
            joint=joint_note_verdicts(lg, lg),
        )
        for lg in ledgers
    ]


def aggregate(results: list[NoteResult]) -> ScoreReport:
    """Micro-averaged report plus a chord-only sub-report."""
    if not results:
        raise MetricsError("cannot aggregate an empty result list")
    overall = {
        m: ModeScores.from_verdicts([v for r in results for v in r.verdicts(m)])
        for m in MODES
    }
    chord_results = [r for r in results if r.is_chord]
    chords = (
        {
            m: ModeScores.from_verdicts([v for r in chord_results for v in r.verdicts(m)])
            for m in MODES
        }
        if chord_results
        else None
    )
    per_note = [
        {
            "note": r.note_index,
            **{m: ModeScores.from_verdicts(r.verdicts(m)).f1 for m in MODES},
        }
        for r in results
    ]
    return ScoreReport(overall=overall, chords=chords, per_note=per_note)
