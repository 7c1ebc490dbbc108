import itertools
import math
from fractions import Fraction

import numpy as np
import pytest

from fretsync.metrics import (
    FN,
    FP,
    MODES,
    MetricsError,
    ModeScores,
    TN,
    TP,
    aggregate,
    evaluate_ledgers,
    f1_score,
    joint_note_verdicts,
    left_note_verdicts,
    press_run_threshold,
    right_note_verdicts,
)
from fretsync.session import NoteLedger, PickDirection, PickEvent
from fretsync.tab import MUTE, OPEN, TabNote


def mk_ledger(strings, duration=30, frames=None, picks=(), wrong=()):
    """Synthetic ledger; ``frames`` is a list of per-string (fret, touched)."""
    note = TabNote(tuple(strings), Fraction(1), duration_frames=duration)
    ledger = NoteLedger(note_index=0, note=note, start_frame=0)
    if frames is None:
        frames = [tuple((None, False) for _ in range(6))] * duration
    ledger.frames = list(frames)
    for i, (frame, string) in enumerate(picks):
        ev = PickEvent(
            frame=frame, string=string,
            direction=PickDirection.TOP_TO_DOWN, crossing_parameter=float(i),
        )
        ledger.pick_events.append(ev)
        if strings[string - 1] != MUTE:
            ledger.picked[string - 1] = True
    for s in wrong:
        ledger.wrongly_tackled[s - 1] = True
    return ledger


def frames_with_press(duration, string, fret, run, start=0):
    frames = []
    for f in range(duration):
        row = [(None, False)] * 6
        if start <= f < start + run:
            row[string - 1] = (fret, True)
        frames.append(tuple(row))
    return frames


class TestThreshold:
    def test_two_thirds_of_thirty(self):
        assert press_run_threshold(30) == 20

    def test_ceiling(self):
        assert press_run_threshold(31) == 21
        assert press_run_threshold(1) == 1

    def test_brute_force(self):
        for n in range(1, 200):
            want = min(k for k in range(1, n + 1) if 3 * k >= 2 * n)
            assert press_run_threshold(n) == want


class TestLeftVerdicts:
    def test_exact_threshold_run(self):
        strings = (5, MUTE, MUTE, MUTE, MUTE, MUTE)
        lg = mk_ledger(strings, frames=frames_with_press(30, 1, 5, 20))
        assert left_note_verdicts(lg)[0] == TP

    def test_one_frame_short(self):
        strings = (5, MUTE, MUTE, MUTE, MUTE, MUTE)
        lg = mk_ledger(strings, frames=frames_with_press(30, 1, 5, 19))
        assert left_note_verdicts(lg)[0] == FN

    def test_split_runs_do_not_count(self):
        # two runs of 15 with a gap: total 30 frames pressed but no run >= 20
        strings = (5, MUTE, MUTE, MUTE, MUTE, MUTE)
        frames = []
        for f in range(32):
            row = [(None, False)] * 6
            if f < 15 or f >= 17:
                row[0] = (5, True)
            frames.append(tuple(row))
        lg = mk_ledger(strings, duration=32, frames=frames)
        assert left_note_verdicts(lg)[0] == FN

    def test_wrong_fret_is_miss(self):
        strings = (5, MUTE, MUTE, MUTE, MUTE, MUTE)
        lg = mk_ledger(strings, frames=frames_with_press(30, 1, 4, 30))
        assert left_note_verdicts(lg)[0] == FN

    def test_nontarget_long_press_is_fp(self):
        strings = (MUTE,) * 6
        lg = mk_ledger(strings, frames=frames_with_press(30, 3, 7, 25))
        v = left_note_verdicts(lg)
        assert v[2] == FP
        assert all(x == TN for i, x in enumerate(v) if i != 2)

    def test_incomplete_ledger_raises(self):
        lg = mk_ledger((MUTE,) * 6, duration=30)
        lg.frames = lg.frames[:10]
        with pytest.raises(MetricsError):
            left_note_verdicts(lg)


class TestRightVerdicts:
    def test_single_pick_is_tp(self):
        lg = mk_ledger((5, MUTE, MUTE, MUTE, MUTE, MUTE), picks=[(3, 1)])
        assert right_note_verdicts(lg)[0] == TP

    def test_double_pick_is_fn(self):
        lg = mk_ledger((5, MUTE, MUTE, MUTE, MUTE, MUTE),
                       picks=[(3, 1), (9, 1)], wrong=(1,))
        assert right_note_verdicts(lg)[0] == FN

    def test_unpicked_target_is_fn(self):
        lg = mk_ledger((5, MUTE, MUTE, MUTE, MUTE, MUTE))
        assert right_note_verdicts(lg)[0] == FN

    def test_picked_nontarget_is_fp(self):
        lg = mk_ledger((MUTE,) * 6, picks=[(0, 4)], wrong=(4,))
        v = right_note_verdicts(lg)
        assert v[3] == FP

    def test_open_string_is_target(self):
        lg = mk_ledger((OPEN, MUTE, MUTE, MUTE, MUTE, MUTE), picks=[(2, 1)])
        assert right_note_verdicts(lg)[0] == TP

    def test_order_flag_voids_pick(self):
        lg = mk_ledger((5, 5, MUTE, MUTE, MUTE, MUTE),
                       picks=[(3, 1), (3, 2)], wrong=(2,))
        v = right_note_verdicts(lg)
        assert v[0] == TP and v[1] == FN


class TestJointVerdicts:
    def _pressed_frames(self, duration, string, fret, ok_from, ok_to):
        frames = []
        for f in range(duration):
            row = [(None, False)] * 6
            if ok_from <= f < ok_to:
                row[string - 1] = (fret, True)
            frames.append(tuple(row))
        return frames

    def test_all_three_conditions(self):
        strings = (5, MUTE, MUTE, MUTE, MUTE, MUTE)
        lg = mk_ledger(strings, picks=[(5, 1)],
                       frames=self._pressed_frames(30, 1, 5, 0, 30))
        assert joint_note_verdicts(lg, lg)[0] == TP

    def test_pick_without_press_fails(self):
        strings = (5, MUTE, MUTE, MUTE, MUTE, MUTE)
        lg = mk_ledger(strings, picks=[(5, 1)])
        assert right_note_verdicts(lg)[0] == TP
        assert joint_note_verdicts(lg, lg)[0] == FN

    def test_press_released_right_after_pick_fails(self):
        strings = (5, MUTE, MUTE, MUTE, MUTE, MUTE)
        lg = mk_ledger(strings, picks=[(5, 1)],
                       frames=self._pressed_frames(30, 1, 5, 0, 8))
        assert joint_note_verdicts(lg, lg)[0] == FN

    def test_late_pick_needs_only_remaining_frames(self):
        # pick at the 25th frame: only 5 frames remain, all pressed
        strings = (5, MUTE, MUTE, MUTE, MUTE, MUTE)
        lg = mk_ledger(strings, picks=[(25, 1)],
                       frames=self._pressed_frames(30, 1, 5, 25, 30))
        assert joint_note_verdicts(lg, lg)[0] == TP

    def test_open_target_must_stay_untouched(self):
        strings = (OPEN, MUTE, MUTE, MUTE, MUTE, MUTE)
        frames = []
        for f in range(30):
            row = [(None, False)] * 6
            if f >= 12:
                row[0] = (None, True)  # touched after the pick
            frames.append(tuple(row))
        lg = mk_ledger(strings, picks=[(5, 1)], frames=frames)
        assert joint_note_verdicts(lg, lg)[0] == FN

    def test_nontarget_passthrough(self):
        lg = mk_ledger((MUTE,) * 6, picks=[(0, 2)], wrong=(2,))
        v = joint_note_verdicts(lg, lg)
        assert v[1] == FP
        assert all(x == TN for i, x in enumerate(v) if i != 1)


def brute_f1(verdicts):
    """Independent micro-F1 from raw verdict counting."""
    tp = verdicts.count(TP)
    fp = verdicts.count(FP)
    fn = verdicts.count(FN)
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    return 2 * p * r / (p + r) if p + r else 0.0


class TestAggregation:
    def test_worked_example(self):
        # 3 TP, 1 FP, 1 FN -> precision 0.75, recall 0.75, F1 0.75
        scores = ModeScores.from_verdicts([TP, TP, TP, FP, FN, TN])
        assert scores.precision == pytest.approx(0.75)
        assert scores.recall == pytest.approx(0.75)
        assert scores.f1 == pytest.approx(0.75)

    def test_empty_raises(self):
        with pytest.raises(MetricsError):
            aggregate([])

    def test_f1_against_brute_force(self):
        rng = np.random.default_rng(7)
        labels = [TP, FP, FN, TN]
        for _ in range(200):
            vs = [labels[i] for i in rng.integers(0, 4, size=rng.integers(1, 20))]
            assert ModeScores.from_verdicts(vs).f1 == pytest.approx(brute_f1(vs))

    def test_all_verdict_singletons(self):
        for v in (TP, FP, FN, TN):
            s = ModeScores.from_verdicts([v])
            assert s.counts[v] == 1 and sum(s.counts.values()) == 1

    def test_report_structure_and_chords(self):
        single = mk_ledger((5, MUTE, MUTE, MUTE, MUTE, MUTE),
                           picks=[(0, 1)],
                           frames=frames_with_press(30, 1, 5, 30))
        chord_frames = []
        for f in range(30):
            row = [(None, False)] * 6
            row[0] = (3, True)
            row[1] = (5, True)
            chord_frames.append(tuple(row))
        chord = mk_ledger((3, 5, MUTE, MUTE, MUTE, MUTE),
                          picks=[(0, 1), (0, 2)], frames=chord_frames)
        results = evaluate_ledgers([single, chord])
        report = aggregate(results)
        assert set(report.overall) == set(MODES)
        assert report.chords is not None
        assert len(report.per_note) == 2
        # the chord sub-report only counts the chord note's verdicts
        chord_only = aggregate(evaluate_ledgers([chord]))
        for m in MODES:
            assert report.chords[m].counts == chord_only.overall[m].counts
        # JSON report round-trips
        import json

        blob = json.loads(report.to_json())
        assert blob["version"] == 1
        assert set(blob["overall"]) == set(MODES)


class TestRandomizedLedgerOracle:
    """Exhaustive cross-check of verdicts against a direct enumerator."""

    def oracle_left(self, ledger):
        thr = press_run_threshold(ledger.duration_frames)
        out = []
        for s in range(1, 7):
            code = ledger.note.strings[s - 1]
            seq = [fr[s - 1][0] for fr in ledger.frames]
            if code >= 1:
                # longest run of exactly `code` by scanning every window
                ok = any(
                    all(seq[j] == code for j in range(i, i + thr))
                    for i in range(len(seq) - thr + 1)
                )
                out.append(TP if ok else FN)
            else:
                bad = any(
                    seq[i] is not None
                    and all(seq[j] == seq[i] for j in range(i, i + thr))
                    for i in range(len(seq) - thr + 1)
                )
                out.append(FP if bad else TN)
        return tuple(out)

    def oracle_right(self, ledger):
        out = []
        for s in range(1, 7):
            n = sum(1 for e in ledger.pick_events if e.string == s)
            if ledger.note.strings[s - 1] != MUTE:
                out.append(TP if n == 1 and not ledger.wrongly_tackled[s - 1] else FN)
            else:
                out.append(FP if n > 0 else TN)
        return tuple(out)

    def test_randomized(self):
        rng = np.random.default_rng(123)
        for trial in range(300):
            duration = int(rng.integers(3, 15))
            strings = tuple(int(c) for c in rng.integers(-1, 4, size=6))
            frames = []
            for _ in range(duration):
                row = []
                for s in range(6):
                    if rng.random() < 0.5:
                        row.append((int(rng.integers(1, 4)), True))
                    else:
                        row.append((None, rng.random() < 0.3))
                frames.append(tuple(row))
            picks = []
            for s in range(1, 7):
                for k in range(int(rng.integers(0, 3))):
                    picks.append((int(rng.integers(0, duration)), s))
            wrong = [s for s in range(1, 7) if rng.random() < 0.25]
            lg = mk_ledger(strings, duration=duration, frames=frames,
                           picks=picks, wrong=wrong)
            # double picks of a target should be flagged, as the session does
            for s in range(1, 7):
                n = sum(1 for _, t in picks if t == s)
                if strings[s - 1] != MUTE and n > 1:
                    lg.wrongly_tackled[s - 1] = True
                if strings[s - 1] == MUTE and n > 0:
                    lg.wrongly_tackled[s - 1] = True
            assert left_note_verdicts(lg) == self.oracle_left(lg), trial
            assert right_note_verdicts(lg) == self.oracle_right(lg), trial
