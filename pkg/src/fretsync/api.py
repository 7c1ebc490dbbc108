"""Command handlers shared by the CLI and the HTTP service.

Every handler is a pure-ish function from plain documents (parsed JSON,
strings, numbers) to plain documents, so the CLI and the service stay
thin adapters around the same behavior. Handlers raise the core
exceptions (:class:`~fretsync.tab.TabError` for validation problems,
:class:`~fretsync.oracle.FingeringError` / ``PlacementError`` for
infeasible inputs, :class:`CheckFailure` for failed assertions); the
adapters map those onto exit codes / HTTP statuses.
"""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass, field

import numpy as np
import torch

from .geometry import GuitarSpec, build_geometry
from .hand import HandSkeleton, forward_kinematics
from .learner import (
    LearnerConfig,
    ToyDuetEnv,
    ToyFretEnv,
    TrainingRun,
    toy_policy_nets,
)
from .metrics import aggregate, evaluate_ledgers
from .networks import (
    CHECKPOINT_VERSION,
    LEFT_GOAL_DIM,
    RIGHT_GOAL_DIM,
    PolicyNet,
    Synchronizer,
    joint_forward,
    policy_forward,
)
from .oracle import PlayResult, play
from .rewards import (
    left_frame_rewards,
    pick_energy_reward,
    right_pick_reward,
)
from .session import StringSession, expected_press_predicate
from .tab import (
    CONTROL_RATE_HZ,
    TabError,
    TabScore,
    augment,
    parse_tab,
    quantize_tempo,
    serialize_tab,
)

ARTIFACT_VERSIONS = {
    "tab": 1,
    "score_report": 1,
    "trajectory": 1,
    "checkpoint": CHECKPOINT_VERSION,
    "manifest": 1,
}


class CheckFailure(AssertionError):
    """A verification command found a violated property."""

    def __init__(self, message: str, detail: dict | None = None):
        super().__init__(message)
        self.detail = detail or {}


# ---------------------------------------------------------------------------
# Run manifests


def _hash_text(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


@dataclass(frozen=True)
class RunManifest:
    """Everything needed to reproduce one command invocation."""

    command: str
    seed: int | None = None
    config_hash: str | None = None
    inputs: dict = field(default_factory=dict)      # role -> path
    outputs: dict = field(default_factory=dict)     # role -> path
    artifact_versions: dict = field(
        default_factory=lambda: dict(ARTIFACT_VERSIONS))

    def to_document(self) -> dict:
        return {
            "version": ARTIFACT_VERSIONS["manifest"],
            "command": self.command,
            "seed": self.seed,
            "config_hash": self.config_hash,
            "inputs": dict(self.inputs),
            "outputs": dict(self.outputs),
            "artifact_versions": dict(self.artifact_versions),
        }

    @staticmethod
    def from_document(doc: dict) -> "RunManifest":
        if doc.get("version") != ARTIFACT_VERSIONS["manifest"]:
            raise ValueError(f"unsupported manifest version {doc.get('version')!r}")
        return RunManifest(
            command=doc["command"],
            seed=doc.get("seed"),
            config_hash=doc.get("config_hash"),
            inputs=dict(doc.get("inputs", {})),
            outputs=dict(doc.get("outputs", {})),
            artifact_versions=dict(doc.get("artifact_versions", {})),
        )


def build_manifest(
    command: str,
    seed: int | None = None,
    config_text: str | None = None,
    inputs: dict | None = None,
    outputs: dict | None = None,
) -> RunManifest:
    return RunManifest(
        command=command,
        seed=seed,
        config_hash=_hash_text(config_text) if config_text is not None else None,
        inputs=dict(inputs or {}),
        outputs=dict(outputs or {}),
    )


# ---------------------------------------------------------------------------
# Tab commands


def handle_tab_validate(source: str) -> dict:
    """Parse and summarize a tab; raises TabError on schema problems."""
    score = parse_tab(source)
    return {
        "valid": True,
        "tempo_bpm": score.tempo_bpm,
        "notes": len(score.notes),
        "total_frames": score.total_frames,
        "chords": sum(1 for n in score.notes if n.is_chord),
        "metadata": dict(score.metadata),
    }


def handle_tab_augment(
    source: str,
    shift: int | None = None,
    shift_range: int = 0,
    tempo_jitter: float = 0.0,
    seed: int | None = None,
) -> dict:
    score = parse_tab(source)
    rng = random.Random(seed)
    out = augment(score, shift_range=shift_range, tempo_jitter=tempo_jitter,
                  rng=rng, shift=shift)
    return {"tab": json.loads(serialize_tab(out))}


def handle_tab_quantize(bpm: float, shortest_note_beats="1/4") -> dict:
    quantized = quantize_tempo(bpm, shortest_note_beats)
    return {
        "input_bpm": bpm,
        "shortest_note_beats": str(shortest_note_beats),
        "quantized_bpm": quantized,
    }


# ---------------------------------------------------------------------------
# Play / score


def _report_document(result: PlayResult) -> dict:
    doc = json.loads(result.report.to_json())
    doc["warnings"] = list(result.warnings)
    return doc


def handle_play(source: str) -> tuple[dict, PlayResult]:
    """Oracle playthrough of a tab: (score report document, full result)."""
    score = parse_tab(source)
    result = play(score)
    return _report_document(result), result


def parse_trajectory_jsonl(text: str) -> tuple[np.ndarray, np.ndarray]:
    """(joints (T, 27), pick tips (T, 3)) from a trajectory JSON-lines dump."""
    joints, tips = [], []
    for lineno, line in enumerate(text.splitlines()):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
            joints.append([float(v) for v in row["joints"]])
            tips.append([float(v) for v in row["pick_tip"]])
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise TabError(f"trajectory line {lineno}: {exc}") from exc
    if not joints:
        raise TabError("trajectory is empty")
    joints_arr = np.asarray(joints, float)
    tips_arr = np.asarray(tips, float)
    if joints_arr.shape[1] != 27 or tips_arr.shape[1] != 3:
        raise TabError(
            f"trajectory rows must hold 27 joints and a 3D pick tip, "
            f"got {joints_arr.shape[1]} and {tips_arr.shape[1]}"
        )
    return joints_arr, tips_arr


def replay_session(
    score: TabScore,
    joints: np.ndarray,
    tips: np.ndarray,
    geometry=None,
    skeleton=None,
) -> StringSession:
    geometry = geometry or build_geometry(GuitarSpec())
    skeleton = skeleton or HandSkeleton()
    if len(joints) < score.total_frames:
        raise TabError(
            f"trajectory holds {len(joints)} frames, score needs "
            f"{score.total_frames}"
        )
    session = StringSession(geometry, score)
    for frame in range(score.total_frames):
        pose = forward_kinematics(skeleton, joints[frame], check_limits=False)
        session.step(pose, tips[frame])
    return session


def reward_trace_jsonl(
    score: TabScore,
    joints: np.ndarray,
    tips: np.ndarray,
    geometry=None,
    skeleton=None,
) -> str:
    """Per-frame reward breakdown rows as JSON-lines.

    Left-hand rows carry the full breakdown; the right-hand columns
    cover the pick reward and the pick-tip energy (the trajectory format
    does not carry a right-hand skeleton, so contact/hand-energy terms
    are out of scope here).
    """
    geometry = geometry or build_geometry(GuitarSpec())
    skeleton = skeleton or HandSkeleton()
    session = StringSession(geometry, score)
    dt = 1.0 / CONTROL_RATE_HZ
    lines = []
    pose_prev = None
    for frame in range(score.total_frames):
        note_idx, _ = score.note_at_frame(frame)
        note = score.notes[note_idx]
        ledger = session.ledgers[note_idx]
        pose = forward_kinematics(skeleton, joints[frame], check_limits=False)
        states, events = session.step(pose, tips[frame])
        left = left_frame_rewards(
            note, pose_prev or pose, pose, dt, geometry, states=states)
        pick, branch = right_pick_reward(
            ledger, tips[frame], geometry, picked_this_frame=bool(events),
            press_states_ok=expected_press_predicate(states, note),
        )
        lo = max(frame - 1, 0)
        hi = min(frame + 1, score.total_frames - 1, len(tips) - 1)
        v = (tips[hi] - tips[lo]) / ((hi - lo) * dt) if hi > lo else np.zeros(3)
        a = np.zeros(3)
        if 0 < frame < len(tips) - 1:
            a = (tips[frame + 1] - 2 * tips[frame] + tips[frame - 1]) / dt**2
        lines.append(json.dumps({
            "frame": frame,
            "note": note_idx,
            "left_per_string": [round(float(r), 9) for r in left.per_string],
            "left_correct": left.correct,
            "left_energy": round(float(left.energy), 9),
            "left_totals": [round(float(r), 9) for r in left.objective_totals],
            "right_pick": round(float(pick), 9),
            "right_branch": branch,
            "right_energy_pick": round(float(pick_energy_reward(v, a)), 9),
        }))
        pose_prev = pose
    return "\n".join(lines) + "\n"


def handle_score(
    tab_source: str,
    trajectory_text: str,
    rewards: bool = False,
) -> dict:
    """Score a recorded trajectory against a tab."""
    score = parse_tab(tab_source)
    joints, tips = parse_trajectory_jsonl(trajectory_text)
    session = replay_session(score, joints, tips)
    report = aggregate(evaluate_ledgers(session.ledgers))
    out = json.loads(report.to_json())
    if rewards:
        out["reward_trace_jsonl"] = reward_trace_jsonl(score, joints, tips)
    return out


# ---------------------------------------------------------------------------
# Network commands


def handle_check_sync_init(
    seed: int = 0,
    pairs: int = 32,
    latent: int = 64,
    hidden: int = 64,
) -> dict:
    """Verify joint forwards equal independent forwards at initialization."""
    torch.manual_seed(seed)
    left = PolicyNet(LEFT_GOAL_DIM, latent_dim=latent, hidden=hidden)
    right = PolicyNet(RIGHT_GOAL_DIM, latent_dim=latent, hidden=hidden)
    sync = Synchronizer(left, right, hidden=hidden)
    return check_sync_init(left, right, sync, seed=seed, pairs=pairs)


def check_sync_init(
    left: PolicyNet,
    right: PolicyNet,
    sync: Synchronizer,
    seed: int = 0,
    pairs: int = 32,
) -> dict:
    gen = torch.Generator().manual_seed(seed)
    max_dev = 0.0
    with torch.no_grad():
        for _ in range(pairs):
            lp = torch.randn(left.pose_dim, generator=gen)
            lg = torch.randn(left.goal_dim, generator=gen)
            rp = torch.randn(right.pose_dim, generator=gen)
            rg = torch.randn(right.goal_dim, generator=gen)
            solo_l, _, _ = policy_forward(left, lp, lg)
            solo_r, _, _ = policy_forward(right, rp, rg)
            joint_l, joint_r, _ = joint_forward(left, right, sync,
                                                (lp, lg), (rp, rg))
            dev = max(
                float((solo_l.mean - joint_l.mean).abs().max()),
                float((solo_r.mean - joint_r.mean).abs().max()),
            )
            max_dev = max(max_dev, dev)
    result = {"pairs": pairs, "max_deviation": max_dev, "passed": max_dev == 0.0}
    if not result["passed"]:
        raise CheckFailure(
            f"joint and independent outputs differ by up to {max_dev:.3e}",
            detail=result,
        )
    return result


def toy_training_config(**overrides) -> LearnerConfig:
    """Desk-scale learner settings for the toy environments.

    The full-scale step sizes are far too small for the tiny toy
    networks, so the toy runs use larger ones by default.
    """
    settings = {
        "workers": 4,
        "replay_size": 512,
        "batch_size": 128,
        "epochs": 3,
        "policy_lr": 1e-3,
        "critic_lr": 3e-3,
    }
    settings.update(overrides)
    return LearnerConfig(**settings)


# The seeded toy run trains on notes long enough to travel *and* hold
# for two thirds of the duration; the probe threshold is scaled to the
# planar point-mass effector, which settles within centimetres rather
# than the physical press tolerance.
TOY_TRAINING_NOTES = ((3, 120), (5, 90), (1, 90))
TOY_PROBE_THRESHOLD = 0.03


def probe_left_f1(
    run: TrainingRun,
    env: ToyFretEnv,
    seed: int = 0,
    touch_threshold: float = TOY_PROBE_THRESHOLD,
) -> float:
    """Note-level press F1 of the deterministic policy on a probe rollout."""
    return env.evaluate_left_f1(
        run.deterministic_policy(), seed=seed, touch_threshold=touch_threshold
    )


def handle_train_toy(
    iters: int = 200,
    seed: int = 7,
    workers: int = 4,
    mode: str = "left",
    config: LearnerConfig | None = None,
    probe_every: int = 0,
) -> dict:
    """Seeded toy-fret training; returns per-iteration metrics rows."""
    config = config or toy_training_config(
        workers=workers, replay_size=1536, batch_size=256
    )
    if mode == "joint":
        envs = [ToyDuetEnv(seed=seed + i) for i in range(config.workers)]
        probe_env = None
    else:
        envs = [ToyFretEnv(notes=TOY_TRAINING_NOTES, seed=seed + i)
                for i in range(config.workers)]
        # probing a worker env would perturb its state mid-training
        probe_env = ToyFretEnv(notes=TOY_TRAINING_NOTES, seed=seed)
    nets = toy_policy_nets(mode, seed=seed)
    run = TrainingRun(mode, envs, nets, config, seed=seed)
    initial_probe = None if mode == "joint" else probe_left_f1(run, probe_env, seed=seed)
    rows = []
    for _ in range(iters):
        metrics = run.iteration()
        if probe_every and mode != "joint" and (
                metrics["iteration"] % probe_every == 0
                or metrics["iteration"] == iters):
            metrics["probe_left_f1"] = probe_left_f1(run, probe_env, seed=seed)
        rows.append(metrics)
    first = rows[0]["mean_return"]
    last = rows[-1]["mean_return"]
    improvement = (last - first) / abs(first) if first else float("inf")
    final_probe = None if mode == "joint" else probe_left_f1(run, probe_env, seed=seed)
    return {
        "mode": mode,
        "seed": seed,
        "iterations": iters,
        "first_return": first,
        "final_return": last,
        "improvement": improvement,
        "initial_probe_f1": initial_probe,
        "final_probe_f1": final_probe,
        "rows": rows,
    }
