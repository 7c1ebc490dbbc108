"""Multi-objective on-policy optimization and a desk-scale toy task.

Per-objective generalized advantage estimation feeds a weighted clipped
surrogate: advantages are standardized per objective over the replay
buffer, combined with fixed objective weights, and the combined advantage
drives a single clipped policy-gradient step. Critic heads regress
normalized returns. In joint-synchronization mode only the synchronizer's
parameters receive updates; both pre-trained policies stay frozen.

The toy task is a 2-DoF planar effector over a one-string fretboard,
rewarded with the same shaping formulas as the full left hand, so the
training loop can be exercised end-to-end in minutes on a CPU.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np
import torch

from .geometry import GuitarSpec, build_geometry
from .networks import (
    CRITIC_HEADS,
    CriticNet,
    PolicyNet,
    Synchronizer,
    joint_forward,
    parameter_checksums,
    policy_forward,
)
from .rewards import left_energy_reward, pick_distance_reward, press_reward
from .tab import normalize_fret_code

PRESS_THRESHOLD = 0.006

# Weight of the single right-hand goal objective in joint-synchronization
# mode; not pinned by the training recipe, chosen so the weights sum to ~1.
JOINT_RIGHT_GOAL_WEIGHT = 0.4


class LearnerError(ValueError):
    pass


@dataclass(frozen=True)
class ObjectiveSpec:
    name: str
    weight: float
    channel: int


def objective_specs(mode: str) -> list[ObjectiveSpec]:
    """Reward-channel bindings and weights for a training mode."""
    if mode == "left":
        return [
            ObjectiveSpec(f"goal_string_{i + 1}", 0.15, i) for i in range(6)
        ] + [
            ObjectiveSpec("imitation_full", 0.05, 6),
            ObjectiveSpec("imitation_fingers", 0.05, 7),
        ]
    if mode == "right":
        return [
            ObjectiveSpec("goal_pick", 0.5, 0),
            ObjectiveSpec("goal_stability", 0.5, 1),
        ]
    if mode == "joint":
        return objective_specs("left") + [
            ObjectiveSpec("goal_right", JOINT_RIGHT_GOAL_WEIGHT, 8)
        ]
    raise LearnerError(f"unknown training mode {mode!r}")


@dataclass
class LearnerConfig:
    gamma: float = 0.95
    gae_lambda: float = 0.95
    clip_epsilon: float = 0.2
    policy_lr: float = 5e-6
    critic_lr: float = 1e-4
    workers: int = 512
    replay_size: int = 4096
    batch_size: int = 256
    epochs: int = 5
    gradient_penalty: float = 10.0   # discriminator hook, unused here

    def __post_init__(self):
        for name in ("gamma", "gae_lambda", "policy_lr", "critic_lr"):
            if getattr(self, name) <= 0:
                raise LearnerError(f"{name} must be positive")
        if not 0.0 < self.clip_epsilon < 1.0:
            raise LearnerError("clip_epsilon must lie in (0, 1)")
        for name in ("workers", "replay_size", "batch_size", "epochs"):
            if getattr(self, name) < 1:
                raise LearnerError(f"{name} must be at least 1")

    def to_document(self) -> dict:
        return asdict(self)

    @classmethod
    def from_document(cls, doc: dict) -> "LearnerConfig":
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise LearnerError(f"unknown config keys: {sorted(unknown)}")
        return cls(**doc)


def load_config(path) -> LearnerConfig:
    """Read a JSON or TOML training config document."""
    text = open(path, "rb").read()
    if str(path).endswith(".toml"):
        try:
            import tomllib
        except ImportError:
            import tomli as tomllib

        return LearnerConfig.from_document(tomllib.loads(text.decode()))
    return LearnerConfig.from_document(json.loads(text))


@dataclass
class RolloutBatch:
    """Aligned per-step arrays for one replay buffer."""

    pose_obs: np.ndarray      # (T, pose_dim)
    goals: np.ndarray         # (T, goal_dim)
    actions: np.ndarray       # (T, action_dim)
    log_probs: np.ndarray     # (T,)
    rewards: np.ndarray       # (T, K)
    values: np.ndarray        # (T, K)
    dones: np.ndarray         # (T,) episode-boundary flags
    bootstrap: np.ndarray     # (K,) value after the last step

    def __post_init__(self):
        t = len(self.pose_obs)
        for name in ("goals", "actions", "log_probs", "rewards", "values", "dones"):
            if len(getattr(self, name)) != t:
                raise LearnerError(f"{name} length differs from pose_obs ({t})")
        if self.rewards.shape != self.values.shape:
            raise LearnerError("rewards and values must have identical shapes")


def gae(
    rewards: np.ndarray,
    values: np.ndarray,
    gamma: float,
    lam: float,
    dones: np.ndarray | None = None,
    bootstrap: np.ndarray | float = 0.0,
) -> tuple[np.ndarray, np.ndarray]:
    """(advantages, returns) per objective channel, truncated at boundaries.

    Accepts (T,) or (T, K) reward/value arrays; ``dones`` marks the last
    step of each episode.
    """
    rewards = np.asarray(rewards, float)
    values = np.asarray(values, float)
    if rewards.shape != values.shape:
        raise LearnerError("rewards and values must have identical shapes")
    t = rewards.shape[0]
    if dones is None:
        dones = np.zeros(t, bool)
    dones = np.asarray(dones, bool)
    if dones.shape[0] != t:
        raise LearnerError("dones length differs from rewards")
    advantages = np.zeros_like(rewards)
    next_value = np.broadcast_to(np.asarray(bootstrap, float), rewards.shape[1:]).copy()
    next_adv = np.zeros(rewards.shape[1:])
    for i in range(t - 1, -1, -1):
        live = 0.0 if dones[i] else 1.0
        delta = rewards[i] + gamma * live * next_value - values[i]
        next_adv = delta + gamma * lam * live * next_adv
        advantages[i] = next_adv
        next_value = values[i]
    return advantages, advantages + values


def standardize_advantages(advantages: np.ndarray) -> np.ndarray:
    """Zero-mean unit-deviation per objective channel over the buffer.

    Channels without variance standardize to all-zeros rather than
    dividing by zero.
    """
    adv = np.asarray(advantages, float)
    mean = adv.mean(axis=0)
    std = adv.std(axis=0)
    out = np.zeros_like(adv)
    np.divide(adv - mean, std, out=out, where=std > 1e-12)
    return out


def combined_advantage(advantages: np.ndarray, specs: list[ObjectiveSpec]) -> np.ndarray:
    """Weighted sum of standardized per-objective advantages."""
    std = standardize_advantages(advantages)
    out = np.zeros(std.shape[0])
    for spec in specs:
        out += spec.weight * std[:, spec.channel]
    return out


def weighted_surrogate(
    new_log_probs: torch.Tensor,
    old_log_probs: torch.Tensor,
    advantages: torch.Tensor,
    clip_epsilon: float,
) -> torch.Tensor:
    """Clipped-ratio policy loss over a combined advantage (to minimize)."""
    ratio = (new_log_probs - old_log_probs).exp()
    clipped = ratio.clamp(1.0 - clip_epsilon, 1.0 + clip_epsilon)
    return -torch.min(ratio * advantages, clipped * advantages).mean()


# ---------------------------------------------------------------------------
# Toy task: planar effector over a one-string fretboard


class ToyFretEnv:
    """2-DoF point effector pressing a single string in the x-z plane.

    The action is a velocity command (m/s, clamped to ±1) integrated at
    60 Hz. Rewards reuse the fret-pressing shapers: channel 0 carries the
    real per-string value, channels 1-5 stand in for the five absent
    strings, channels 6-7 are the (zero-fed) imitation slots.
    """

    POSE_DIM = 4
    GOAL_DIM = 4
    ACTION_DIM = 2
    CHANNELS = 8
    DT = 1.0 / 60.0
    START = np.array([0.10, 0.04])

    def __init__(self, notes=((3, 60), (5, 30), (1, 30)), geometry=None, seed: int = 0):
        self.geometry = geometry or build_geometry(GuitarSpec())
        self.notes = tuple((int(f), int(n)) for f, n in notes)
        if not self.notes or any(n < 1 for _, n in self.notes):
            raise LearnerError("notes must be nonempty with positive durations")
        self.rng = np.random.default_rng(seed)
        self.reset()

    def _target(self, fret: int) -> np.ndarray:
        p = self.geometry.press_point(1, fret)
        return np.array([p[0], p[2]])

    @property
    def episode_frames(self) -> int:
        return sum(n for _, n in self.notes)

    def _observe(self) -> tuple[np.ndarray, np.ndarray]:
        fret, duration = self.notes[self.note_idx]
        remaining = duration - self.note_frame
        timer = min(remaining / 60.0, 4.0) / 4.0
        delta = self._target(fret) - self.pos
        pose = np.concatenate([self.pos, self.vel]).astype(np.float32)
        goal = np.array(
            [normalize_fret_code(fret), timer, delta[0], delta[1]], np.float32
        )
        return pose, goal

    def reset(self, seed: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        self.pos = self.START + self.rng.uniform(-0.01, 0.01, 2)
        self.vel = np.zeros(2)
        self.note_idx = 0
        self.note_frame = 0
        return self._observe()

    def frame_rewards(self) -> np.ndarray:
        fret, _ = self.notes[self.note_idx]
        d = float(np.linalg.norm(self.pos - self._target(fret)))
        correct = 1.0 if d < PRESS_THRESHOLD else 0.0
        energy = left_energy_reward([self.vel[0], self.vel[1], 0.0], [])
        rewards = np.zeros(self.CHANNELS)
        # the press shapers are flat past ~10 cm; blend in a wide tail so
        # the toy stays learnable from anywhere on the board (still 1 at d=0)
        shaped = 0.7 * press_reward(d) + 0.3 * math.exp(-8.0 * d * d)
        rewards[0] = 0.8 * shaped + 0.2 * correct - 0.05 * energy
        # the five absent strings mirror the live channel: standardization
        # re-inflates dead channels' critic noise to unit variance, which
        # would drown the one real signal under the per-channel weights
        rewards[1:6] = rewards[0]
        return rewards

    def step(self, action) -> tuple[tuple[np.ndarray, np.ndarray], np.ndarray, bool]:
        self.vel = np.clip(np.asarray(action, float)[: self.ACTION_DIM], -1.0, 1.0)
        self.pos = self.pos + self.vel * self.DT
        rewards = self.frame_rewards()
        self.note_frame += 1
        if self.note_frame >= self.notes[self.note_idx][1]:
            self.note_idx += 1
            self.note_frame = 0
        done = self.note_idx >= len(self.notes)
        if done:
            self.note_idx = len(self.notes) - 1  # keep _observe valid
        return self._observe(), rewards, done

    def run_episode(self, policy_fn, seed: int | None = None):
        """(per-frame channel rewards, per-note press distances) for a policy."""
        obs = self.reset(seed)
        rewards, distances = [], [[] for _ in self.notes]
        for _ in range(self.episode_frames):
            note_idx = self.note_idx
            obs, r, _ = self.step(policy_fn(obs))
            rewards.append(r)
            fret, _d = self.notes[note_idx]
            distances[note_idx].append(
                float(np.linalg.norm(self.pos - self._target(fret)))
            )
        return np.array(rewards), distances

    def evaluate_left_f1(
        self,
        policy_fn,
        seed: int | None = None,
        touch_threshold: float = PRESS_THRESHOLD,
    ) -> float:
        """Note-level press F1 of a deterministic rollout.

        ``touch_threshold`` is the fingertip-to-target distance counted as a
        press; the default matches the session detector's press threshold.
        """
        from .metrics import f1_score, press_run_threshold

        _, distances = self.run_episode(policy_fn, seed)
        tp = fn = 0
        for (fret, duration), ds in zip(self.notes, distances):
            thr = press_run_threshold(duration)
            best = run = 0
            for d in ds:
                run = run + 1 if d < touch_threshold else 0
                best = max(best, run)
            if best >= thr:
                tp += 1
            else:
                fn += 1
        precision = 1.0 if tp else 0.0
        recall = tp / (tp + fn)
        return f1_score(precision, recall)


class ToyDuetEnv:
    """Two planar effectors for joint-synchronization plumbing.

    The left effector presses as in :class:`ToyFretEnv`; the right one is
    shaped toward the picking point of the active string. Channels 0-7
    mirror the left layout; channel 8 carries the right goal.
    """

    CHANNELS = 9

    def __init__(self, notes=((3, 30), (5, 30)), geometry=None, seed: int = 0):
        self.left = ToyFretEnv(notes, geometry, seed)
        self.right_target = np.array([0.55, self.left.geometry.spec.string_action_height])
        self.rng = np.random.default_rng(seed + 1)
        self.reset()

    def reset(self, seed: int | None = None):
        left_obs = self.left.reset(seed)
        self.right_pos = np.array([0.55, 0.06]) + self.rng.uniform(-0.01, 0.01, 2)
        self.right_vel = np.zeros(2)
        return left_obs, self._right_observe()

    def _right_observe(self):
        delta = self.right_target - self.right_pos
        pose = np.concatenate([self.right_pos, self.right_vel]).astype(np.float32)
        goal = np.array([0.0, 0.0, delta[0], delta[1]], np.float32)
        return pose, goal

    def step(self, left_action, right_action):
        left_obs, rewards_left, done = self.left.step(left_action)
        self.right_vel = np.clip(np.asarray(right_action, float)[:2], -1.0, 1.0)
        self.right_pos = self.right_pos + self.right_vel * ToyFretEnv.DT
        d = float(np.linalg.norm(self.right_pos - self.right_target))
        rewards = np.zeros(self.CHANNELS)
        rewards[:8] = rewards_left
        rewards[8] = 5.0 * pick_distance_reward(d)
        return (left_obs, self._right_observe()), rewards, done


# ---------------------------------------------------------------------------
# Training loop


def toy_policy_nets(mode: str, seed: int = 0, latent: int = 32, hidden: int = 32) -> dict:
    """Desk-scale networks sized for the toy environments."""
    torch.manual_seed(seed)
    pose, goal, action = ToyFretEnv.POSE_DIM, ToyFretEnv.GOAL_DIM, ToyFretEnv.ACTION_DIM
    if mode in ("left", "right"):
        return {
            "policy": PolicyNet(goal, pose_dim=pose, latent_dim=latent,
                                action_dim=action, hidden=hidden),
            "critic": CriticNet(goal, CRITIC_HEADS[mode], pose_dim=pose,
                                latent_dim=latent, hidden=hidden),
        }
    if mode == "joint":
        left = PolicyNet(goal, pose_dim=pose, latent_dim=latent,
                         action_dim=action, hidden=hidden)
        right = PolicyNet(goal, pose_dim=pose, latent_dim=latent,
                          action_dim=action, hidden=hidden)
        return {
            "left": left,
            "right": right,
            "sync": Synchronizer(left, right, hidden=hidden),
            "critic": CriticNet(2 * goal, CRITIC_HEADS["joint"], pose_dim=2 * pose,
                                latent_dim=latent, hidden=hidden),
        }
    raise LearnerError(f"unknown training mode {mode!r}")


def _require(nets: dict, mode: str, keys: tuple) -> None:
    missing = [k for k in keys if k not in nets]
    if missing:
        raise LearnerError(f"mode {mode!r} requires nets {missing}")
    heads = CRITIC_HEADS[mode]
    if nets["critic"].heads != heads:
        raise LearnerError(
            f"mode {mode!r} needs a {heads}-head critic, got {nets['critic'].heads}"
        )


class TrainingRun:
    """Owns networks, optimizers and environments for one training mode."""

    def __init__(self, mode: str, envs: list, nets: dict, config: LearnerConfig,
                 seed: int = 0):
        if mode not in CRITIC_HEADS:
            raise LearnerError(f"unknown training mode {mode!r}")
        if mode == "joint":
            _require(nets, mode, ("left", "right", "sync", "critic"))
            trainable = nets["sync"].parameters()
            self._locked = [nets["left"], nets["right"]]
        else:
            _require(nets, mode, ("policy", "critic"))
            trainable = nets["policy"].parameters()
            self._locked = []
        self.mode = mode
        self.envs = envs
        self.nets = nets
        self.config = config
        self.specs = objective_specs(mode)
        self.iteration_index = 0
        self.generator = torch.Generator().manual_seed(seed)
        self.policy_opt = torch.optim.Adam(trainable, lr=config.policy_lr)
        self.critic_opt = torch.optim.Adam(nets["critic"].parameters(),
                                           lr=config.critic_lr)

    # -- acting ----------------------------------------------------------

    def _act(self, obs, states, deterministic=False):
        """(action array, log-prob, new states) for one env observation."""
        if self.mode == "joint":
            left_obs = tuple(torch.as_tensor(o) for o in obs[0])
            right_obs = tuple(torch.as_tensor(o) for o in obs[1])
            d_l, d_r, states = joint_forward(
                self.nets["left"], self.nets["right"], self.nets["sync"],
                left_obs, right_obs, states,
            )
            if deterministic:
                a_l, a_r = d_l.mean, d_r.mean
            else:
                a_l = d_l.sample(self.generator)
                a_r = d_r.sample(self.generator)
            log_prob = d_l.log_prob(a_l) + d_r.log_prob(a_r)
            action = torch.cat([a_l, a_r])
        else:
            pose, goal = (torch.as_tensor(o) for o in obs)
            dist, new_state, _ = policy_forward(self.nets["policy"], pose, goal,
                                                states)
            states = new_state
            action = dist.mean if deterministic else dist.sample(self.generator)
            log_prob = dist.log_prob(action)
        return action.detach().numpy(), float(log_prob), states

    def _flat_obs(self, obs):
        if self.mode == "joint":
            (lp, lg), (rp, rg) = obs
            return np.concatenate([lp, rp]), np.concatenate([lg, rg])
        return obs

    def _env_step(self, env, obs, action):
        if self.mode == "joint":
            return env.step(action[:2], action[2:])
        return env.step(action)

    def _log_prob_batch(self, pose, goal, actions):
        """Differentiable log-probs over a whole buffer (stateless encode)."""
        if self.mode == "joint":
            half_p = pose.shape[1] // 2
            half_g = goal.shape[1] // 2
            left_obs = (pose[:, :half_p], goal[:, :half_g])
            right_obs = (pose[:, half_p:], goal[:, half_g:])
            d_l, d_r, _ = joint_forward(
                self.nets["left"], self.nets["right"], self.nets["sync"],
                left_obs, right_obs,
            )
            half_a = actions.shape[1] // 2
            return d_l.log_prob(actions[:, :half_a]) + d_r.log_prob(actions[:, half_a:])
        dist, _, _ = policy_forward(self.nets["policy"], pose, goal)
        return dist.log_prob(actions)

    # -- rollout + update -------------------------------------------------

    def collect(self) -> RolloutBatch:
        cfg = self.config
        steps_per_env = max(1, cfg.replay_size // max(1, len(self.envs)))
        pose_rows, goal_rows, actions, log_probs = [], [], [], []
        rewards, dones = [], []
        with torch.no_grad():
            for env in self.envs:
                obs = env.reset()
                for _ in range(steps_per_env):
                    # stateless acting: the updates re-evaluate log-probs
                    # per step, so the rollout must see the same policy
                    action, log_prob, _ = self._act(obs, None)
                    next_obs, r, done = self._env_step(env, obs, action)
                    p, g = self._flat_obs(obs)
                    pose_rows.append(np.asarray(p, np.float32))
                    goal_rows.append(np.asarray(g, np.float32))
                    actions.append(np.asarray(action, np.float32))
                    log_probs.append(log_prob)
                    rewards.append(r)
                    dones.append(done)
                    obs = env.reset() if done else next_obs
            pose = np.stack(pose_rows)
            goal = np.stack(goal_rows)
            values, _ = self.nets["critic"](torch.as_tensor(pose),
                                            torch.as_tensor(goal))
        return RolloutBatch(
            pose_obs=pose,
            goals=goal,
            actions=np.stack(actions),
            log_probs=np.array(log_probs),
            rewards=np.stack(rewards),
            values=values.numpy().astype(float),
            dones=np.array(dones),
            bootstrap=np.zeros(len(self.specs)),
        )

    def iteration(self) -> dict:
        """One rollout-collect + epochs x minibatch update pass."""
        cfg = self.config
        batch = self.collect()
        advantages, returns = gae(batch.rewards, batch.values, cfg.gamma,
                                  cfg.gae_lambda, batch.dones, batch.bootstrap)
        combined = torch.as_tensor(combined_advantage(advantages, self.specs))
        pose = torch.as_tensor(batch.pose_obs)
        goal = torch.as_tensor(batch.goals)
        actions = torch.as_tensor(batch.actions)
        old_log_probs = torch.as_tensor(batch.log_probs)
        returns_t = torch.as_tensor(returns, dtype=torch.float32)
        # fold the new return statistics into the heads (output-preserving),
        # then regress in the freshly-normalized space
        self.nets["critic"].head.update_stats(returns_t)
        target = self.nets["critic"].head.normalize(returns_t)
        n = pose.shape[0]
        policy_losses, critic_losses = [], []
        for _ in range(cfg.epochs):
            order = torch.randperm(n, generator=self.generator)
            for start in range(0, n, cfg.batch_size):
                idx = order[start:start + cfg.batch_size]
                new_log_probs = self._log_prob_batch(pose[idx], goal[idx],
                                                     actions[idx])
                loss = weighted_surrogate(new_log_probs, old_log_probs[idx],
                                          combined[idx], cfg.clip_epsilon)
                self.policy_opt.zero_grad()
                loss.backward()
                self.policy_opt.step()
                policy_losses.append(float(loss.detach()))
                pred = self.nets["critic"](pose[idx], goal[idx])[0]
                critic_loss = ((self.nets["critic"].head.normalize(pred)
                                - target[idx]) ** 2).mean()
                self.critic_opt.zero_grad()
                critic_loss.backward()
                self.critic_opt.step()
                critic_losses.append(float(critic_loss.detach()))
        self.iteration_index += 1
        per_objective = {
            spec.name: float(batch.rewards[:, spec.channel].mean())
            for spec in self.specs
        }
        return {
            "iteration": self.iteration_index,
            "mode": self.mode,
            "mean_return": float(batch.rewards[:, 0].mean()),
            "per_objective_reward": per_objective,
            "policy_loss": float(np.mean(policy_losses)),
            "critic_loss": float(np.mean(critic_losses)),
        }

    def deterministic_policy(self):
        """Single-hand action function for probe evaluations."""
        if self.mode == "joint":
            raise LearnerError("probe policy is single-hand only")

        net = self.nets["policy"]

        def policy_fn(obs):
            with torch.no_grad():
                pose, goal = (torch.as_tensor(o) for o in obs)
                dist, _, _ = policy_forward(net, pose, goal)
                return dist.mean.numpy()

        return policy_fn

    def locked_checksums(self) -> dict:
        out = {}
        for i, net in enumerate(self._locked):
            out.update({f"{i}/{k}": v for k, v in parameter_checksums(net).items()})
        return out


def train_iteration(mode: str, envs: list, nets: dict, config: LearnerConfig,
                    seed: int = 0) -> dict:
    """One-shot convenience wrapper around :class:`TrainingRun`."""
    return TrainingRun(mode, envs, nets, config, seed).iteration()
