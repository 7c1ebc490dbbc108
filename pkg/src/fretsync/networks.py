"""Policy, critic and synchronizer network scaffolds (CPU, deterministic).

A per-hand policy encodes the recent pose history with a GRU and the goal
state with a two-layer perceptron; the two encodings are summed into a
256-value latent that an action head decodes into a diagonal Gaussian over
the 27 joint coordinates. A synchronizer owns copies of both policies'
encoders, concatenates their outputs and emits latent offsets through
zero-initialized heads, so at initialization it changes nothing about the
individual policies. Critics share the encoder architecture but end in
multiple normalized value heads whose statistics can be updated without
changing the un-normalized predictions.
"""

from __future__ import annotations

import copy
import math

import numpy as np
import torch
from torch import nn

from .hand import NUM_DOF

POSE_OBS_DIM = 2 * 16 * 13       # two frames x 16 links x (pos, quat, lin vel, ang vel)
LEFT_GOAL_DIM = 5 * 7            # five upcoming notes x (6 fret codes + timer)
RIGHT_GOAL_DIM = 41              # five upcoming notes x (6 flags + timer) + wrong flags
ACTION_DIM = NUM_DOF
LATENT_DIM = 256

# Value-head counts per training mode: six goal + two imitation channels on
# the left, two equally weighted channels on the right, and the union plus
# the right goal channel for joint synchronization.
CRITIC_HEADS = {"left": 8, "right": 2, "joint": 9}

CHECKPOINT_VERSION = 1


class NetworkError(ValueError):
    pass


def _check_last_dim(name: str, tensor: torch.Tensor, dim: int) -> None:
    if tensor.shape[-1] != dim:
        raise NetworkError(
            f"{name} has trailing dimension {tensor.shape[-1]}, expected {dim}"
        )


def _mlp(in_dim: int, hidden: int, out_dim: int) -> nn.Sequential:
    return nn.Sequential(nn.Linear(in_dim, hidden), nn.Tanh(), nn.Linear(hidden, out_dim))


class GaussianAction:
    """Diagonal Gaussian over joint coordinates."""

    def __init__(self, mean: torch.Tensor, log_std: torch.Tensor):
        self.mean = mean
        self.log_std = log_std

    @property
    def std(self) -> torch.Tensor:
        return self.log_std.exp()

    def log_prob(self, action: torch.Tensor) -> torch.Tensor:
        var = self.std ** 2
        term = -((action - self.mean) ** 2) / (2.0 * var) - self.log_std
        return (term - 0.5 * math.log(2.0 * math.pi)).sum(dim=-1)

    def sample(self, generator: torch.Generator | None = None) -> torch.Tensor:
        noise = torch.randn(self.mean.shape, generator=generator)
        return self.mean + noise * self.std

    def entropy(self) -> torch.Tensor:
        return (self.log_std + 0.5 * (1.0 + math.log(2.0 * math.pi))).sum(dim=-1)


class PolicyNet(nn.Module):
    """Single-hand policy: GRU pose encoder + MLP goal encoder -> latent -> action."""

    def __init__(
        self,
        goal_dim: int,
        pose_dim: int = POSE_OBS_DIM,
        latent_dim: int = LATENT_DIM,
        action_dim: int = ACTION_DIM,
        hidden: int = 256,
    ):
        super().__init__()
        self.pose_dim = pose_dim
        self.goal_dim = goal_dim
        self.latent_dim = latent_dim
        self.action_dim = action_dim
        self.pose_encoder = nn.GRU(pose_dim, latent_dim, batch_first=True)
        self.goal_encoder = _mlp(goal_dim, hidden, latent_dim)
        self.action_head = _mlp(latent_dim, hidden, action_dim)
        self.log_std = nn.Parameter(torch.full((action_dim,), math.log(0.1)))

    def initial_state(self, batch: int = 1) -> torch.Tensor:
        dtype = next(self.parameters()).dtype
        return torch.zeros(1, batch, self.latent_dim, dtype=dtype)

    def encode(
        self,
        pose_obs: torch.Tensor,
        goal: torch.Tensor,
        state: torch.Tensor | None = None,
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """(latent z, new recurrent state) for one step per batch row."""
        _check_last_dim("pose observation", pose_obs, self.pose_dim)
        _check_last_dim("goal state", goal, self.goal_dim)
        squeeze = pose_obs.dim() == 1
        if squeeze:
            pose_obs = pose_obs.unsqueeze(0)
            goal = goal.unsqueeze(0)
        if state is None:
            state = self.initial_state(pose_obs.shape[0])
        out, new_state = self.pose_encoder(pose_obs.unsqueeze(1), state)
        z = out[:, -1, :] + self.goal_encoder(goal)
        if squeeze:
            z = z.squeeze(0)
        return z, new_state

    def decode(self, z: torch.Tensor) -> GaussianAction:
        mean = self.action_head(z)
        return GaussianAction(mean, self.log_std.expand_as(mean))


def policy_forward(
    net: PolicyNet,
    pose_obs: torch.Tensor,
    goal: torch.Tensor,
    state: torch.Tensor | None = None,
) -> tuple[GaussianAction, torch.Tensor, torch.Tensor]:
    """(action distribution, new recurrent state, latent z)."""
    z, new_state = net.encode(pose_obs, goal, state)
    return net.decode(z), new_state, z


class Synchronizer(nn.Module):
    """Latent-offset network over both hands' observations.

    The state encoders start as parameter copies of the two policies'
    encoders; the output heads start at exactly zero, so a fresh
    synchronizer leaves both policies' latents untouched.
    """

    def __init__(self, left: PolicyNet, right: PolicyNet, hidden: int = 256):
        super().__init__()
        if left.latent_dim != right.latent_dim:
            raise NetworkError("policies must share a latent dimension")
        self.latent_dim = left.latent_dim
        self.left_pose_encoder = copy.deepcopy(left.pose_encoder)
        self.left_goal_encoder = copy.deepcopy(left.goal_encoder)
        self.right_pose_encoder = copy.deepcopy(right.pose_encoder)
        self.right_goal_encoder = copy.deepcopy(right.goal_encoder)
        self._dims = (left.pose_dim, left.goal_dim, right.pose_dim, right.goal_dim)
        self.trunk = nn.Sequential(
            nn.Linear(2 * self.latent_dim, hidden), nn.Tanh(),
            nn.Linear(hidden, hidden), nn.Tanh(),
        )
        self.left_head = nn.Linear(hidden, self.latent_dim)
        self.right_head = nn.Linear(hidden, self.latent_dim)
        for head in (self.left_head, self.right_head):
            nn.init.zeros_(head.weight)
            nn.init.zeros_(head.bias)

    def initial_state(self, batch: int = 1) -> tuple[torch.Tensor, torch.Tensor]:
        dtype = next(self.parameters()).dtype
        z = torch.zeros(1, batch, self.latent_dim, dtype=dtype)
        return z, z.clone()

    def _encode_side(self, side: str, pose_obs, goal, state):
        pose_enc = getattr(self, f"{side}_pose_encoder")
        goal_enc = getattr(self, f"{side}_goal_encoder")
        out, new_state = pose_enc(pose_obs.unsqueeze(1), state)
        return out[:, -1, :] + goal_enc(goal), new_state


def synchronize(
    sync: Synchronizer,
    left_obs: tuple[torch.Tensor, torch.Tensor],
    right_obs: tuple[torch.Tensor, torch.Tensor],
    states: tuple[torch.Tensor, torch.Tensor] | None = None,
) -> tuple[torch.Tensor, torch.Tensor, tuple[torch.Tensor, torch.Tensor]]:
    """(Δz_left, Δz_right, new recurrent states) for one step.

    Each observation is a (pose history, goal state) pair for its hand.
    """
    (lp, lg), (rp, rg) = left_obs, right_obs
    pd_l, gd_l, pd_r, gd_r = sync._dims
    _check_last_dim("left pose observation", lp, pd_l)
    _check_last_dim("left goal state", lg, gd_l)
    _check_last_dim("right pose observation", rp, pd_r)
    _check_last_dim("right goal state", rg, gd_r)
    squeeze = lp.dim() == 1
    if squeeze:
        lp, lg, rp, rg = (t.unsqueeze(0) for t in (lp, lg, rp, rg))
    if states is None:
        states = sync.initial_state(lp.shape[0])
    e_left, s_left = sync._encode_side("left", lp, lg, states[0])
    e_right, s_right = sync._encode_side("right", rp, rg, states[1])
    h = sync.trunk(torch.cat([e_left, e_right], dim=-1))
    dz_left, dz_right = sync.left_head(h), sync.right_head(h)
    if squeeze:
        dz_left, dz_right = dz_left.squeeze(0), dz_right.squeeze(0)
    return dz_left, dz_right, (s_left, s_right)


def lock_policies(*nets: nn.Module) -> None:
    """Freeze pre-trained policy parameters; only the synchronizer trains."""
    for net in nets:
        for p in net.parameters():
            p.requires_grad_(False)


def joint_forward(
    left: PolicyNet,
    right: PolicyNet,
    sync: Synchronizer,
    left_obs: tuple[torch.Tensor, torch.Tensor],
    right_obs: tuple[torch.Tensor, torch.Tensor],
    states: dict | None = None,
) -> tuple[GaussianAction, GaussianAction, dict]:
    """Two action distributions from synchronizer-offset latents.

    ``states`` holds the recurrent states under keys ``left``, ``right``
    and ``sync``; a fresh dict is accepted and returned filled in.
    """
    states = dict(states or {})
    z_left, states["left"] = left.encode(*left_obs, states.get("left"))
    z_right, states["right"] = right.encode(*right_obs, states.get("right"))
    dz_left, dz_right, states["sync"] = synchronize(
        sync, left_obs, right_obs, states.get("sync")
    )
    return left.decode(z_left + dz_left), right.decode(z_right + dz_right), states


class PopArtHead(nn.Module):
    """Normalized value heads with statistics updates that preserve outputs.

    The linear layer predicts normalized values; ``denormalize`` maps back
    to the reward scale. ``update_stats`` folds new target statistics into
    (mu, sigma) and rescales the layer so the un-normalized predictions on
    any input are unchanged.
    """

    def __init__(self, in_dim: int, heads: int, beta: float = 3e-4):
        super().__init__()
        self.linear = nn.Linear(in_dim, heads)
        self.beta = beta
        self.register_buffer("mu", torch.zeros(heads))
        self.register_buffer("nu", torch.ones(heads))   # running second moment
        self.register_buffer("sigma", torch.ones(heads))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.linear(x)

    def denormalize(self, normalized: torch.Tensor) -> torch.Tensor:
        return normalized * self.sigma + self.mu

    def normalize(self, values: torch.Tensor) -> torch.Tensor:
        return (values - self.mu) / self.sigma

    @torch.no_grad()
    def update_stats(self, targets: torch.Tensor) -> None:
        """Fold a batch of per-head targets (N, heads) into the statistics."""
        if targets.dim() != 2 or targets.shape[1] != self.mu.shape[0]:
            raise NetworkError(
                f"targets must be (N, {self.mu.shape[0]}), got {tuple(targets.shape)}"
            )
        old_mu, old_sigma = self.mu.clone(), self.sigma.clone()
        rate = 1.0 - (1.0 - self.beta) ** targets.shape[0]
        self.mu.mul_(1.0 - rate).add_(rate * targets.mean(dim=0))
        self.nu.mul_(1.0 - rate).add_(rate * (targets ** 2).mean(dim=0))
        self.sigma.copy_((self.nu - self.mu ** 2).clamp(min=1e-8).sqrt())
        scale = old_sigma / self.sigma
        self.linear.weight.mul_(scale.unsqueeze(1))
        self.linear.bias.mul_(scale).add_((old_mu - self.mu) / self.sigma)


class CriticNet(nn.Module):
    """Multi-head value network with the policy encoder architecture."""

    def __init__(
        self,
        goal_dim: int,
        heads: int,
        pose_dim: int = POSE_OBS_DIM,
        latent_dim: int = LATENT_DIM,
        hidden: int = 256,
    ):
        super().__init__()
        self.pose_dim = pose_dim
        self.goal_dim = goal_dim
        self.latent_dim = latent_dim
        self.heads = heads
        self.pose_encoder = nn.GRU(pose_dim, latent_dim, batch_first=True)
        self.goal_encoder = _mlp(goal_dim, hidden, latent_dim)
        self.trunk = nn.Sequential(nn.Linear(latent_dim, hidden), nn.Tanh())
        self.head = PopArtHead(hidden, heads)

    def initial_state(self, batch: int = 1) -> torch.Tensor:
        dtype = next(self.parameters()).dtype
        return torch.zeros(1, batch, self.latent_dim, dtype=dtype)

    def forward(
        self,
        pose_obs: torch.Tensor,
        goal: torch.Tensor,
        state: torch.Tensor | None = None,
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """(un-normalized per-head values, new recurrent state)."""
        _check_last_dim("pose observation", pose_obs, self.pose_dim)
        _check_last_dim("goal state", goal, self.goal_dim)
        squeeze = pose_obs.dim() == 1
        if squeeze:
            pose_obs = pose_obs.unsqueeze(0)
            goal = goal.unsqueeze(0)
        if state is None:
            state = self.initial_state(pose_obs.shape[0])
        out, new_state = self.pose_encoder(pose_obs.unsqueeze(1), state)
        h = self.trunk(out[:, -1, :] + self.goal_encoder(goal))
        values = self.head.denormalize(self.head(h))
        if squeeze:
            values = values.squeeze(0)
        return values, new_state


def parameter_checksums(net: nn.Module) -> dict[str, float]:
    """Name -> float64 sum of each parameter tensor, for lock verification."""
    return {
        name: float(p.detach().double().sum())
        for name, p in net.named_parameters()
    }


def save_checkpoint(path, nets: dict[str, nn.Module]) -> None:
    """Name-indexed portable container: one array per tensor, versioned."""
    arrays = {"__version__": np.array(CHECKPOINT_VERSION)}
    for net_name, net in nets.items():
        state = net.state_dict()
        for tensor_name, tensor in state.items():
            arrays[f"{net_name}/{tensor_name}"] = tensor.detach().cpu().numpy()
    np.savez(path, **arrays)


def load_checkpoint(path, nets: dict[str, nn.Module]) -> None:
    with np.load(path) as data:
        version = int(data["__version__"])
        if version != CHECKPOINT_VERSION:
            raise NetworkError(f"unsupported checkpoint version {version}")
        for net_name, net in nets.items():
            state = {}
            prefix = f"{net_name}/"
            for key in data.files:
                if key.startswith(prefix):
                    state[key[len(prefix):]] = torch.from_numpy(data[key])
            missing = set(net.state_dict()) - set(state)
            if missing:
                raise NetworkError(
                    f"checkpoint missing tensors for '{net_name}': {sorted(missing)}"
                )
            net.load_state_dict(state)
