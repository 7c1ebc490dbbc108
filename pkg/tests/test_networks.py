import math

import numpy as np
import pytest
import torch

from fretsync.networks import (
    ACTION_DIM,
    CRITIC_HEADS,
    LEFT_GOAL_DIM,
    POSE_OBS_DIM,
    RIGHT_GOAL_DIM,
    CriticNet,
    GaussianAction,
    NetworkError,
    PolicyNet,
    PopArtHead,
    Synchronizer,
    joint_forward,
    load_checkpoint,
    lock_policies,
    parameter_checksums,
    policy_forward,
    save_checkpoint,
    synchronize,
)


def small_nets(seed=0, pose_dim=8, goal_l=4, goal_r=5, latent=6, action=3):
    torch.manual_seed(seed)
    left = PolicyNet(goal_l, pose_dim=pose_dim, latent_dim=latent,
                     action_dim=action, hidden=7)
    right = PolicyNet(goal_r, pose_dim=pose_dim, latent_dim=latent,
                      action_dim=action, hidden=7)
    sync = Synchronizer(left, right, hidden=9)
    return left, right, sync


def rand_obs(net, gen):
    pose = torch.rand(net.pose_dim, generator=gen)
    goal = torch.rand(net.goal_dim, generator=gen)
    return pose, goal


class TestPolicyNet:
    def test_default_dimensions(self):
        torch.manual_seed(0)
        net = PolicyNet(LEFT_GOAL_DIM)
        dist, state, z = policy_forward(
            net, torch.zeros(POSE_OBS_DIM), torch.zeros(LEFT_GOAL_DIM)
        )
        assert dist.mean.shape == (ACTION_DIM,)
        assert z.shape == (256,)
        assert state.shape == (1, 1, 256)

    def test_zero_weights_zero_outputs(self):
        net = PolicyNet(4, pose_dim=8, latent_dim=6, action_dim=3, hidden=7)
        with torch.no_grad():
            for p in net.parameters():
                p.zero_()
        dist, _, z = policy_forward(net, torch.rand(8), torch.rand(4))
        assert torch.all(z == 0)
        assert torch.all(dist.mean == 0)

    def test_deterministic_forward(self):
        left, _, _ = small_nets(seed=3)
        gen = torch.Generator().manual_seed(5)
        pose, goal = rand_obs(left, gen)
        a = policy_forward(left, pose, goal)
        b = policy_forward(left, pose, goal)
        assert torch.equal(a[0].mean, b[0].mean)
        assert torch.equal(a[2], b[2])

    def test_goal_delta_additivity(self):
        # perturbing the goal changes z by exactly the goal-encoding delta
        left, _, _ = small_nets(seed=4)
        gen = torch.Generator().manual_seed(6)
        pose = torch.rand(left.pose_dim, generator=gen)
        g1 = torch.rand(left.goal_dim, generator=gen)
        g2 = torch.rand(left.goal_dim, generator=gen)
        _, _, z1 = policy_forward(left, pose, g1)
        _, _, z2 = policy_forward(left, pose, g2)
        delta = left.goal_encoder(g2) - left.goal_encoder(g1)
        assert torch.allclose(z2 - z1, delta, atol=1e-6)

    def test_recurrent_state_is_causal(self):
        left, _, _ = small_nets(seed=8)
        gen = torch.Generator().manual_seed(9)
        seq = [rand_obs(left, gen) for _ in range(5)]
        # run twice; outputs at step t must match regardless of later inputs
        state = None
        zs_full = []
        for pose, goal in seq:
            _, state, z = policy_forward(left, pose, goal, state)
            zs_full.append(z)
        state = None
        for t, (pose, goal) in enumerate(seq[:3]):
            _, state, z = policy_forward(left, pose, goal, state)
        assert torch.equal(z, zs_full[2])

    def test_shape_mismatch_raises(self):
        left, _, _ = small_nets()
        with pytest.raises(NetworkError):
            policy_forward(left, torch.zeros(3), torch.zeros(left.goal_dim))
        with pytest.raises(NetworkError):
            policy_forward(left, torch.zeros(left.pose_dim), torch.zeros(99))

    def test_log_std_init(self):
        left, _, _ = small_nets()
        assert torch.allclose(left.log_std, torch.full((3,), math.log(0.1)))


class TestGaussianAction:
    def test_log_prob_matches_reference(self):
        gen = torch.Generator().manual_seed(11)
        mean = torch.rand(4, generator=gen)
        log_std = torch.rand(4, generator=gen) - 1.0
        a = torch.rand(4, generator=gen)
        dist = GaussianAction(mean, log_std)
        ref = torch.distributions.Normal(mean, log_std.exp()).log_prob(a).sum()
        assert torch.allclose(dist.log_prob(a), ref, atol=1e-6)

    def test_sample_statistics(self):
        dist = GaussianAction(torch.tensor([2.0]), torch.tensor([math.log(0.5)]))
        gen = torch.Generator().manual_seed(12)
        samples = torch.stack([dist.sample(gen) for _ in range(4000)])
        assert samples.mean().item() == pytest.approx(2.0, abs=0.05)
        assert samples.std().item() == pytest.approx(0.5, abs=0.05)


class TestSynchronizer:
    def test_zero_init_offsets(self):
        left, right, sync = small_nets(seed=1)
        gen = torch.Generator().manual_seed(2)
        for _ in range(50):
            dz_l, dz_r, _ = synchronize(sync, rand_obs(left, gen), rand_obs(right, gen))
            assert torch.all(dz_l == 0)
            assert torch.all(dz_r == 0)

    def test_encoders_copied_from_policies(self):
        left, right, sync = small_nets(seed=2)
        gen = torch.Generator().manual_seed(3)
        pose, goal = rand_obs(left, gen)
        z_policy, _ = left.encode(pose, goal)
        z_sync, _ = sync._encode_side("left", pose.unsqueeze(0), goal.unsqueeze(0),
                                      sync.initial_state()[0])
        assert torch.equal(z_policy, z_sync.squeeze(0))

    def test_head_perturbation_scales_linearly(self):
        left, right, sync = small_nets(seed=5)
        gen = torch.Generator().manual_seed(7)
        obs_l, obs_r = rand_obs(left, gen), rand_obs(right, gen)
        direction = torch.rand(sync.left_head.weight.shape, generator=gen)
        norms = []
        for eps in (1e-3, 2e-3):
            with torch.no_grad():
                sync.left_head.weight.copy_(eps * direction)
            dz_l, _, _ = synchronize(sync, obs_l, obs_r)
            norms.append(dz_l.norm().item())
        assert norms[1] == pytest.approx(2.0 * norms[0], rel=1e-5)

    def test_joint_equals_independent_at_init(self):
        left, right, sync = small_nets(seed=6)
        gen = torch.Generator().manual_seed(8)
        for _ in range(1000):
            obs_l, obs_r = rand_obs(left, gen), rand_obs(right, gen)
            d_l, d_r, _ = joint_forward(left, right, sync, obs_l, obs_r)
            i_l = policy_forward(left, *obs_l)[0]
            i_r = policy_forward(right, *obs_r)[0]
            assert torch.equal(d_l.mean, i_l.mean)  # bit-for-bit
            assert torch.equal(d_r.mean, i_r.mean)

    def test_locked_policy_gradients_are_none(self):
        left, right, sync = small_nets(seed=7)
        lock_policies(left, right)
        gen = torch.Generator().manual_seed(9)
        obs_l, obs_r = rand_obs(left, gen), rand_obs(right, gen)
        with torch.no_grad():
            sync.left_head.weight.add_(0.01)
        d_l, d_r, _ = joint_forward(left, right, sync, obs_l, obs_r)
        (d_l.mean.sum() + d_r.mean.sum()).backward()
        for p in list(left.parameters()) + list(right.parameters()):
            assert p.grad is None
        assert sync.left_head.weight.grad is not None

    def test_sync_head_gradient_matches_finite_differences(self):
        left, right, sync = small_nets(seed=9, pose_dim=3, goal_l=2, goal_r=2,
                                       latent=3, action=2)
        left, right, sync = left.double(), right.double(), sync.double()
        gen = torch.Generator().manual_seed(10)
        obs_l = tuple(t.double() for t in rand_obs(left, gen))
        obs_r = tuple(t.double() for t in rand_obs(right, gen))
        with torch.no_grad():
            sync.left_head.weight.add_(
                0.1 * torch.rand(sync.left_head.weight.shape, generator=gen).double())

        def loss_value():
            d_l, d_r, _ = joint_forward(left, right, sync, obs_l, obs_r)
            return (d_l.mean ** 2).sum() + (d_r.mean ** 2).sum()

        loss_value().backward()
        grad = sync.left_head.weight.grad.clone()
        eps = 1e-4
        for idx in [(0, 0), (1, 2), (2, 1)]:
            with torch.no_grad():
                sync.left_head.weight[idx] += eps
                up = loss_value().item()
                sync.left_head.weight[idx] -= 2 * eps
                down = loss_value().item()
                sync.left_head.weight[idx] += eps
            fd = (up - down) / (2 * eps)
            assert grad[idx].item() == pytest.approx(fd, rel=1e-4, abs=1e-6)

    def test_mismatched_latents_rejected(self):
        torch.manual_seed(0)
        a = PolicyNet(4, pose_dim=8, latent_dim=6, action_dim=3, hidden=7)
        b = PolicyNet(4, pose_dim=8, latent_dim=5, action_dim=3, hidden=7)
        with pytest.raises(NetworkError):
            Synchronizer(a, b)


class TestCritic:
    def test_head_counts(self):
        assert CRITIC_HEADS == {"left": 8, "right": 2, "joint": 9}
        torch.manual_seed(0)
        net = CriticNet(LEFT_GOAL_DIM, CRITIC_HEADS["left"])
        v, _ = net(torch.zeros(POSE_OBS_DIM), torch.zeros(LEFT_GOAL_DIM))
        assert v.shape == (8,)

    def test_normalize_roundtrip(self):
        torch.manual_seed(1)
        head = PopArtHead(4, 3)
        head.update_stats(torch.rand(64, 3) * 5.0 + 2.0)
        v = torch.rand(10, 3)
        assert torch.allclose(head.denormalize(head.normalize(v)), v, atol=1e-6)

    def test_stats_update_preserves_predictions(self):
        torch.manual_seed(2)
        net = CriticNet(4, 3, pose_dim=8, latent_dim=6, hidden=7)
        pose, goal = torch.rand(8), torch.rand(4)
        before, _ = net(pose, goal)
        for _ in range(5):
            net.head.update_stats(torch.randn(32, 3) * 4.0 + 1.0)
        after, _ = net(pose, goal)
        assert torch.allclose(before, after, atol=1e-6)

    def test_stats_track_targets(self):
        head = PopArtHead(2, 1, beta=0.1)
        targets = torch.full((16, 1), 10.0)
        for _ in range(400):
            head.update_stats(targets)
        assert head.mu.item() == pytest.approx(10.0, abs=1e-3)

    def test_bad_target_shape(self):
        head = PopArtHead(2, 3)
        with pytest.raises(NetworkError):
            head.update_stats(torch.zeros(4, 5))


class TestCheckpoints:
    def test_roundtrip(self, tmp_path):
        left, right, sync = small_nets(seed=10)
        path = tmp_path / "ckpt.npz"
        save_checkpoint(path, {"left": left, "right": right, "sync": sync})
        left2, right2, sync2 = small_nets(seed=99)
        load_checkpoint(path, {"left": left2, "right": right2, "sync": sync2})
        for a, b in ((left, left2), (right, right2), (sync, sync2)):
            assert parameter_checksums(a) == parameter_checksums(b)
            gen = torch.Generator().manual_seed(1)
            pose, goal = rand_obs(left, gen) if a is left else rand_obs(a if isinstance(a, PolicyNet) else left, gen)
            if isinstance(a, PolicyNet):
                assert torch.equal(policy_forward(a, pose, goal)[2],
                                   policy_forward(b, pose, goal)[2])

    def test_missing_tensor_rejected(self, tmp_path):
        left, _, _ = small_nets(seed=11)
        path = tmp_path / "ckpt.npz"
        save_checkpoint(path, {"left": left})
        _, right, _ = small_nets(seed=12)
        with pytest.raises(NetworkError):
            load_checkpoint(path, {"right": right})

    def test_checksums_change_on_update(self):
        left, _, _ = small_nets(seed=13)
        before = parameter_checksums(left)
        with torch.no_grad():
            left.log_std.add_(0.1)
        assert parameter_checksums(left) != before
