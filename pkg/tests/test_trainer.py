import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from edgesched.env import EnvConfig
from edgesched.nn import DTYPE
from edgesched.policy import gaussian_entropy, squash_log_jacobian
from edgesched.trainer import ReplayBuffer, SACTrainer, TrainConfig

SMALL = EnvConfig(n_servers=2, queue_window=2)


def small_trainer(**kw):
    base = dict(hidden=32, batch_size=16, T=4)
    base.update(kw)
    return SACTrainer(SMALL, TrainConfig(**base), seed=0)


def batch_of(tr, n=8, reward=0.0, seed=0, terminal=0.0):
    gen = torch.Generator().manual_seed(seed)
    shape = SMALL.state_shape
    return {
        "state": torch.rand((n, *shape), generator=gen, dtype=DTYPE),
        "action": torch.rand((n, SMALL.action_dim), generator=gen, dtype=DTYPE),
        "next_state": torch.rand((n, *shape), generator=gen, dtype=DTYPE),
        "reward": torch.full((n,), float(reward), dtype=DTYPE),
        "terminal": torch.full((n,), float(terminal), dtype=DTYPE),
    }


def params(module):
    return [p.detach().clone() for p in module.parameters()]


# -- config / buffer ---------------------------------------------------------------


def test_train_config_defaults_and_errors():
    c = TrainConfig()
    assert (c.gamma, c.tau, c.alpha, c.batch_size) == (0.95, 0.005, 0.05, 512)
    with pytest.raises(ValueError):
        TrainConfig(tau=0)
    with pytest.raises(ValueError):
        TrainConfig(gamma=1.0)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)


def test_buffer_evicts_oldest_first():
    buf = ReplayBuffer(3, (1, 1), 1)
    for i in range(5):
        buf.add(np.full((1, 1), i), [i], np.full((1, 1), i), float(i))
    assert len(buf) == 3 and buf.inserted == 5
    assert sorted(buf.rewards[:3]) == [2.0, 3.0, 4.0]


@settings(max_examples=30, deadline=None)
@given(capacity=st.integers(1, 40), n=st.integers(0, 120))
def test_buffer_never_exceeds_capacity(capacity, n):
    buf = ReplayBuffer(capacity, (1, 2), 1)
    for i in range(n):
        buf.add(np.zeros((1, 2)), [0.5], np.zeros((1, 2)), float(i))
    assert len(buf) == min(n, capacity)
    if n:
        kept = sorted(buf.rewards[:len(buf)])
        assert kept == [float(i) for i in range(max(0, n - capacity), n)]
        sample = buf.sample(8, np.random.default_rng(0))
        assert sample["state"].shape[0] == min(8, len(buf))


def test_empty_buffer_cannot_sample():
    with pytest.raises(ValueError):
        ReplayBuffer(4, (1, 1), 1).sample(2, np.random.default_rng(0))
    with pytest.raises(ValueError):
        ReplayBuffer(0, (1, 1), 1)


# -- critic -------------------------------------------------------------------------


def test_critic_min_is_elementwise_minimum():
    tr = small_trainer()
    b = batch_of(tr)
    q = torch.minimum(tr.q1(b["state"], b["action"]), tr.q2(b["state"], b["action"]))
    torch.testing.assert_close(tr.critic_min(b["state"], b["action"]), q)


def test_zero_discount_target_is_reward():
    tr = small_trainer(gamma=0.0)
    b = batch_of(tr, reward=1.0)
    torch.testing.assert_close(tr.critic_target(b), torch.ones(8, dtype=DTYPE))


def test_zero_critic_first_loss_is_one():
    tr = small_trainer(gamma=0.0)
    with torch.no_grad():
        for q in (tr.q1, tr.q2):
            for p in q.parameters():
                p.zero_()
    l1, l2 = tr.critic_update(batch_of(tr, reward=1.0))
    assert l1 == pytest.approx(1.0) and l2 == pytest.approx(1.0)


def test_terminal_transitions_drop_bootstrap():
    tr = small_trainer(gamma=0.9)
    b = batch_of(tr, reward=0.5, terminal=1.0)
    torch.testing.assert_close(tr.critic_target(b), torch.full((8,), 0.5, dtype=DTYPE))


def test_critic_loss_decreases_on_fixed_batch():
    tr = small_trainer(gamma=0.0, lr_critic=1e-4, weight_decay=0.0)
    b = batch_of(tr, n=1, reward=2.0)
    b = {k: v.expand(16, *v.shape[1:]).clone() for k, v in b.items()}
    losses = [tr.critic_update(b) for _ in range(100)]
    for q in (0, 1):
        seq = [l[q] for l in losses]
        assert all(b_ <= a + 1e-12 for a, b_ in zip(seq, seq[1:]))
        assert seq[-1] < seq[0]


def test_empty_batch_is_an_error():
    tr = small_trainer()
    with pytest.raises(ValueError):
        tr.critic_update(batch_of(tr, n=0))


def test_updates_leave_targets_bitwise_untouched():
    tr = small_trainer()
    before = params(tr.q1_target) + params(tr.q2_target)
    b = batch_of(tr, reward=0.3)
    tr.actor_update(b)
    tr.critic_update(b)
    after = params(tr.q1_target) + params(tr.q2_target)
    assert all(torch.equal(x, y) for x, y in zip(before, after))
    assert all(not p.requires_grad for p in tr.q1_target.parameters())


# -- soft update ---------------------------------------------------------------------


def test_full_soft_update_copies():
    tr = small_trainer()
    tr.critic_update(batch_of(tr, reward=1.0))
    tr.soft_update(1.0)
    for live, target in ((tr.q1, tr.q1_target), (tr.q2, tr.q2_target)):
        assert all(torch.equal(p, t) for p, t in zip(live.parameters(), target.parameters()))


def test_soft_update_weight():
    tr = small_trainer()
    with torch.no_grad():
        for p in tr.q1.parameters():
            p.fill_(1.0)
        for p in tr.q1_target.parameters():
            p.zero_()
    tr.soft_update()
    for p in tr.q1_target.parameters():
        assert torch.allclose(p, torch.full_like(p, 0.005))


@settings(max_examples=20, deadline=None)
@given(tau=st.floats(1e-3, 1.0))
def test_soft_update_is_convex(tau):
    tr = small_trainer()
    tr.critic_update(batch_of(tr, reward=1.0))
    old = params(tr.q1_target)
    tr.soft_update(tau)
    for p, o, t in zip(tr.q1.parameters(), old, tr.q1_target.parameters()):
        lo, hi = torch.minimum(p, o), torch.maximum(p, o)
        assert torch.all(t >= lo - 1e-15) and torch.all(t <= hi + 1e-15)


def test_repeated_soft_updates_converge_geometrically():
    tr = small_trainer()
    tr.critic_update(batch_of(tr, reward=1.0))
    gap0 = max((p - t).abs().max().item() for p, t in zip(tr.q1.parameters(), tr.q1_target.parameters()))
    for _ in range(100):
        tr.soft_update(0.1)
    gap = max((p - t).abs().max().item() for p, t in zip(tr.q1.parameters(), tr.q1_target.parameters()))
    assert gap == pytest.approx(gap0 * 0.9 ** 100, rel=1e-6, abs=1e-15)


# -- actor ---------------------------------------------------------------------------


class ConstantQ(torch.nn.Module):
    def __init__(self, value=0.0):
        super().__init__()
        self.value = value

    def forward(self, state, action):
        return torch.full(action.shape[:-1], self.value, dtype=action.dtype) + 0 * action.sum(-1)


class BanditQ(torch.nn.Module):
    def __init__(self, optimum):
        super().__init__()
        self.optimum = optimum

    def forward(self, state, action):
        return -((action - self.optimum) ** 2).sum(-1)


def test_zero_alpha_ascends_critic_only():
    tr = small_trainer(alpha=0.0)
    b = batch_of(tr)
    tr.generator.manual_seed(5)
    tr.actor.zero_grad()
    tr.actor_loss(b["state"]).backward()
    g1 = [p.grad.clone() for p in tr.actor.parameters()]
    tr.generator.manual_seed(5)
    tr.actor.zero_grad()
    action, _, _ = tr.actor(b["state"], tr.generator)
    (-tr.critic_min(b["state"], action).mean()).backward()
    g2 = [p.grad.clone() for p in tr.actor.parameters()]
    for a, c in zip(g1, g2):
        torch.testing.assert_close(a, c)


def test_constant_critic_raises_entropy():
    tr = small_trainer(alpha=1.0, lr_actor=1e-3)
    tr.q1, tr.q2 = ConstantQ(3.0), ConstantQ(3.0)
    b = batch_of(tr)

    def entropy():
        with torch.no_grad():
            tr.generator.manual_seed(9)
            _, _, logvar = tr.actor(b["state"], tr.generator)
        return gaussian_entropy(logvar).mean().item()

    h0 = entropy()
    for _ in range(20):
        tr.actor_update(b)
    assert entropy() > h0


def test_squash_correction_adds_the_log_jacobian():
    losses = {}
    for flag in (False, True):
        tr = small_trainer(alpha=0.5, squash_correction=flag)
        tr.q1, tr.q2 = ConstantQ(), ConstantQ()
        state = batch_of(tr)["state"]
        tr.generator.manual_seed(0)
        losses[flag] = tr.actor_loss(state).item()
        tr.generator.manual_seed(0)
        _, u, _, _ = tr.actor.sample(state, tr.generator)
    bonus = squash_log_jacobian(u).mean().item()
    assert bonus < 0
    assert losses[True] - losses[False] == pytest.approx(-0.5 * bonus, rel=1e-12)


def test_squash_log_jacobian_penalizes_saturation():
    u = torch.tensor([[0.0], [2.0], [-5.0]], dtype=DTYPE, requires_grad=True)
    squash_log_jacobian(u).sum().backward()
    assert u.grad[0, 0] == 0 and u.grad[1, 0] < 0 and u.grad[2, 0] > 0


def test_bandit_gap_shrinks():
    # default actor size and learning rate
    tr = small_trainer(alpha=0.0, hidden=256, T=10)
    optimum = torch.full((SMALL.action_dim,), 0.3, dtype=DTYPE)
    tr.q1 = tr.q2 = BanditQ(optimum)
    b = batch_of(tr, n=16)

    def gap():
        # expected gap under the sampling policy, which is what the update descends
        with torch.no_grad():
            tr.generator.manual_seed(0)
            a, _, _ = tr.actor(b["state"].repeat(16, 1, 1), tr.generator)
        return ((a - optimum) ** 2).sum(-1).mean().item()

    g0 = gap()
    for _ in range(500):
        tr.actor_update(b)
    assert gap() <= 0.5 * g0


# -- training loop -----------------------------------------------------------------------


def test_zero_episodes_returns_initial_actor():
    tr = small_trainer()
    before = params(tr.actor)
    actor = tr.train(0)
    assert actor is tr.actor and tr.history == []
    assert all(torch.equal(a, b) for a, b in zip(before, actor.parameters()))


def test_seeded_runs_log_identically():
    logs = []
    for _ in range(2):
        tr = small_trainer()
        tr.train(50)
        logs.append(tr.history)
    assert logs[0] == logs[1]
    assert len(logs[0]) == 50
    assert {"episode", "steps", "reward", "actor_loss", "critic_loss1", "critic_loss2"} <= set(logs[0][0])


def test_checkpoint_tensors_cover_all_nets():
    tr = small_trainer()
    names = tr.state_tensors()
    assert any(k.startswith("actor.") for k in names)
    assert any(k.startswith("q2_target.") for k in names)
    assert tr.checkpoint_meta()["train"]["hidden"] == 32


@pytest.mark.slow
def test_learning_curve_rises():
    tr = SACTrainer(EnvConfig(), TrainConfig(hidden=64, batch_size=128, T=5), seed=0)
    tr.train(500)
    rewards = [r["reward"] for r in tr.history]
    assert np.mean(rewards[-50:]) > np.mean(rewards[:50])
