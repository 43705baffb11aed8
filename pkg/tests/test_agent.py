import math

import numpy as np
import pytest
import torch
import torch.nn.functional as F
from hypothesis import given
from hypothesis import strategies as st
from torch import nn

from rfdesign.agent import HybridTQCAgent, random_policy_reward
from rfdesign.agent.buffer import ReplayBuffer
from rfdesign.agent.networks import HybridActor, QuantileCritics, encode_specs, gaussian_tanh_log_prob
from rfdesign.agent.tqc import (action_log_prob, actor_loss, critic_loss, deterministic_action,
                                quantile_huber_loss, quantize_baseline, sample_action,
                                truncated_mean)
from rfdesign.environment import sample_specs
from rfdesign.oracle import OracleSimulator


def small_actor(head="gumbel", n_continuous=9, seed=0, **kw):
    torch.manual_seed(seed)
    return HybridActor(32, 1, head, n_continuous=n_continuous, **kw)


def states(n, seed=0):
    return encode_specs(sample_specs(np.random.default_rng(seed), n))


class ToyCritic(nn.Module):
    """Frozen critic: every quantile equals ``fn(order_onehot, a_c)``."""

    def __init__(self, fn, n_critics=2, n_quantiles=5):
        super().__init__()
        self.fn = fn
        self.shape = (n_critics, n_quantiles)
        self.dummy = nn.Parameter(torch.zeros(()))

    def forward(self, s, z, a_c):
        q = self.fn(z, a_c) + 0 * self.dummy
        return q[:, None, None].expand(-1, *self.shape)


# -- action sampling -----------------------------------------------------------

def test_quantize_baseline():
    assert quantize_baseline(-0.99) == 2
    assert quantize_baseline(0.0) == 5
    assert quantize_baseline(-1.0) == 2 and quantize_baseline(1.0) == 7
    np.testing.assert_array_equal(quantize_baseline(np.array([-0.2, 0.2, 0.6])), [4, 5, 6])


def test_initial_baseline_outputs_collapse_to_one_order():
    actor = small_actor("quantize")
    index, _ = deterministic_action(actor, states(1000))
    assert len(torch.unique(index)) == 1
    assert int(index[0]) + 2 == 5


def test_straight_through_forward_is_hard():
    actor = small_actor()
    act = sample_action(actor, states(256), generator=torch.Generator().manual_seed(0))
    np.testing.assert_allclose(act.z.detach().numpy(), F.one_hot(act.index, 6).numpy(), atol=1e-6)
    assert torch.equal(act.z_soft.argmax(-1), act.index)
    np.testing.assert_allclose(act.z_soft.sum(-1).detach().numpy(), 1.0, atol=1e-6)
    assert torch.all(act.a_c.abs() < 1)


def test_temperature_limit_and_sigma_limit():
    actor = small_actor(init_log_sigma=-20.0)
    with torch.no_grad():
        actor.logits.bias.copy_(torch.tensor([0.0, 0.3, -0.2, 0.5, 0.1, -0.4]))
    s = states(8)
    logits, mu, _ = actor(s)
    act = sample_action(actor, s, tau=1e-4, eps=torch.randn(8, 9), gumbel=torch.zeros(8, 6))
    assert torch.equal(act.index, logits.argmax(-1))
    np.testing.assert_allclose(act.z_soft.detach().numpy(), F.one_hot(logits.argmax(-1), 6).numpy(),
                               atol=1e-6)
    np.testing.assert_allclose(act.a_c.detach().numpy(), torch.tanh(mu).detach().numpy(), atol=1e-6)
    with pytest.raises(ValueError):
        sample_action(actor, s, tau=0.0)


def test_uniform_logits_sample_uniformly():
    actor = small_actor()
    with torch.no_grad():
        actor.logits.weight.zero_()
        actor.logits.bias.zero_()
    s = states(1).expand(100_000, -1)
    with torch.no_grad():
        act = sample_action(actor, s, generator=torch.Generator().manual_seed(1))
    freq = np.bincount(act.index.numpy(), minlength=6) / 100_000
    np.testing.assert_allclose(freq, 1 / 6, atol=0.01)


def test_log_prob_matches_recomputation():
    actor = small_actor()
    s = states(64)
    act = sample_action(actor, s, generator=torch.Generator().manual_seed(2))
    again = action_log_prob(actor, s, act.index, act.a_c)
    np.testing.assert_allclose(act.log_prob.detach().numpy(), again.detach().numpy(), rtol=1e-3,
                               atol=1e-3)


def test_log_prob_normalizes():
    """Sum over orders and a fine grid over two squashed dims integrates to one."""
    actor = small_actor(n_continuous=2, init_log_sigma=-0.5)
    s = states(1)
    m = 400
    g = (torch.arange(m, dtype=torch.float32) + 0.5) / m * 2 - 1
    a = torch.cartesian_prod(g, g)
    total = 0.0
    with torch.no_grad():
        for k in range(6):
            lp = action_log_prob(actor, s.expand(len(a), -1), torch.full((len(a),), k), a)
            total += float(lp.exp().sum()) * (2 / m) ** 2
    assert total == pytest.approx(1.0, abs=0.02)


@given(st.floats(-3, 3), st.floats(-3, 1))
def test_tanh_log_prob_single_dim(mu, log_sigma):
    u = torch.tensor([[0.3]], dtype=torch.float64)
    lp = gaussian_tanh_log_prob(u, torch.tensor([[mu]], dtype=torch.float64),
                                torch.tensor([[log_sigma]], dtype=torch.float64))
    sigma = math.exp(log_sigma)
    normal = -0.5 * ((0.3 - mu) / sigma) ** 2 - math.log(sigma) - 0.5 * math.log(2 * math.pi)
    expected = normal - math.log(1 - math.tanh(0.3) ** 2)
    assert float(lp) == pytest.approx(expected, rel=1e-9, abs=1e-9)


# -- critic and actor losses --------------------------------------------------

def test_truncated_mean():
    q = torch.tensor([[[4.0, 1.0], [3.0, 2.0]]])
    assert float(truncated_mean(q, 2)) == pytest.approx(1.5)
    assert float(truncated_mean(q, 0)) == pytest.approx(2.5)
    with pytest.raises(ValueError):
        truncated_mean(q, 4)


def test_quantile_huber_closed_form():
    # two quantiles at levels 1/4 and 3/4, point-mass target r
    q = torch.tensor([[[0.2, 0.5]]])
    r = torch.tensor([[1.0]])
    # delta = 0.8 and 0.5 (both positive, inside the Huber region)
    expected = (0.25 * 0.5 * 0.8 ** 2 + 0.75 * 0.5 * 0.5 ** 2) / 2
    assert float(quantile_huber_loss(q, r)) == pytest.approx(expected)
    # far target enters the linear branch
    r = torch.tensor([[-3.0]])
    expected = ((1 - 0.25) * (3.2 - 0.5) + (1 - 0.75) * (3.5 - 0.5)) / 2
    assert float(quantile_huber_loss(q, r)) == pytest.approx(expected)


def test_zero_weight_critics_loss():
    critics = QuantileCritics(2, 2, 16, 1)
    for net in critics.nets:
        for p in net.parameters():
            nn.init.zeros_(p)
    s, z, a = torch.zeros(3, 5), torch.zeros(3, 6), torch.zeros(3, 9)
    r = torch.tensor([0.4, 0.6, 0.8])
    # outputs are exactly zero: loss = mean over levels of tau * 0.5 * r^2
    expected = np.mean([[t * 0.5 * v ** 2 for t in (0.25, 0.75)] for v in r.tolist()])
    assert float(critic_loss(critics, s, z, a, r).detach()) == pytest.approx(expected, rel=1e-6)


def test_critic_loss_nan_raises():
    critics = QuantileCritics(2, 3, 16, 1)
    with pytest.raises(FloatingPointError, match="critic loss"):
        critic_loss(critics, torch.zeros(2, 5), torch.zeros(2, 6), torch.zeros(2, 9),
                    torch.tensor([float("nan"), 0.0]))


def test_quantiles_converge_to_constant_reward():
    q = torch.zeros(1, 2, 25, requires_grad=True)
    opt = torch.optim.Adam([q], lr=1e-2)
    r = torch.tensor([[0.7]])
    for _ in range(3000):
        loss = quantile_huber_loss(q, r)
        opt.zero_grad()
        loss.backward()
        opt.step()
    assert float((q.detach() - 0.7).abs().max()) < 1e-3


def test_critic_network_fits_constant_reward():
    torch.manual_seed(0)
    critics = QuantileCritics(2, 5, 32, 1)
    opt = torch.optim.Adam(critics.parameters(), lr=1e-2)
    s = states(128)
    z = F.one_hot(torch.arange(128) % 6, 6).float()
    a = torch.rand(128, 9) * 2 - 1
    r = torch.full((128,), 0.7)
    for _ in range(1500):
        loss = critic_loss(critics, s, z, a, r)
        opt.zero_grad()
        loss.backward()
        opt.step()
    q = critics(s, z, a).detach()
    assert float((q - 0.7).abs().max()) < 0.02


def test_quantile_heads_match_expectiles_inside_huber_region():
    """Rewards in [0, 1] never leave the quadratic Huber branch, so each head
    estimates an expectile; for U(0, 1) the level-t expectile is
    sqrt(t) / (sqrt(t) + sqrt(1 - t))."""
    torch.manual_seed(1)
    critics = QuantileCritics(2, 5, 32, 1)
    opt = torch.optim.Adam(critics.parameters(), lr=3e-3)
    s, z, a = torch.zeros(512, 5), torch.zeros(512, 6), torch.zeros(512, 9)
    gen = torch.Generator().manual_seed(0)
    for _ in range(600):
        r = torch.rand(512, generator=gen)
        loss = critic_loss(critics, s, z, a, r)
        opt.zero_grad()
        loss.backward()
        opt.step()
    q = critics(s[:1], z[:1], a[:1]).detach()[0].mean(0).numpy()
    t = np.array([0.1, 0.3, 0.5, 0.7, 0.9])
    expectiles = np.sqrt(t) / (np.sqrt(t) + np.sqrt(1 - t))
    np.testing.assert_allclose(q, expectiles, atol=0.02)


def test_actor_gradient_zero_when_q_constant_and_alpha_zero():
    actor = small_actor()
    critic = ToyCritic(lambda z, a: torch.full((len(a),), 0.3))
    loss, _ = actor_loss(actor, critic, states(32), 0.0, 2, generator=torch.Generator().manual_seed(0))
    loss.backward()
    for p in actor.parameters():
        assert p.grad is None or float(p.grad.abs().max()) == 0.0


def test_actor_gradient_matches_finite_differences():
    torch.manual_seed(0)
    actor = small_actor()
    target = torch.linspace(-0.5, 0.5, 9)
    critic = ToyCritic(lambda z, a: -((a - target) ** 2).sum(-1) + z[:, 2])
    s = states(16)
    eps = torch.randn(16, 9, generator=torch.Generator().manual_seed(1))
    gumbel = -torch.log(-torch.log(torch.rand(16, 6, generator=torch.Generator().manual_seed(2))))

    def objective(mu_bias):
        actor.mu.bias.data.copy_(mu_bias)
        act = sample_action(actor, s, 1.0, eps=eps, gumbel=gumbel)
        q = truncated_mean(critic(s, act.z, act.a_c), 2)
        return (0.05 * act.log_prob - q).mean()

    base = actor.mu.bias.detach().clone()
    bias = base.clone().requires_grad_(True)
    actor.mu.bias = nn.Parameter(bias.detach().clone())
    loss = objective(base)
    loss.backward()
    analytic = actor.mu.bias.grad.detach().clone()
    h = 1e-2
    numeric = torch.zeros(9)
    with torch.no_grad():
        for i in range(9):
            e = torch.zeros(9)
            e[i] = h
            numeric[i] = (objective(base + e) - objective(base - e)) / (2 * h)
    rel = float((analytic - numeric).norm() / numeric.norm())
    assert rel <= 1e-2


def test_categorical_gradient_reaches_logits_only_with_gumbel():
    def q(z, a):
        return z @ torch.arange(6.0)

    gumbel = small_actor("gumbel")
    loss, _ = actor_loss(gumbel, ToyCritic(q), states(64), 0.0, 2,
                         generator=torch.Generator().manual_seed(0))
    loss.backward()
    assert float(gumbel.logits.weight.grad.abs().sum()) > 0

    # in the rounding baseline Q depends on N only through the rounded order:
    # nothing flows back to the mean of the order coordinate
    base = small_actor("quantize")
    loss, _ = actor_loss(base, ToyCritic(q), states(64), 0.0, 2,
                         generator=torch.Generator().manual_seed(0))
    loss.backward()
    assert float(base.mu.weight.grad[0].abs().sum()) == 0.0
    assert float(base.mu.bias.grad[0].abs()) == 0.0


def test_entropy_tuning_reaches_target():
    """Stationary quadratic reward: the temperature settles the entropy at the target."""
    agent = HybridTQCAgent(hidden=32, n_blocks=1, actor_lr=3e-3, alpha_lr=3e-2, init_alpha=0.05,
                           target_entropy=-6.0, batch_size=256, seed=0)
    agent._init_state()
    agent.critics_ = ToyCritic(lambda z, a: -4.0 * (a ** 2).sum(-1) + z[:, 3])
    s = states(256, seed=3)
    for _ in range(2500):
        agent.update_actor(s)
    with torch.no_grad():
        lp = torch.cat([sample_action(agent.actor_, s, generator=torch.Generator().manual_seed(i)).log_prob
                        for i in range(16)])
    assert float(-lp.mean()) == pytest.approx(-6.0, abs=0.5)


# -- buffer -------------------------------------------------------------------

def test_replay_buffer_fifo_and_sampling():
    buf = ReplayBuffer(5, seed=0)
    for i in range(7):
        buf.add(np.full((1, 5), i), [i % 6], np.full((1, 9), i), [float(i)])
    assert len(buf) == 5
    assert sorted(buf.rewards.tolist()) == [2, 3, 4, 5, 6]
    _, _, _, r = buf.sample(5)
    assert sorted(r.tolist()) == [2, 3, 4, 5, 6]
    _, _, _, r = buf.sample(100)
    assert len(r) == 5
    with pytest.raises(ValueError):
        ReplayBuffer(0)


# -- training loop ------------------------------------------------------------

def quick_agent(**kw):
    params = dict(hidden=32, n_blocks=1, total_samples=2048, env_batch=64, learning_starts=512,
                  batch_size=128, eval_every=1024, n_eval_specs=32, updates_per_batch=2, seed=3)
    params.update(kw)
    return HybridTQCAgent(**params)


def test_fixed_seed_identical_learning_curve():
    sim = OracleSimulator()
    a = quick_agent().fit(sim)
    b = quick_agent().fit(sim)
    assert a.learning_curve_ == b.learning_curve_
    assert len(a.learning_curve_) == 2


def test_training_beats_random_policy():
    sim = OracleSimulator()
    agent = quick_agent(total_samples=6144, hidden=64).fit(sim)
    base = random_policy_reward(sim, agent.eval_specs_, seed=0)
    assert agent.learning_curve_[-1]["eval_reward"] > base


def test_checkpoint_and_curve(tmp_path):
    sim = OracleSimulator()
    agent = quick_agent().fit(sim)
    path = agent.save(tmp_path / "policy.bin")
    back = HybridTQCAgent.load(path)
    specs = sample_specs(np.random.default_rng(0), 4)
    np.testing.assert_array_equal(back.act(specs), agent.act(specs))
    t1, _, _ = agent.sample_candidates(specs[0], 20, seed=5)
    t2, _, _ = back.sample_candidates(specs[0], 20, seed=5)
    np.testing.assert_array_equal(t1, t2)
    csv = agent.write_learning_curve(tmp_path / "curve.csv").read_text().splitlines()
    assert csv[0] == "step,eval_reward,entropy,alpha"
    assert len(csv) == 1 + len(agent.learning_curve_)


def test_candidates_prefix_consistent():
    agent = quick_agent()
    agent._init_state()
    spec = sample_specs(np.random.default_rng(0), 1)[0]
    big, _, _ = agent.sample_candidates(spec, 50, seed=9)
    small, _, _ = agent.sample_candidates(spec, 10, seed=9)
    np.testing.assert_array_equal(big[:10], small)
    with pytest.raises(ValueError):
        agent.sample_candidates(spec, 0)


def test_divergence_reported():
    class Dead:
        def simulate(self, templates):
            out = np.zeros((len(templates), 168))
            out[:, :28] = 1.0  # total reflection: no passband
            return out

    agent = quick_agent(total_samples=4096, eval_every=512, learning_starts=512,
                        divergence_reward=0.99)
    with pytest.warns(RuntimeWarning, match="diverged"):
        agent.fit(Dead())
    assert agent.diverged_
    assert agent.samples_seen_ < 4096


def test_unfitted_agent_raises():
    from sklearn.exceptions import NotFittedError
    with pytest.raises(NotFittedError):
        HybridTQCAgent().act(np.zeros((1, 5)) + [33, 0.1, -3, -20, -20])


def test_order_visits_counted():
    agent = quick_agent(total_samples=1024, learning_starts=10 ** 9).fit(OracleSimulator())
    assert agent.order_counts_.sum() == 1024
    assert agent.orders_visited() == 6
