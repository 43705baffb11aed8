"""Truncated-quantile actor-critic agent for one-step filter design."""
from __future__ import annotations

import csv
import logging
import time
import warnings
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from ..environment import evaluate_templates, sample_specs
from ..layout import N_CONTINUOUS, N_ORDERS, denormalize_batch
from ..surrogate.checkpoint import load_state, save_state
from ..validation import check_specs
from .buffer import ReplayBuffer
from .networks import HybridActor, QuantileCritics, encode_specs
from .tqc import actor_loss, critic_loss, deterministic_action, sample_action

log = logging.getLogger(__name__)

CURVE_FIELDS = ("step", "eval_reward", "entropy", "alpha")


class HybridTQCAgent(BaseEstimator):
    """Spec-conditioned design policy trained against a simulator handle.

    ``order_head="gumbel"`` uses the straight-through Gumbel-softmax order
    head; ``"quantize"`` is the naive rounding baseline kept for ablations.
    """

    def __init__(self, order_head="gumbel", hidden=256, n_blocks=2, n_critics=2, n_quantiles=25,
                 drop_per_critic=2, huber_kappa=1.0, batch_size=256, buffer_size=200_000,
                 actor_lr=3e-4, critic_lr=3e-4, alpha_lr=3e-4, temperature=1.0,
                 target_entropy=-10.0, init_alpha=0.05, init_log_sigma=-1.5,
                 total_samples=200_000, env_batch=64, updates_per_batch=4, learning_starts=2048,
                 eval_every=10_240, n_eval_specs=64, divergence_reward=0.1, seed=0, verbose=0):
        self.order_head = order_head
        self.hidden = hidden
        self.n_blocks = n_blocks
        self.n_critics = n_critics
        self.n_quantiles = n_quantiles
        self.drop_per_critic = drop_per_critic
        self.huber_kappa = huber_kappa
        self.batch_size = batch_size
        self.buffer_size = buffer_size
        self.actor_lr = actor_lr
        self.critic_lr = critic_lr
        self.alpha_lr = alpha_lr
        self.temperature = temperature
        self.target_entropy = target_entropy
        self.init_alpha = init_alpha
        self.init_log_sigma = init_log_sigma
        self.total_samples = total_samples
        self.env_batch = env_batch
        self.updates_per_batch = updates_per_batch
        self.learning_starts = learning_starts
        self.eval_every = eval_every
        self.n_eval_specs = n_eval_specs
        self.divergence_reward = divergence_reward
        self.seed = seed
        self.verbose = verbose

    # -- setup ----------------------------------------------------------------
    @property
    def drop_total(self) -> int:
        return self.drop_per_critic * self.n_critics

    def _init_state(self):
        if not 0 <= self.drop_per_critic < self.n_quantiles:
            raise ValueError("drop_per_critic must lie in [0, n_quantiles)")
        torch.manual_seed(self.seed)
        self.actor_ = HybridActor(self.hidden, self.n_blocks, self.order_head, self.init_log_sigma)
        self.critics_ = QuantileCritics(self.n_critics, self.n_quantiles, self.hidden, self.n_blocks)
        self.log_alpha_ = torch.tensor(float(np.log(self.init_alpha)), requires_grad=True)
        self.actor_opt_ = torch.optim.Adam(self.actor_.parameters(), lr=self.actor_lr)
        self.critic_opt_ = torch.optim.Adam(self.critics_.parameters(), lr=self.critic_lr)
        self.alpha_opt_ = torch.optim.Adam([self.log_alpha_], lr=self.alpha_lr)
        self.buffer_ = ReplayBuffer(self.buffer_size, seed=self.seed)
        self.gen_ = torch.Generator().manual_seed(self.seed)
        self.rng_ = np.random.default_rng(self.seed)
        self.eval_specs_ = sample_specs(np.random.default_rng([self.seed, 7919]), self.n_eval_specs)
        self.samples_seen_ = 0
        self.order_counts_ = np.zeros(N_ORDERS, dtype=np.int64)
        self.learning_curve_ = []
        self.diverged_ = False
        self.last_entropy_ = float("nan")

    @property
    def alpha(self) -> float:
        return float(self.log_alpha_.detach().exp())

    def _check_fitted(self):
        if not hasattr(self, "actor_"):
            raise NotFittedError("agent has no policy; call fit() or load()")

    # -- interaction ------------------------------------------------------
    def collect(self, simulator, n: int):
        """Roll out ``n`` one-step episodes with the current stochastic policy."""
        specs = sample_specs(self.rng_, n)
        with torch.no_grad():
            act = sample_action(self.actor_, encode_specs(specs), self.temperature, generator=self.gen_)
        index = act.index.numpy()
        a_c = act.a_c.numpy()
        templates = denormalize_batch(index, a_c)
        rewards, _, _ = evaluate_templates(specs, templates, simulator)
        self.buffer_.add(specs, index, a_c, rewards["total"])
        self.samples_seen_ += n
        self.order_counts_ += np.bincount(index, minlength=N_ORDERS)
        return rewards["total"]

    def update(self):
        """One critic step then one actor/temperature step on a replay batch."""
        s, o, a, r = self.buffer_.sample(self.batch_size)
        s = encode_specs(s)
        c_loss = self.update_critic(s, torch.as_tensor(o), torch.as_tensor(a), torch.as_tensor(r))
        a_loss = self.update_actor(s)
        return c_loss, a_loss

    def update_critic(self, s, orders, a_c, rewards) -> float:
        z = F.one_hot(orders, N_ORDERS).float()
        loss = critic_loss(self.critics_, s, z, a_c, rewards, self.huber_kappa)
        self.critic_opt_.zero_grad(set_to_none=True)
        loss.backward()
        self.critic_opt_.step()
        return float(loss.detach())

    def update_actor(self, s) -> float:
        for p in self.critics_.parameters():
            p.requires_grad_(False)
        try:
            loss, log_prob = actor_loss(self.actor_, self.critics_, s, self.log_alpha_.exp().detach(),
                                        self.drop_total, self.temperature, generator=self.gen_)
            self.actor_opt_.zero_grad(set_to_none=True)
            loss.backward()
            self.actor_opt_.step()
        finally:
            for p in self.critics_.parameters():
                p.requires_grad_(True)
        log_prob = log_prob.detach()
        alpha_loss = -(self.log_alpha_ * (log_prob + self.target_entropy)).mean()
        self.alpha_opt_.zero_grad(set_to_none=True)
        alpha_loss.backward()
        self.alpha_opt_.step()
        self.last_entropy_ = float(-log_prob.mean())
        return float(loss.detach())

    def evaluate(self, simulator, specs=None) -> float:
        """Mean reward of the deterministic policy on a frozen spec set."""
        specs = self.eval_specs_ if specs is None else check_specs(specs)
        templates = self.act(specs)
        rewards, _, _ = evaluate_templates(specs, templates, simulator)
        return float(rewards["total"].mean())

    # -- training ---------------------------------------------------------
    def fit(self, simulator, callback=None):
        """Train for ``total_samples`` environment samples.

        ``callback(agent)`` runs after every collection round; returning True
        stops training early.
        """
        self._init_state()
        return self.resume(simulator, self.total_samples, callback)

    def resume(self, simulator, n_samples: int, callback=None):
        target = self.samples_seen_ + n_samples
        next_eval = (self.samples_seen_ // self.eval_every + 1) * self.eval_every
        t0 = time.perf_counter()
        while self.samples_seen_ < target:
            self.collect(simulator, min(self.env_batch, target - self.samples_seen_))
            if self.samples_seen_ >= self.learning_starts:
                for _ in range(self.updates_per_batch):
                    self.update()
            if self.samples_seen_ >= next_eval or self.samples_seen_ >= target:
                next_eval += self.eval_every
                self._record(simulator, t0)
                if self.diverged_:
                    break
            if callback is not None and callback(self):
                break
        return self

    def _record(self, simulator, t0):
        row = {"step": self.samples_seen_, "eval_reward": self.evaluate(simulator),
               "entropy": self.last_entropy_, "alpha": self.alpha}
        self.learning_curve_.append(row)
        if self.verbose:
            log.info("samples %d eval R %.4f entropy %.2f alpha %.4f (%.0fs)", row["step"],
                     row["eval_reward"], row["entropy"], row["alpha"], time.perf_counter() - t0)
        warm = self.learning_starts + 4 * self.eval_every
        if self.samples_seen_ >= warm and row["eval_reward"] < self.divergence_reward:
            self.diverged_ = True
            warnings.warn(f"agent diverged: eval reward {row['eval_reward']:.3f} after "
                          f"{self.samples_seen_} samples", RuntimeWarning)

    # -- inference ----------------------------------------------------------
    def act(self, specs) -> np.ndarray:
        """Deterministic (mode) design for each spec as a (B, 10) template array."""
        self._check_fitted()
        specs = check_specs(specs)
        with torch.no_grad():
            index, a_c = deterministic_action(self.actor_, encode_specs(specs))
        return denormalize_batch(index.numpy(), a_c.numpy())

    def sample_candidates(self, spec, k: int, seed: int = 0):
        """Draw ``k`` stochastic designs for one spec.

        Noise streams are prefix-consistent: the first ``k`` candidates for a
        given seed are identical whatever the total budget.
        """
        self._check_fitted()
        if k < 1:
            raise ValueError("k must be >= 1")
        spec = check_specs(spec)[0]
        eps_rng, gum_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2))
        eps = torch.as_tensor(eps_rng.standard_normal((k, self.actor_.n_gauss)), dtype=torch.float32)
        gumbel = torch.as_tensor(gum_rng.gumbel(size=(k, N_ORDERS)), dtype=torch.float32)
        with torch.no_grad():
            s = encode_specs(spec[None]).expand(k, -1)
            act = sample_action(self.actor_, s, self.temperature, eps=eps, gumbel=gumbel)
        index = act.index.numpy()
        a_c = act.a_c.numpy()
        return denormalize_batch(index, a_c), index, a_c

    def orders_visited(self) -> int:
        return int(np.count_nonzero(self.order_counts_))

    # -- persistence ------------------------------------------------------
    def save(self, path) -> Path:
        self._check_fitted()
        header = {"kind": "policy", "params": self.get_params(),
                  "log_alpha": float(self.log_alpha_.detach()), "samples_seen": self.samples_seen_}
        return save_state(path, b"RFPOLICY", self.actor_.state_dict(), header)

    @classmethod
    def load(cls, path) -> "HybridTQCAgent":
        meta, state = load_state(path, b"RFPOLICY")
        agent = cls(**meta["params"])
        agent._init_state()
        agent.actor_.load_state_dict(state)
        agent.log_alpha_.data.fill_(meta["log_alpha"])
        agent.samples_seen_ = meta["samples_seen"]
        return agent

    def write_learning_curve(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=CURVE_FIELDS)
            writer.writeheader()
            for row in self.learning_curve_:
                writer.writerow({k: row[k] for k in CURVE_FIELDS})
        return path


def random_policy_reward(simulator, specs, seed: int = 0) -> float:
    """Mean reward of uniformly random actions on ``specs`` (the no-learning baseline)."""
    specs = check_specs(specs)
    rng = np.random.default_rng(seed)
    templates = denormalize_batch(rng.integers(0, N_ORDERS, len(specs)),
                                  rng.uniform(-1, 1, (len(specs), N_CONTINUOUS)))
    rewards, _, _ = evaluate_templates(specs, templates, simulator)
    return float(rewards["total"].mean())


def order_exploration(simulator, n_samples: int = 5000, seed: int = 0, **params) -> dict[str, int]:
    """Distinct filter orders visited in the first ``n_samples`` of training."""
    out = {}
    for head in ("gumbel", "quantize"):
        agent = HybridTQCAgent(order_head=head, seed=seed, total_samples=n_samples,
                               eval_every=10 ** 9, **params)
        agent.fit(simulator)
        out[head] = agent.orders_visited()
    return out


__all__ = ["HybridTQCAgent", "order_exploration", "random_policy_reward", "CURVE_FIELDS"]
