"""Hybrid action sampling and the truncated-quantile losses."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from ..layout import N_MIN, N_ORDERS, round_half_away
from .networks import HybridActor, QuantileCritics, gaussian_tanh_log_prob


def quantize_baseline(n_tilde):
    """Naive order rounding ``N = 2 + round(2.5 (n + 1))``, ties away from zero."""
    n = N_MIN + round_half_away(2.5 * (np.asarray(n_tilde, dtype=float) + 1.0))
    return np.clip(n, N_MIN, N_MIN + N_ORDERS - 1) if np.ndim(n) else int(min(max(n, 2), 7))


@dataclass
class HybridAction:
    z: torch.Tensor            # (B, 6) value forwarded to critics: hard one-hot (straight-through)
    z_soft: torch.Tensor       # (B, 6) relaxed Gumbel-softmax sample
    index: torch.Tensor        # (B,) order index 0..5 (N = 2 + index)
    a_c: torch.Tensor          # (B, 9) squashed continuous action in (-1, 1)
    log_prob: torch.Tensor     # (B,)
    n_tilde: torch.Tensor | None = None  # baseline scalar before rounding


def sample_action(actor: HybridActor, s: torch.Tensor, tau: float = 1.0,
                  eps: torch.Tensor | None = None, gumbel: torch.Tensor | None = None,
                  generator: torch.Generator | None = None) -> HybridAction:
    """Reparameterized draw from the hybrid policy.

    ``eps`` (B, n_gauss) and ``gumbel`` (B, 6) may be supplied for common
    random numbers; otherwise they are drawn from ``generator``.
    """
    if tau <= 0:
        raise ValueError("temperature must be positive")
    logits, mu, log_sigma = actor(s)
    if eps is None:
        eps = torch.randn(mu.shape, generator=generator)
    u = mu + log_sigma.exp() * eps
    a = torch.tanh(u)
    log_prob = gaussian_tanh_log_prob(u, mu, log_sigma)
    if actor.order_head == "gumbel":
        if gumbel is None:
            uni = torch.rand(logits.shape, generator=generator).clamp_(1e-10, 1 - 1e-10)
            gumbel = -torch.log(-torch.log(uni))
        z_soft = F.softmax((logits + gumbel) / tau, dim=-1)
        index = z_soft.argmax(dim=-1)
        hard = F.one_hot(index, N_ORDERS).to(z_soft.dtype)
        z = hard + z_soft - z_soft.detach()
        log_prob = log_prob + F.log_softmax(logits, dim=-1).gather(1, index[:, None])[:, 0]
        return HybridAction(z, z_soft, index, a, log_prob)
    n_tilde = a[:, 0]
    index = torch.as_tensor(quantize_baseline(n_tilde.detach().numpy()) - N_MIN, dtype=torch.long)
    hard = F.one_hot(index, N_ORDERS).to(a.dtype)
    return HybridAction(hard, hard, index, a[:, 1:], log_prob, n_tilde=n_tilde)


def deterministic_action(actor: HybridActor, s: torch.Tensor):
    """Mode of the policy: (order index, continuous action)."""
    logits, mu, _ = actor(s)
    a = torch.tanh(mu)
    if actor.order_head == "gumbel":
        return logits.argmax(dim=-1), a
    index = torch.as_tensor(quantize_baseline(a[:, 0].detach().numpy()) - N_MIN, dtype=torch.long)
    return index, a[:, 1:]


def action_log_prob(actor: HybridActor, s, index, a_c) -> torch.Tensor:
    """Log density of given hybrid actions (order index, squashed a_c) under the policy."""
    logits, mu, log_sigma = actor(s)
    u = torch.atanh(a_c.clamp(-1 + 1e-6, 1 - 1e-6))
    log_prob = gaussian_tanh_log_prob(u, mu, log_sigma)
    if logits is not None:
        log_prob = log_prob + F.log_softmax(logits, dim=-1).gather(1, index[:, None])[:, 0]
    return log_prob


def quantile_levels(m: int, dtype=torch.float32) -> torch.Tensor:
    return (torch.arange(m, dtype=dtype) + 0.5) / m


def huber(x: torch.Tensor, kappa: float = 1.0) -> torch.Tensor:
    ax = x.abs()
    return torch.where(ax <= kappa, 0.5 * x * x, kappa * (ax - 0.5 * kappa))


def quantile_huber_loss(quantiles: torch.Tensor, target: torch.Tensor, kappa: float = 1.0) -> torch.Tensor:
    """Quantile-Huber regression of (B, E, M) quantiles toward target samples.

    ``target`` is (B, T); one-step episodes pass the observed reward as a
    single sample (T = 1).
    """
    m = quantiles.shape[-1]
    levels = quantile_levels(m, quantiles.dtype).view(1, 1, m, 1)
    delta = target[:, None, None, :] - quantiles[..., None]
    weight = (levels - (delta.detach() < 0).to(delta.dtype)).abs()
    return (weight * huber(delta, kappa) / kappa).mean()


def critic_loss(critics: QuantileCritics, s, z, a_c, reward, kappa: float = 1.0) -> torch.Tensor:
    q = critics(s, z, a_c)
    loss = quantile_huber_loss(q, reward.reshape(-1, 1), kappa)
    if not torch.isfinite(loss):
        raise FloatingPointError(
            f"critic loss is {loss.item()}; quantile range [{q.min().item():.3g}, {q.max().item():.3g}], "
            f"reward range [{reward.min().item():.3g}, {reward.max().item():.3g}]")
    return loss


def truncated_mean(quantiles: torch.Tensor, drop_total: int) -> torch.Tensor:
    """Mean of pooled quantiles after dropping the ``drop_total`` largest.

    ``quantiles`` is (B, E, M) or (B, K) already pooled.
    """
    pooled = quantiles.reshape(quantiles.shape[0], -1)
    keep = pooled.shape[1] - drop_total
    if keep <= 0:
        raise ValueError("truncation removes every quantile")
    return torch.sort(pooled, dim=1).values[:, :keep].mean(dim=1)


def actor_loss(actor: HybridActor, critics: QuantileCritics, s, alpha, drop_total: int,
               tau: float = 1.0, generator=None) -> tuple[torch.Tensor, torch.Tensor]:
    """Maximum-entropy objective; returns (loss, per-sample log_prob)."""
    act = sample_action(actor, s, tau, generator=generator)
    q = truncated_mean(critics(s, act.z, act.a_c), drop_total)
    loss = (alpha * act.log_prob - q).mean()
    return loss, act.log_prob
