"""Actor and critic networks for the hybrid discrete/continuous policy."""
from __future__ import annotations

import math

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from ..environment import SPEC_HIGH, SPEC_LOW
from ..layout import N_CONTINUOUS, N_ORDERS

LOG_SIGMA_MIN, LOG_SIGMA_MAX = -20.0, 2.0
_SPEC_MID = torch.tensor((SPEC_LOW + SPEC_HIGH) / 2, dtype=torch.float32)
_SPEC_HALF = torch.tensor((SPEC_HIGH - SPEC_LOW) / 2, dtype=torch.float32)


def encode_specs(specs) -> torch.Tensor:
    """Scale raw specs (B, 5) to [-1, 1] per field."""
    s = torch.as_tensor(np.asarray(specs), dtype=torch.float32)
    return (s - _SPEC_MID) / _SPEC_HALF


class ResidualMLP(nn.Module):
    def __init__(self, in_dim: int, width: int, n_blocks: int):
        super().__init__()
        self.inp = nn.Linear(in_dim, width)
        self.blocks = nn.ModuleList(
            nn.Sequential(nn.LayerNorm(width), nn.Linear(width, width), nn.ReLU(),
                          nn.Linear(width, width))
            for _ in range(n_blocks))
        self.out_norm = nn.LayerNorm(width)

    def forward(self, x):
        h = self.inp(x)
        for block in self.blocks:
            h = h + block(h)
        return F.relu(self.out_norm(h))


class HybridActor(nn.Module):
    """Categorical head over the filter order plus a squashed Gaussian.

    With ``order_head="quantize"`` the order is instead an extra Gaussian
    coordinate rounded by :func:`quantize_baseline` (the naive scheme).
    """

    def __init__(self, width: int = 256, n_blocks: int = 2, order_head: str = "gumbel",
                 init_log_sigma: float = 0.0, n_continuous: int = N_CONTINUOUS):
        super().__init__()
        if order_head not in ("gumbel", "quantize"):
            raise ValueError(f"unknown order head {order_head!r}")
        self.order_head = order_head
        self.n_continuous = n_continuous
        self.n_gauss = n_continuous + (order_head == "quantize")
        self.trunk = ResidualMLP(5, width, n_blocks)
        self.logits = nn.Linear(width, N_ORDERS) if order_head == "gumbel" else None
        self.mu = nn.Linear(width, self.n_gauss)
        self.log_sigma = nn.Linear(width, self.n_gauss)
        for head in (self.log_sigma, self.logits):
            if head is not None:
                nn.init.uniform_(head.weight, -1e-3, 1e-3)
                nn.init.zeros_(head.bias)
        # the initial mean is exactly zero: designs start at the centre of the box
        nn.init.zeros_(self.mu.weight)
        nn.init.zeros_(self.mu.bias)
        nn.init.constant_(self.log_sigma.bias, init_log_sigma)

    def forward(self, s: torch.Tensor):
        h = self.trunk(s)
        logits = self.logits(h) if self.logits is not None else None
        log_sigma = self.log_sigma(h).clamp(LOG_SIGMA_MIN, LOG_SIGMA_MAX)
        return logits, self.mu(h), log_sigma


class QuantileCritics(nn.Module):
    """Ensemble of ``E`` critics each emitting ``M`` return quantiles."""

    def __init__(self, n_critics: int = 2, n_quantiles: int = 25, width: int = 256,
                 n_blocks: int = 2, n_continuous: int = N_CONTINUOUS):
        super().__init__()
        if n_critics < 2 or n_quantiles < 2:
            raise ValueError("need at least two critics and two quantiles")
        in_dim = 5 + N_ORDERS + n_continuous
        self.nets = nn.ModuleList(
            nn.Sequential(ResidualMLP(in_dim, width, n_blocks), nn.Linear(width, n_quantiles))
            for _ in range(n_critics))
        self.n_quantiles = n_quantiles

    def forward(self, s, order_onehot, a_c):
        x = torch.cat([s, order_onehot, a_c], dim=-1)
        return torch.stack([net(x) for net in self.nets], dim=1)  # (B, E, M)


def gaussian_tanh_log_prob(u: torch.Tensor, mu: torch.Tensor, log_sigma: torch.Tensor) -> torch.Tensor:
    """log density of a = tanh(u), u ~ N(mu, sigma), summed over the last axis."""
    normal = -0.5 * ((u - mu) / log_sigma.exp()) ** 2 - log_sigma - 0.5 * math.log(2 * math.pi)
    # log(1 - tanh(u)^2) written stably
    jac = 2.0 * (math.log(2.0) - u - F.softplus(-2.0 * u))
    return (normal - jac).sum(-1)
