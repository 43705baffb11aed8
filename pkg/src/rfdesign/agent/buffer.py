from __future__ import annotations

import numpy as np

from ..layout import N_CONTINUOUS


class ReplayBuffer:
    """FIFO ring buffer of one-step transitions (spec, order, a_c, reward)."""

    def __init__(self, capacity: int, seed: int = 0, n_continuous: int = N_CONTINUOUS):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.specs = np.zeros((capacity, 5), dtype=np.float32)
        self.orders = np.zeros(capacity, dtype=np.int64)
        self.actions = np.zeros((capacity, n_continuous), dtype=np.float32)
        self.rewards = np.zeros(capacity, dtype=np.float32)
        self.pos = 0
        self.size = 0
        self.rng = np.random.default_rng(seed)

    def __len__(self):
        return self.size

    def add(self, specs, orders, actions, rewards):
        n = len(rewards)
        idx = (self.pos + np.arange(n)) % self.capacity
        self.specs[idx] = specs
        self.orders[idx] = orders
        self.actions[idx] = actions
        self.rewards[idx] = rewards
        self.pos = (self.pos + n) % self.capacity
        self.size = min(self.size + n, self.capacity)

    def sample(self, batch_size: int):
        k = min(batch_size, self.size)
        idx = self.rng.choice(self.size, size=k, replace=False)
        return self.specs[idx], self.orders[idx], self.actions[idx], self.rewards[idx]
