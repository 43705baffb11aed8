from .trainer import HybridTQCAgent, order_exploration, random_policy_reward

__all__ = ["HybridTQCAgent", "order_exploration", "random_policy_reward"]
