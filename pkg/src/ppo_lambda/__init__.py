"""PPO and PPO-lambda on small environments, with exact-MDP verification."""

__version__ = "0.1.0"
