"""Desk-scale EditGRPO: GRPO-family training with sentence-level rollout editing."""

__version__ = "0.1.0"
