"""Reward, teachers, rollouts, PPO and distillation."""
