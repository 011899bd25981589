"""Metrics, reports, baselines and the task runner."""
