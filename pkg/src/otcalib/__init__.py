"""Conditional optimal transport calibration of process-reward-model scores."""

__version__ = "0.1.0"
