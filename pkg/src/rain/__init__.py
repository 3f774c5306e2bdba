"""Unsupervised inference of continuous interaction strengths from
multivariate trajectories, with the simulators, training harness, baselines,
and evaluation tools needed to verify it end to end."""

__version__ = "0.1.0"
