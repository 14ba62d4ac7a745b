"""Stochastic robustness of belief trajectories against Signal Temporal Logic."""
