"""Fully online meta-learning on boundary-free task streams.

Core pieces: a tape-based autodiff engine with exact second-order gradients
through unrolled optimizer steps, small image models, boundary-free task
streams with a replay buffer, the FOML online/meta learner plus the four
reference baselines, metrics, and an experiment runner exposed both as a
FastAPI service and a thin CLI.
"""

__version__ = "0.1.0"
