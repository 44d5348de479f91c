"""Inference-based schemes adaptive to large time-steps for ergodic SDEs."""
