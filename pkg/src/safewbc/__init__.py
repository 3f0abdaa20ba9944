"""Whole-body inverse-dynamics QP control with acceleration-level safety
barriers, contact constraint handling, a constrained rigid-body simulator,
and a small gait layer for planar bipeds."""

__version__ = "0.1.0"
