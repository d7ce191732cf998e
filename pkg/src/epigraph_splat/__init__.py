"""Epipolar-constrained point initialization, anchor graphs with angular
attention, and image losses for Gaussian-splatting scene fitting."""

__version__ = "0.1.0"
