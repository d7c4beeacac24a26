"""Modeling toolkit for flux-tunable SNAIL traveling-wave parametric amplifiers."""

__version__ = "0.1.0"
