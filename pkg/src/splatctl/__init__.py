"""Desk-scale Gaussian splatting trainer with single-knob structural compression control."""

__version__ = "0.1.0"
