"""Systolic-peak learning, HRV features, and rhythm classification on
synthetic pulse signals."""

__version__ = "0.1.0"
