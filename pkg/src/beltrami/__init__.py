"""Numerical tools for degenerate Beltrami equations."""
