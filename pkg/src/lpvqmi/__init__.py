"""Data-driven gain-scheduled control of LPV plants from noisy data."""
