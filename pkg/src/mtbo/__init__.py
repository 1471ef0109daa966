"""Multi-task Thompson sampling over independent per-task Gaussian processes."""

__version__ = "0.1.0"
