"""One-pass training with error-prioritized replay."""

__version__ = "0.1.0"
