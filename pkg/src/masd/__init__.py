"""Multi-agent skill discovery with an information bottleneck on single-agent states."""

__version__ = "0.1.0"
