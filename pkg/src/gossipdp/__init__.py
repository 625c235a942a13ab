"""Node-level network differential privacy for noisy gossip averaging."""

__version__ = "0.1.0"
