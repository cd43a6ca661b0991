"""Hybrid quantum-classical GAN for synthetic network-flow generation and IDS evasion tests."""

__version__ = "0.1.0"
