"""Offloaded QKD post-processing: remote reconciliation, MPC decoding and multi-server PA."""

__version__ = "0.1.0"
