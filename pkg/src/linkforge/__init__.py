"""Closed-kinematic-chain models, soft-constraint dynamics and a batched
locomotion environment for legged robots with parallel mechanisms."""

__version__ = "0.1.0"
