"""Distributed coverage control on metric graphs and sampled environments."""

__version__ = "0.1.0"
