"""Surrogate-assisted neuroevolution for classic-control tasks."""

__version__ = "0.1.0"
