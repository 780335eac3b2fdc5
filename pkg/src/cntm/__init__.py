"""Conditional transition graph modeling with a memory-augmented network."""

from cntm._kernels import BACKEND as kernel_backend  # noqa: F401

__version__ = "0.1.0"
