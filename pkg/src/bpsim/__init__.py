"""Parallel simulation of single-site spin dynamics by fixpoint iteration."""

__version__ = "0.1.0"
