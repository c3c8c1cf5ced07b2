"""Convex neural surrogates of optimal power flow value functions."""

__version__ = "0.1.0"
