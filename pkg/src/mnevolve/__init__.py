"""Minimal neural evolution for diffusion processes and sampling."""

__version__ = "0.1.0"
