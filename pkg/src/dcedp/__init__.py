"""Desk-scale dynamic contrast-enhanced radial MRI: simulation, compressed
sensing and latent-driven deep-prior reconstruction, tracer-kinetic analysis."""

__version__ = "0.1.0"
