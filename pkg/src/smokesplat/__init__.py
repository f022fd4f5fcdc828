"""Inverse rendering of smoke-filled scenes from RGB and thermal video with
two sets of 3D Gaussians: static surfaces and dynamic smoke."""

__version__ = "0.1.0"
