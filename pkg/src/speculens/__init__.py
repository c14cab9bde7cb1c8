"""Specular-highlight video inpainting and its evaluation harnesses."""

__version__ = "0.1.0"
