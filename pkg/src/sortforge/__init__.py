"""Domain-adapted training-image generation and conveyor sorting simulation."""

__version__ = "0.1.0"
