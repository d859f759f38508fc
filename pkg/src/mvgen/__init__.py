"""Multi-scale vector-quantized image generation with a coarse-to-fine prior."""

__version__ = "0.1.0"
