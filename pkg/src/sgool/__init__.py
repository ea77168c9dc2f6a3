"""Saliency-guided optimization of diffusion latents at toy scale."""

__version__ = "0.1.0"
