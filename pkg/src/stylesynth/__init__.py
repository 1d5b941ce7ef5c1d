"""Desk-scale controllable synthesis: diffusion over a frozen latent space with
disentangled content/style conditioning, cross-modal triplet mining, inversion
based stylization, and a generative-search service."""

__version__ = "0.1.0"
