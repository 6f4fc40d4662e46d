"""Latent vector-set autoencoding and diffusion for deforming surfaces."""

__version__ = "0.1.0"
