"""Latent diffusion with variational-quantum-circuit denoisers, simulated exactly."""

__version__ = "0.1.0"
