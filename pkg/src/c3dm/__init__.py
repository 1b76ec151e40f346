"""Fixation-while-denoising diffusion policies for desk-scale pick and place."""

__version__ = "0.1.0"
