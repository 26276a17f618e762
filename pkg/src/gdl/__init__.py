"""Vanilla-GAN density estimation with ReQU networks, plus numerical checks of its bounds."""

__version__ = "0.1.0"
