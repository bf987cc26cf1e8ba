"""Spatially aware GAN toolkit.

Hierarchical heatmap conditioning for a small convolutional generator,
attention extraction and alignment against the discriminator, equilibrium
metrics, a training harness, and an HTTP editing service.
"""

__version__ = "0.1.0"
