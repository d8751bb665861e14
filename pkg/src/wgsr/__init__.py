"""Wavelet-guided GAN super-resolution: SWT losses, an SWT-domain discriminator and the tools around them."""

__version__ = "0.1.0"
