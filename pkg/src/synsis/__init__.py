"""Synthetic-to-real semantic image synthesis: train a layout-conditioned
generator against an unpaired real-image domain using a whole-image wavelet
discriminator, a feature-space discriminator ensemble on image patches, and
a patchwise perceptual alignment loss guided by the paired synthetic image."""

__version__ = "0.1.0"
