"""SAR vessel detection: wavelet denoising, CFAR, a CNN chip classifier and NMS."""

__version__ = "0.1.0"
