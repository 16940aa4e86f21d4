"""Mammogram screening pipeline: ingest, denoise, segment, wavelet channels,
cascaded CNN classification and one-vs-rest ROC evaluation, in numpy/scipy."""

__version__ = "0.1.0"
