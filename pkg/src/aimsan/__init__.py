"""Spatio-temporal traffic forecasting with auxiliary-information-aware
sparse cross-attention graph convolution, on a small from-scratch
reverse-mode tensor engine."""

__version__ = "0.1.0"
