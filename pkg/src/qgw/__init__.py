"""Quantized Gromov-Wasserstein matching."""
