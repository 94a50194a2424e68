"""Quantized neural-network laboratory: precision schemes, QAT, accelerator model, cost model."""

__version__ = "0.1.0"
