"""Neural implicit fields learned through volume rendering with quantized coordinates."""

__version__ = "0.1.0"
