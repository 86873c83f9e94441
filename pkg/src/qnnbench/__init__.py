"""qnnbench: quantized-MLP training, integer streamlining, and dataflow simulation."""

__version__ = "0.1.0"
