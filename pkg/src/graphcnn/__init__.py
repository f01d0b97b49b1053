"""Graph convolutional neural networks built on selection and aggregation of graph signals."""

__version__ = "0.1.0"
