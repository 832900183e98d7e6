"""Per-query configuration routing for multilingual question answering."""

__version__ = "0.1.0"
