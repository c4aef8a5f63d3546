"""Dynamic graph-level representations from masked random-walk transformers."""

__version__ = "0.1.0"
