"""Self-supervised graph-Transformer forgery detection at desk scale."""

__version__ = "0.1.0"
