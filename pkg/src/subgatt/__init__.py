"""Graph classification with subgraph attention and hierarchically attentive pooling."""

__version__ = "0.1.0"
