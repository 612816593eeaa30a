"""Hierarchical language-corrigible imitation learning on a 2D packing task."""

__version__ = "0.1.0"
