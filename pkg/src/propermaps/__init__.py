"""Proper-homotopy mapping classes of locally finite graphs.

Classification invariants for tree-with-loops graphs, the identity
criterion calculus for finitely supported proper maps, free factor system
arithmetic over Stallings graphs, and Nielsen realization pipelines for
finite symmetry groups.
"""

from . import end_space, graph_model, mapclass, nielsen, stallings, words

__all__ = ["words", "stallings", "graph_model", "end_space", "mapclass", "nielsen"]
__version__ = "0.1.0"
