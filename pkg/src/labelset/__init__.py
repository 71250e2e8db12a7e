"""Multi-label text classification as set prediction.

A transformer encoder reads the sentence, a non-autoregressive transformer
decoder emits one label distribution per query slot, and the query vectors
come from graph convolutions over the label co-occurrence graph.  Training
matches predicted slots to gold labels with a minimum-cost assignment and
adds a pairwise-overlap penalty that pushes slot distributions apart.
"""

__version__ = "0.1.0"
