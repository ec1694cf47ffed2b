"""kgalign: interpretable knowledge-graph entity alignment.

Learns entity embeddings from attribute and relationship triples,
predicts cross-graph alignments by cosine similarity, and exposes the
attention weights behind each prediction as human-readable evidence.
"""

__version__ = "0.1.0"
