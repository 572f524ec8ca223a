"""Audience-overlap graph toolkit for profiling website factuality and bias.

Pipeline: overlap-record replay -> media graph -> engagement features with
graph-neighbour imputation -> node embeddings (node2vec / GCN / GraphSAGE)
-> calibrated RBF-SVM channels -> posterior late fusion -> cross-validated
macro-F1 reports.
"""

__version__ = "0.1.0"
