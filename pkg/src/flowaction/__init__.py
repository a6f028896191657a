"""Infer user actions from encrypted mobile traffic metadata.

Pipeline: capture CSV -> flows -> filtered flows -> byte series -> DTW
flow distances -> average-linkage clusters with leaders -> per-window
cluster-count vectors -> Random Forest.
"""

__version__ = "0.1.0"
