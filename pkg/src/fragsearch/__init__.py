"""Similarity search over 3D-scanned fragment collections.

Builds per-fragment shape and color descriptors, pairwise distance
matrices, and auto-calibrated thresholds, then answers multi-criteria
query-by-example searches with stepwise relaxation.
"""

__version__ = "0.1.0"

STORE_FORMAT_VERSION = 1
