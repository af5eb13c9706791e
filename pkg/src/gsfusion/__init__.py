"""Multi-scan fusion of segmented Gaussian scene fields.

Reconstructs per-scan segmented Gaussian fields, jointly optimizes them
under bidirectional and pseudo-state alignment with collaborative
co-pruning, and synthesizes novel scene states by object-aware rigid
transfer.
"""

__version__ = "0.1.0"
