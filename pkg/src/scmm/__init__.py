"""SCMM: soft contrastive masked modeling for multi-channel band-power features.

Self-supervised pre-training toolkit built on a small float64 autodiff core:
hybrid masking, soft contrastive learning with original-space pairwise
weights, similarity-weighted aggregate reconstruction, and an
uncertainty-balanced joint objective, plus synthetic corpus generation and
cross-corpus pre-train/fine-tune evaluation.
"""

from .backend import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
