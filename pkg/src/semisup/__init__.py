"""Semi-supervised learning with triplet mutual information and deformable template matching."""

__version__ = "0.1.0"
