"""Adversarial triplet embedding: minimax triplet loss with a closed-form inner maximum."""

__version__ = "0.1.0"
