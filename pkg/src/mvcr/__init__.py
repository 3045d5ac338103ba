"""Multi-view compressed representations for small transformers.

Stochastic hierarchical autoencoders are inserted between encoder layers
during training and removed at inference. Subpackages: a tape-based autodiff
engine, layer primitives, the autoencoder pool, the augmentation wrapper, a
small transformer encoder, the training harness, and a CLI.
"""

__version__ = "0.1.0"
