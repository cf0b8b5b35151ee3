"""motionspace: a latent motion space for multi-frame 4D body motion.

Whole sequences of skinned-body parameters (per-frame joint rotations,
root translation, and timing) are encoded into a single latent vector,
decoded back to dense mesh sequences, and fitted to partial observations
by optimizing in the latent space.

Submodules:
    rotations   continuous 6D rotation representation
    body        skinned parametric body and synthetic asset builder
    sequences   motion sequences, normalization, segmentation, file I/O
    nn          dense layers with reverse-mode gradients and the optimizer
    vae         the sequence autoencoder, its losses, and training
    fitting     latent-space interpolation, prediction, and completion
    evaluation  PCA baseline, error metrics, box statistics, exporters
    cli         command-line driver
"""

from .errors import MotionSpaceError

__all__ = ["MotionSpaceError"]

__version__ = "0.1.0"
