"""Semi-supervised GAN super-resolution.

A single generator/discriminator pair trained on a few paired LR-HR images
plus many unpaired LR images. Unpaired inputs are supervised through a
downsample-consistency loss: the super-resolved output, degraded back to LR,
must match the LR image it came from. Evaluation is FID plus a blinded
mean-opinion-score study (export tool, HTTP backend, and browser UI).
"""

__version__ = "0.1.0"
