"""Edge-fused label-to-image synthetic augmentation for nuclei segmentation."""

__version__ = "0.1.0"
