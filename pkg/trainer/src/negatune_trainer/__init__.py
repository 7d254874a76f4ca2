"""Reference supervised fine-tuning for loss-masked chat datasets."""

__version__ = "0.1.0"
