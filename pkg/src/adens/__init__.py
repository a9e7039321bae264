"""Tri-plane DenseNet ensemble for staging dementia from brain MRI."""

from adens.labels import NUM_CLASSES, ClassLabel, cdr_to_class

__version__ = "0.1.0"

__all__ = ["ClassLabel", "NUM_CLASSES", "cdr_to_class", "__version__"]
