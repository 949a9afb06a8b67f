"""Bootstrap view of SGD generalization: landscapes, regularized optimizers and
numerical checks of the gap / variability relations."""

__version__ = "0.1.0"
