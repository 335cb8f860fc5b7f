"""CPU inference engine and benchmark harness for the SBCFormer family."""

__version__ = "0.1.0"

from .model import (AblationFlags, Model, VARIANTS, VariantSpec, build,
                    count_gmacs, count_macs, count_params, forward)
from .weights import WeightStore, export_random, fold_batchnorm, load, save

__all__ = [
    "AblationFlags",
    "Model",
    "VARIANTS",
    "VariantSpec",
    "WeightStore",
    "build",
    "count_gmacs",
    "count_macs",
    "count_params",
    "export_random",
    "fold_batchnorm",
    "forward",
    "load",
    "save",
]
