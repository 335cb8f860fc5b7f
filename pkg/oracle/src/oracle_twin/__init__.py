"""PyTorch twin of the sbcformer engine for numerical cross-validation."""

__version__ = "0.1.0"

from .contract import VARIANTS, block_names, init_params, parameter_entries
from .golden import dump_golden, export_weights
from .sbcw import read_sbcw, write_sbcw
from .twin import TwinModel, build_twin, contract_tensors, export_contract, load_contract

__all__ = [
    "TwinModel",
    "VARIANTS",
    "block_names",
    "build_twin",
    "contract_tensors",
    "dump_golden",
    "export_contract",
    "export_weights",
    "init_params",
    "load_contract",
    "parameter_entries",
    "read_sbcw",
    "write_sbcw",
]
