"""Fixed-point conversion of binary-weight, k-bit-activation networks."""

from .model import (BN, FC, QFC, Conv, FloatTensor, IntTensor, MaxPool, ModelError,
                    NetworkDef, QConv, Quant, ReLU, Violation, infer_shapes, validate_model)
from .container import ContainerError, load_model, save_model
from .divide import Substructure, divide_substructures
from .convert import (ConversionError, ConvertedNetwork, FixedPointOverflow, compose_base_offset,
                      compose_thresholds, convert_network, separated_scale)
from .engine_float import run_float
from .engine_fixed import binary_dot, run_fixed

__version__ = "0.1.0"
