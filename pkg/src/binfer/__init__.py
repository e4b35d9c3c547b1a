"""Bit-packed binary CNN inference, a real-valued reference path, and an
analytical accelerator cycle model with a layer-balancing planner."""
from .bitcore import (BitTensor, BitVectorSlice, FixedTensor, compensate, fixed_dot, pack,
                      unpack, xnor_dot)
from .fold import BatchNormParams, Direction, FoldedThreshold, fold_binary_layer, fold_first_layer
from .kernels import backend_name
from .layers import LayerKind, LayerSpec, NetworkSpec, run_network
from .streaming import run_streaming

__all__ = [
    "BitTensor", "BitVectorSlice", "FixedTensor", "compensate", "fixed_dot", "pack", "unpack",
    "xnor_dot", "BatchNormParams", "Direction", "FoldedThreshold", "fold_binary_layer",
    "fold_first_layer", "backend_name", "LayerKind", "LayerSpec", "NetworkSpec", "run_network",
    "run_streaming",
]
__version__ = "0.1.0"
