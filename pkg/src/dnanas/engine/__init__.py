from .checkpoint import CheckpointError, load as load_checkpoint, save as save_checkpoint
from .gradcheck import grad_check
from .graph import INPUT, TARGET, Graph, NonFiniteError, Node, Tape, TapeError, backward, forward, init_params
from .layers import KINDS, LayerSpec, ShapeError, act, batchnorm, conv, dwconv, infer_shape, linear, squeeze_excite
from .params import MissingGradientError, OptimizerConfig, ParameterSet, optimizer_step

__all__ = [
    "CheckpointError", "Graph", "INPUT", "KINDS", "LayerSpec", "MissingGradientError", "Node", "NonFiniteError",
    "OptimizerConfig", "ParameterSet", "ShapeError", "TARGET", "Tape", "TapeError", "act", "backward", "batchnorm",
    "conv", "dwconv", "forward", "grad_check", "infer_shape", "init_params", "linear", "load_checkpoint",
    "optimizer_step", "save_checkpoint", "squeeze_excite",
]
