"""Few-shot meta-learning on a small numpy autodiff engine.

Subpackages: ``tensor_core`` (reverse-mode autodiff), ``episodes`` (data and
episode sampling), ``harness`` (training, evaluation, baselines). Modules:
``models`` (encoder and head), ``optimizers`` (inner SGD, Ranger),
``meta_algorithms`` (ProtoNet, MAML, Reptile, ProtoMAML), ``checks``
(gradient oracles) and ``cli``.
"""
from .meta_algorithms import ALGORITHMS, get_algorithm
from .models import EncoderConfig, ParamSet, encode, forward, init_params
from .optimizers import LrTable, OuterOptState, ranger_step

__version__ = "0.1.0"

__all__ = ["ALGORITHMS", "get_algorithm", "EncoderConfig", "ParamSet", "encode", "forward",
           "init_params", "LrTable", "OuterOptState", "ranger_step", "__version__"]
