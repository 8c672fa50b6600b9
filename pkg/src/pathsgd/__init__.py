"""Path-normalized training for networks with shared weights.

The package represents a network as a DAG plus a map from edges to shared
parameters, computes the path-regularizer and its per-parameter second-order
coefficients (kappa), and uses them to precondition SGD and Adam so that
training is invariant to node-wise rescalings of the weights.  Unrolled RNNs
get a fast vectorized route; everything is cross-checked against brute-force
path enumeration on small graphs.
"""

from .compute import backprop, forward, grad, rnn_backward, rnn_forward
from .graph import (
    GraphError,
    RnnLayout,
    RnnSpec,
    SharedWeightNet,
    build_feedforward,
    build_rnn,
    edges_for_param,
    validate,
)
from .invariance import NodeScaling, apply_rescaling, is_feasible, random_rescaling
from .optim import (
    OptimizerState,
    TrainConfig,
    TrainResult,
    adam_step,
    path_adam_step,
    path_sgd_step,
    sgd_step,
    train_loop,
)
from .pathnorm import (
    KappaVector,
    gamma_bruteforce,
    gamma_recursive,
    kappa1,
    kappa2,
    kappa_decomposition,
    kappa_fd,
    kappa_ratio,
    preconditioner,
)

__version__ = "0.1.0"

__all__ = [
    "GraphError",
    "KappaVector",
    "NodeScaling",
    "OptimizerState",
    "RnnLayout",
    "RnnSpec",
    "SharedWeightNet",
    "TrainConfig",
    "TrainResult",
    "adam_step",
    "apply_rescaling",
    "backprop",
    "build_feedforward",
    "build_rnn",
    "edges_for_param",
    "forward",
    "gamma_bruteforce",
    "gamma_recursive",
    "grad",
    "is_feasible",
    "kappa1",
    "kappa2",
    "kappa_decomposition",
    "kappa_fd",
    "kappa_ratio",
    "path_adam_step",
    "path_sgd_step",
    "preconditioner",
    "random_rescaling",
    "rnn_backward",
    "rnn_forward",
    "sgd_step",
    "train_loop",
    "validate",
]
