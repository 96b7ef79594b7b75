"""Causal diffusion analysis for spatial and network panel data.

Peer-effect (diffusion) estimation where the treatment is a weighted
average of neighbors' lagged outcomes, with placebo tests for omitted
confounders, bias-corrected estimation, data-assisted covariate selection,
and a seeded Monte Carlo lab.
"""

__version__ = "0.1.0"

from .dag import (
    BiasClass,
    CausalDag,
    DagTemplate,
    EdgeRule,
    Node,
    NodeId,
    SliceVar,
    unroll_template,
)
from .placebo import (
    ControlDecomposition,
    ControlSpec,
    PlaceboSpec,
    VariableMeta,
    decompose_control_set,
    derive_placebo_set,
)

__all__ = [
    "BiasClass",
    "CausalDag",
    "ControlDecomposition",
    "ControlSpec",
    "DagTemplate",
    "EdgeRule",
    "Node",
    "NodeId",
    "PlaceboSpec",
    "SliceVar",
    "VariableMeta",
    "decompose_control_set",
    "derive_placebo_set",
    "unroll_template",
    "__version__",
]
