"""Dyadic piecewise polynomials: adaptive approximation and penalized density estimation."""

from .approx import ApproxConfig, greedy_partition, rate_experiment, seminorm, theory_params
from .dyadic import (AnisoFamily, DyadicRectangle, Leaf, Node, decode_tree, encode_tree,
                     enumerate_partitions, leaves)
from .estimate import FittedModel, PenaltyConfig, build_stats, fit, make_config, select_partition
from .legendre import PiecewisePoly, l2_dist, phi_eval, project

__version__ = "0.1.0"

__all__ = [
    "ApproxConfig", "greedy_partition", "rate_experiment", "seminorm", "theory_params",
    "AnisoFamily", "DyadicRectangle", "Leaf", "Node", "decode_tree", "encode_tree",
    "enumerate_partitions", "leaves", "FittedModel", "PenaltyConfig", "build_stats", "fit",
    "make_config", "select_partition", "PiecewisePoly", "l2_dist", "phi_eval", "project",
]
