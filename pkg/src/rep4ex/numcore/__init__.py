"""Numeric substrate: autodiff tape, least squares, Adam, and random streams."""

from rep4ex.numcore.adam import AdamState, GradientBlowupError, adam_update
from rep4ex.numcore.graph import Graph, GraphError, Node
from rep4ex.numcore.linalg import (
    DegenerateDesignError,
    annihilator,
    least_squares_fit,
    residual_factors,
)
from rep4ex.numcore.rng import RngStream

__all__ = [
    "AdamState",
    "DegenerateDesignError",
    "GradientBlowupError",
    "Graph",
    "GraphError",
    "Node",
    "RngStream",
    "adam_update",
    "annihilator",
    "least_squares_fit",
    "residual_factors",
]
