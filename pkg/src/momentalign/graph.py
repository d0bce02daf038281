"""Graph reasoning over candidate moments: fixed-graph GCN and the iterative
graph adjustment stack that learns the adjacency alongside node features."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .exceptions import ConfigurationError, DimensionError

DEFAULT_DIAG = 1.0


def gcn_forward(adjacency: ad.Tensor, nodes: ad.Tensor, weight: ad.Tensor) -> ad.Tensor:
    """relu(G @ X @ W)."""
    n, d = nodes.shape
    if adjacency.shape != (n, n) or weight.shape != (d, d):
        raise DimensionError(f"gcn shapes inconsistent: G {adjacency.shape}, "
                             f"X {nodes.shape}, W {weight.shape}")
    return ad.relu(ad.matmul(ad.matmul(adjacency, nodes), weight))


@dataclass
class IganCell:
    w_r: ad.Tensor           # d x d, residual correlation weight
    w_o: ad.Tensor           # d x d, node update weight


@dataclass
class IganState:
    adjacency: ad.Tensor     # G_t, N x N
    nodes: ad.Tensor         # X_t, N x d
    step: int


def initial_state(moments: ad.Tensor, diag_value: float = DEFAULT_DIAG) -> IganState:
    n = moments.shape[0]
    return IganState(ad.Tensor(diag_value * np.eye(n)), moments, 0)


def residual_adjacency(nodes: ad.Tensor, w_r: ad.Tensor) -> ad.Tensor:
    """Row-L2-normalised signed square root of X W_r X^T."""
    corr = ad.matmul(ad.matmul(nodes, w_r), ad.transpose(nodes))
    return ad.l2_normalize_rows(ad.signed_sqrt(corr))


def igan_cell_forward(state: IganState, moments: ad.Tensor, cell: IganCell) -> IganState:
    """One recurrence step; the node update reads the original moment features."""
    n, d = moments.shape
    if state.nodes.shape != (n, d) or state.adjacency.shape != (n, n):
        raise DimensionError(f"state shapes {state.adjacency.shape}/{state.nodes.shape} "
                             f"do not match moments {moments.shape}")
    if cell.w_r.shape != (d, d) or cell.w_o.shape != (d, d):
        raise DimensionError(f"cell weights must be {d}x{d}")
    residual = residual_adjacency(state.nodes, cell.w_r)
    adjacency = ad.tanh(ad.add(state.adjacency, residual))
    nodes = gcn_forward(adjacency, moments, cell.w_o)
    return IganState(adjacency, nodes, state.step + 1)


def igan_stack_forward(moments: ad.Tensor, cells: Sequence[IganCell],
                       diag_value: float = DEFAULT_DIAG) -> IganState:
    if not cells:
        raise ConfigurationError("an IGAN stack needs at least one cell")
    state = initial_state(moments, diag_value)
    for cell in cells:
        state = igan_cell_forward(state, moments, cell)
    return state


@dataclass
class MatchingScores:
    logits: ad.Tensor        # N

    @property
    def probabilities(self) -> np.ndarray:
        return ad.stable_sigmoid(self.logits.data)


def score_moments(nodes: ad.Tensor, gamma: ad.Tensor) -> MatchingScores:
    """Mean over words of <node_i, gamma_w>; probabilities are its sigmoid."""
    if nodes.shape[1] != gamma.shape[0]:
        raise DimensionError(f"node width {nodes.shape[1]} != filter width {gamma.shape[0]}")
    return MatchingScores(ad.mean(ad.matmul(nodes, gamma), axis=1))


def graph_export(moments, adjacency: np.ndarray) -> dict:
    """Plain-JSON view of the final moment graph for visual inspection."""
    return {
        "moments": [{"layer": m.layer, "index": m.index, "start_seconds": m.start_seconds,
                     "end_seconds": m.end_seconds} for m in moments],
        "adjacency": np.asarray(adjacency).tolist(),
    }

