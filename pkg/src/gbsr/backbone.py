"""Multi-layer propagation over the joint graph with mean readout.

Layer 0 is the trainable embedding table itself; layer l+1 is one normalized
aggregation of layer l.  The readout averages layers 0..L, and preference
scores are plain inner products between user and item readout rows.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List

import numpy as np

from .errors import ConfigError, DataError
from .graph import WeightedAdjacency, propagate

MAX_LAYERS = 4


@dataclass
class EmbeddingTable:
    """Stacked user and item embeddings: rows [0, M) users, [M, M+N) items."""

    matrix: np.ndarray
    layer_count: int

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if self.matrix.ndim != 2:
            raise ConfigError(f"embedding matrix must be 2-D, got shape {self.matrix.shape}")
        if not np.all(np.isfinite(self.matrix)):
            raise ConfigError("embedding matrix contains non-finite values")
        if not (1 <= self.layer_count <= MAX_LAYERS):
            raise ConfigError(
                f"layer_count must lie in [1, {MAX_LAYERS}], got {self.layer_count}")


@dataclass
class NodeRepresentations:
    """Per-layer states plus their mean; user_count splits the row space."""

    layers: List[np.ndarray]
    readout: np.ndarray
    user_count: int

    @property
    def item_count(self) -> int:
        return self.readout.shape[0] - self.user_count


def forward(table: EmbeddingTable, adj: WeightedAdjacency) -> NodeRepresentations:
    if table.matrix.shape[0] != adj.node_count:
        raise DataError(
            f"embedding matrix has {table.matrix.shape[0]} rows but the graph has "
            f"{adj.node_count} nodes")
    layers = [table.matrix]
    for _ in range(table.layer_count):
        layers.append(propagate(adj, layers[-1]))
    acc = layers[0]
    for state in layers[1:]:
        acc = acc + state
    readout = acc / float(len(layers))
    return NodeRepresentations(layers, readout, adj.layout.user_count)


def score(reps: NodeRepresentations, user: int, item: int) -> float:
    _check_user(reps, user)
    _check_item(reps, item)
    return float(np.dot(reps.readout[user], reps.readout[reps.user_count + item]))


def score_all_items(reps: NodeRepresentations, user: int) -> np.ndarray:
    _check_user(reps, user)
    return reps.readout[reps.user_count:] @ reps.readout[user]


def _check_user(reps: NodeRepresentations, user: int) -> None:
    if not (0 <= user < reps.user_count):
        raise DataError(f"user id {user} outside [0, {reps.user_count})")


def _check_item(reps: NodeRepresentations, item: int) -> None:
    if not (0 <= item < reps.item_count):
        raise DataError(f"item id {item} outside [0, {reps.item_count})")
