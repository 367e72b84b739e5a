"""Weighted bipartite graphs: participants connected to items by weighted edges.

Item and participant indices are 0-based in memory.  The edge-list file
format uses 1-based indices: a header line "n m" followed by one edge per
line as "i j w".
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from .streams import substream

EDGE_SPECS = ("one-per-participant", "bernoulli", "fixed-degree", "single-item")
WEIGHT_SPECS = ("uniform", "discrete", "constant")

DISCRETE_WEIGHTS = (0.0, 0.5, 1.0)


@dataclass(eq=False)
class WeightedBipartiteGraph:
    """Edges between n participants and m items, with weights in [-1, 1].

    At most one edge per (participant, item) pair.
    """

    n: int
    m: int
    participants: np.ndarray
    items: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.participants = np.asarray(self.participants, dtype=np.int64)
        self.items = np.asarray(self.items, dtype=np.int64)
        self.weights = np.asarray(self.weights, dtype=float)
        if not (self.participants.shape == self.items.shape == self.weights.shape):
            raise ValueError("edge arrays must have matching shapes")
        if self.n < 1 or self.m < 1:
            raise ValueError("graph needs n >= 1 participants and m >= 1 items")
        if self.participants.size:
            if self.participants.min() < 0 or self.participants.max() >= self.n:
                raise ValueError("participant index out of range")
            if self.items.min() < 0 or self.items.max() >= self.m:
                raise ValueError("item index out of range")
            if np.any(np.abs(self.weights) > 1.0):
                raise ValueError("edge weights must lie in [-1, 1]")
            keys = self.participants * self.m + self.items
            if np.unique(keys).size != keys.size:
                raise ValueError("duplicate (participant, item) edge")
        for arr in (self.participants, self.items, self.weights):
            arr.setflags(write=False)

    @property
    def edge_count(self) -> int:
        return int(self.participants.size)

    @cached_property
    def adjacency(self) -> np.ndarray:
        """Dense (n, m) boolean edge-existence matrix."""
        dense = np.zeros((self.n, self.m), dtype=bool)
        dense[self.participants, self.items] = True
        dense.setflags(write=False)
        return dense

    @cached_property
    def weight_matrix(self) -> np.ndarray:
        """Dense (n, m) weights, zero where no edge exists."""
        dense = np.zeros((self.n, self.m), dtype=float)
        dense[self.participants, self.items] = self.weights
        dense.setflags(write=False)
        return dense

    def participant_degrees(self) -> np.ndarray:
        return np.bincount(self.participants, minlength=self.n)


def degree(graph: WeightedBipartiteGraph, item: int) -> int:
    """Number of distinct participants with an edge to the item."""
    item = int(item)
    if not 0 <= item < graph.m:
        raise IndexError(f"item {item} out of range for m = {graph.m}")
    return int(np.count_nonzero(graph.items == item))


def weight(graph: WeightedBipartiteGraph, item: int) -> float:
    """Sum of edge weights incident to the item."""
    item = int(item)
    if not 0 <= item < graph.m:
        raise IndexError(f"item {item} out of range for m = {graph.m}")
    return float(graph.weights[graph.items == item].sum())


def item_degrees(graph: WeightedBipartiteGraph) -> np.ndarray:
    return np.bincount(graph.items, minlength=graph.m)


def item_weights(graph: WeightedBipartiteGraph) -> np.ndarray:
    return np.bincount(graph.items, weights=graph.weights, minlength=graph.m)


def averages(graph: WeightedBipartiteGraph, normalization: str = "pairs") -> tuple[float, float]:
    """Graph-wide average degree and average weight.

    The default "pairs" normalization divides item totals by
    (n+m)(n+m-1)/2, i.e. the number of vertex pairs in the full graph on
    n+m vertices.  "density" divides by n*m instead and exists only for
    sanity checks.
    """
    if normalization == "pairs":
        denom = (graph.n + graph.m) * (graph.n + graph.m - 1) / 2.0
    elif normalization == "density":
        denom = float(graph.n * graph.m)
    else:
        raise ValueError(f"unknown normalization {normalization!r}")
    return (
        float(item_degrees(graph).sum()) / denom,
        float(item_weights(graph).sum()) / denom,
    )


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------


def _parse_spec(text: str) -> tuple[str, str | None]:
    kind, _, arg = text.partition(":")
    return kind.strip(), (arg.strip() or None)


def generate_graph(n: int, m: int, edge_spec: str, weight_spec: str, seed: int) -> WeightedBipartiteGraph:
    """Reproducibly sample a graph from named edge and weight distributions.

    Edge specs: "one-per-participant" (each participant gets one uniform
    item), "bernoulli:p" (each pair is an edge with probability p),
    "fixed-degree:d" (each participant gets d distinct uniform items),
    "single-item:J" (every participant connects to 1-based item J).

    Weight specs: "uniform" (U[-1, 1]), "discrete" (uniform over
    {0, 0.5, 1}), "constant:w".
    """
    kind, arg = _parse_spec(edge_spec)
    rng = substream(seed, "graph-structure")
    if kind == "one-per-participant":
        participants = np.arange(n, dtype=np.int64)
        items = rng.integers(0, m, size=n)
    elif kind == "bernoulli":
        prob = float(arg if arg is not None else 0.5)
        if not 0.0 <= prob <= 1.0:
            raise ValueError(f"bernoulli edge probability must lie in [0, 1], got {prob}")
        mask = rng.random((n, m)) < prob
        participants, items = (idx.astype(np.int64) for idx in np.nonzero(mask))
    elif kind == "fixed-degree":
        d = int(arg if arg is not None else 1)
        if not 1 <= d <= m:
            raise ValueError(f"fixed degree must lie in [1, m], got {d}")
        participants = np.repeat(np.arange(n, dtype=np.int64), d)
        items = np.concatenate([rng.permutation(m)[:d] for _ in range(n)]).astype(np.int64)
    elif kind == "single-item":
        target = int(arg if arg is not None else 1) - 1
        if not 0 <= target < m:
            raise ValueError(f"single-item target out of range: {arg}")
        participants = np.arange(n, dtype=np.int64)
        items = np.full(n, target, dtype=np.int64)
    else:
        raise ValueError(f"unknown edge spec {edge_spec!r}")

    wkind, warg = _parse_spec(weight_spec)
    wrng = substream(seed, "graph-weights")
    count = participants.size
    if wkind == "uniform":
        weights = wrng.uniform(-1.0, 1.0, size=count)
    elif wkind == "discrete":
        weights = np.asarray(DISCRETE_WEIGHTS)[wrng.integers(0, 3, size=count)]
    elif wkind == "constant":
        value = float(warg if warg is not None else 1.0)
        if abs(value) > 1.0:
            raise ValueError(f"constant weight must lie in [-1, 1], got {value}")
        weights = np.full(count, value)
    else:
        raise ValueError(f"unknown weight spec {weight_spec!r}")

    return WeightedBipartiteGraph(n, m, participants, items, weights)


def benchmark_graph(name: str, n: int, m: int, seed: int = 0) -> WeightedBipartiteGraph:
    """Named benchmark graphs used across tests and experiments."""
    if name == "single-item":
        return generate_graph(n, m, "single-item:1", "constant:0.5", seed)
    if name == "one-per-participant":
        return generate_graph(n, m, "one-per-participant", "discrete", seed)
    if name == "bernoulli-half":
        return generate_graph(n, m, "bernoulli:0.5", "uniform", seed)
    raise ValueError(f"unknown benchmark graph {name!r}")


# ---------------------------------------------------------------------------
# edge-list file format
# ---------------------------------------------------------------------------


def save_edge_list(graph: WeightedBipartiteGraph, path) -> None:
    """Write "n m" header then "i j w" lines with 1-based indices."""
    lines = [f"{graph.n} {graph.m}"]
    for i, j, w in zip(graph.participants, graph.items, graph.weights):
        lines.append(f"{int(i) + 1} {int(j) + 1} {float(w)!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_edge_list(path) -> WeightedBipartiteGraph:
    """Read the edge-list format written by :func:`save_edge_list`."""
    lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.strip()]
    if not lines:
        raise ValueError(f"empty edge-list file: {path}")
    header = lines[0].split()
    if len(header) != 2:
        raise ValueError(f"edge-list header must be 'n m', got {lines[0]!r}")
    n, m = int(header[0]), int(header[1])
    participants, items, weights = [], [], []
    for ln in lines[1:]:
        parts = ln.split()
        if len(parts) != 3:
            raise ValueError(f"edge line must be 'i j w', got {ln!r}")
        participants.append(int(parts[0]) - 1)
        items.append(int(parts[1]) - 1)
        weights.append(float(parts[2]))
    return WeightedBipartiteGraph(
        n, m, np.asarray(participants, dtype=np.int64), np.asarray(items, dtype=np.int64), np.asarray(weights)
    )
