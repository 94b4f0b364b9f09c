"""Directed weighted graphs with manifold-valued node features.

A ``FeatureGraph`` stores a fixed directed edge list with positive weights and
one or more channels of node features that all live on the same manifold.
Graphs are immutable after construction; operations return new graphs.

The graph Laplacian of a channel f is

    (L f)(v) = - sum over edges (v, u) of  w(v, u) * log_{f(v)} f(u),

a tangent vector at f(v); nodes without outgoing edges get the zero vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .manifolds import (
    CutLocusError,
    Manifold,
    Sphere,
    frechet_mean,
)

__all__ = [
    "FeatureChannel",
    "FeatureGraph",
    "TangentField",
    "AdmissibilityReport",
    "expand_undirected",
    "validate_admissible",
    "laplacian",
    "normalize_weights",
    "graph_diameter",
    "bounding_ball_estimate",
    "permute_graph",
]


@dataclass(frozen=True)
class FeatureChannel:
    """One map from nodes to manifold points, stored as a stacked array."""

    manifold: Manifold
    values: np.ndarray  # (n, *point_shape)

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))
        self.manifold.check_point(self.values)

    @property
    def node_count(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class TangentField:
    """One tangent vector per node, anchored at that node's feature."""

    manifold: Manifold
    base: np.ndarray
    vectors: np.ndarray

    def norms(self) -> np.ndarray:
        return self.manifold.norm(self.base, self.vectors)


@dataclass(frozen=True)
class AdmissibilityReport:
    """Every (edge index, channel index) pair whose logarithm is undefined."""

    violations: tuple[tuple[int, int], ...]

    @property
    def ok(self) -> bool:
        return not self.violations


def expand_undirected(edges: np.ndarray, weights: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Expand undirected edge pairs into both directed orientations."""
    edges = np.asarray(edges, dtype=int).reshape(-1, 2)
    weights = np.asarray(weights, dtype=float).reshape(-1)
    both = np.concatenate([edges, edges[:, ::-1]], axis=0)
    return both, np.concatenate([weights, weights])


@dataclass(frozen=True)
class FeatureGraph:
    node_count: int
    edges: np.ndarray  # (m, 2) int, rows (from, to)
    weights: np.ndarray  # (m,) positive
    channels: tuple[FeatureChannel, ...]
    label: int | None = None
    covariates: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=int).reshape(-1, 2)
        weights = np.asarray(self.weights, dtype=float).reshape(-1)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "channels", tuple(self.channels))
        object.__setattr__(self, "covariates", np.asarray(self.covariates, dtype=float).reshape(-1))

        n = self.node_count
        if n < 1:
            raise ValueError("graph needs at least one node")
        if edges.shape[0] != weights.shape[0]:
            raise ValueError("edge and weight counts differ")
        if edges.size and (edges.min() < 0 or edges.max() >= n):
            raise ValueError("edge endpoint out of range")
        if np.any(edges[:, 0] == edges[:, 1]):
            raise ValueError("self-loops are rejected")
        if edges.size:
            seen = set(map(tuple, edges.tolist()))
            if len(seen) != edges.shape[0]:
                raise ValueError("duplicate directed edges are rejected")
        if np.any(~np.isfinite(weights)) or np.any(weights <= 0):
            raise ValueError("edge weights must be positive and finite")
        if not self.channels:
            raise ValueError("graph needs at least one feature channel")
        manifold = self.channels[0].manifold
        for i, ch in enumerate(self.channels):
            if ch.node_count != n:
                raise ValueError(f"channel {i} has {ch.node_count} points, expected {n}")
            if ch.manifold != manifold:
                raise ValueError("all channels must share one manifold")

    @property
    def manifold(self) -> Manifold:
        return self.channels[0].manifold

    @property
    def channel_count(self) -> int:
        return len(self.channels)

    def channel_values(self, channel: int) -> np.ndarray:
        return self.channels[channel].values

    def with_channel_values(self, channel: int, values: np.ndarray) -> "FeatureGraph":
        chans = list(self.channels)
        chans[channel] = FeatureChannel(self.manifold, values)
        return replace(self, channels=tuple(chans))

    def with_all_channels(self, values: Sequence[np.ndarray]) -> "FeatureGraph":
        chans = tuple(FeatureChannel(self.manifold, v) for v in values)
        return replace(self, channels=chans)

    def out_weight_sums(self) -> np.ndarray:
        sums = np.zeros(self.node_count)
        np.add.at(sums, self.edges[:, 0], self.weights)
        return sums


def validate_admissible(g: FeatureGraph) -> AdmissibilityReport:
    """List every (edge, channel) whose log is undefined; empty means admissible.

    Only the sphere has a cut locus among the supported manifolds, so other
    kinds always yield an empty report.
    """
    violations: list[tuple[int, int]] = []
    if isinstance(g.manifold, Sphere) and g.edges.size:
        for ci, ch in enumerate(g.channels):
            d = g.manifold.dist(ch.values[g.edges[:, 0]], ch.values[g.edges[:, 1]])
            for ei in np.flatnonzero(d > np.pi - 1e-8):
                violations.append((int(ei), ci))
    violations.sort()
    return AdmissibilityReport(tuple(violations))


def laplacian(g: FeatureGraph, channel: int) -> TangentField:
    """Graph Laplacian of one channel; raises CutLocusError naming the edge."""
    f = g.channel_values(channel)
    manifold = g.manifold
    vectors = np.zeros_like(f)
    if g.edges.size:
        src, dst = g.edges[:, 0], g.edges[:, 1]
        try:
            logs = manifold.log(f[src], f[dst])
        except CutLocusError as err:
            edges = [(int(e), (int(src[e]), int(dst[e]))) for e in np.atleast_1d(err.where)]
            raise CutLocusError(
                f"channel {channel}: logarithm undefined on edges {edges}",
                where=err.where,
                channel=channel,
                edges=edges,
            ) from None
        contrib = -g.weights.reshape((-1,) + (1,) * (f.ndim - 1)) * logs
        np.add.at(vectors, src, contrib)
    return TangentField(manifold, f, vectors)


def normalize_weights(g: FeatureGraph) -> FeatureGraph:
    """Divide all weights by b = max node out-weight sum when b > 1.

    The slack below leaves already-normalized graphs untouched, which makes
    the operation idempotent under floating point.
    """
    b = float(g.out_weight_sums().max()) if g.edges.size else 0.0
    if b <= 1.0 + 1e-12:
        return g
    return replace(g, weights=g.weights / b)


def graph_diameter(g: FeatureGraph, channel: int) -> float:
    """Largest feature distance over all node pairs (not only edges)."""
    f = g.channel_values(channel)
    if f.shape[0] == 1:
        return 0.0
    pair = g.manifold.dist(f[:, None], f[None, :])
    return float(pair.max())


def bounding_ball_estimate(g: FeatureGraph, channel: int) -> tuple[np.ndarray, float]:
    """Enclosing geodesic ball centered at the unweighted Fréchet mean.

    The minimal enclosing ball is not computed; centering at the mean gives a
    ball that certainly contains the features, at the cost of a larger radius.
    """
    f = g.channel_values(channel)
    n = f.shape[0]
    center = frechet_mean(g.manifold, f, np.full(n, 1.0 / n))
    radius = float(g.manifold.dist(np.broadcast_to(center, f.shape), f).max())
    return center, radius


def permute_graph(g: FeatureGraph, perm: np.ndarray) -> FeatureGraph:
    """Relabel nodes: old node i becomes perm[i]. Edge order is preserved."""
    perm = np.asarray(perm, dtype=int)
    if sorted(perm.tolist()) != list(range(g.node_count)):
        raise ValueError("perm must be a permutation of the node indices")
    new_channels = []
    for ch in g.channels:
        values = np.empty_like(ch.values)
        values[perm] = ch.values
        new_channels.append(FeatureChannel(ch.manifold, values))
    return replace(g, edges=perm[g.edges], channels=tuple(new_channels))
