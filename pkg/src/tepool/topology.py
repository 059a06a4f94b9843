"""Communication graphs and consensus weight matrices.

Three stock structures cover the usual neighborhood layouts: a star
(one hub talks to everyone), a nearest-k ring, and the complete graph.
Mixing weights follow the Metropolis rule

    w[i][j] = 1 / (1 + max(deg(i), deg(j)))   for an edge (i, j)
    w[i][i] = 1 - sum of the off-diagonal row

which is symmetric and doubly stochastic on any connected undirected
graph. Double stochasticity is load-bearing: the mismatch-tracking
conservation in the consensus engine needs column sums of exactly one.
Scenario files may supply an explicit matrix instead; it is validated
against the same invariants.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Topology:
    """Undirected communication graph over n agents."""

    n: int
    adjacency: np.ndarray  # boolean, symmetric, empty diagonal

    def __post_init__(self):
        adj = np.asarray(self.adjacency, dtype=bool)
        if adj.shape != (self.n, self.n):
            raise ValueError("adjacency must be n x n")
        if np.any(adj != adj.T):
            raise ValueError("adjacency must be symmetric")
        if np.any(np.diag(adj)):
            raise ValueError("self-loops are not stored")
        if not _connected(adj):
            raise ValueError("communication graph must be connected")
        self.adjacency = adj

    @property
    def degrees(self) -> np.ndarray:
        return self.adjacency.sum(axis=1)

    @property
    def edge_count(self) -> int:
        return int(self.adjacency.sum()) // 2


def _connected(adj: np.ndarray) -> bool:
    n = adj.shape[0]
    seen = np.zeros(n, dtype=bool)
    stack = [0]
    seen[0] = True
    while stack:
        i = stack.pop()
        for j in np.nonzero(adj[i])[0]:
            if not seen[j]:
                seen[j] = True
                stack.append(int(j))
    return bool(seen.all())


def complete(n: int) -> Topology:
    """All-linked structure: every pair of agents connected."""
    if n < 2:
        raise ValueError("need at least two agents")
    adj = ~np.eye(n, dtype=bool)
    return Topology(n=n, adjacency=adj)


def star(n: int, hub: int = 0) -> Topology:
    """One-to-many structure: only the hub talks to everyone."""
    if n < 2:
        raise ValueError("need at least two agents")
    if not 0 <= hub < n:
        raise ValueError(f"hub {hub} out of range for n={n}")
    adj = np.zeros((n, n), dtype=bool)
    adj[hub, :] = True
    adj[:, hub] = True
    adj[hub, hub] = False
    return Topology(n=n, adjacency=adj)


def nearest_k_ring(n: int, k: int = 2) -> Topology:
    """Ring where each agent links its k nearest neighbors (k even)."""
    if k % 2 != 0 or not 2 <= k < n:
        raise ValueError(f"k must be even with 2 <= k < n, got k={k}, n={n}")
    adj = np.zeros((n, n), dtype=bool)
    for off in range(1, k // 2 + 1):
        idx = np.arange(n)
        adj[idx, (idx + off) % n] = True
        adj[(idx + off) % n, idx] = True
    return Topology(n=n, adjacency=adj)


@dataclass
class WeightMatrix:
    w: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise ValueError("weight matrix must be square")
        self.w = w

    @property
    def n(self) -> int:
        return self.w.shape[0]

    def validate(self, topology: Topology | None = None, tol: float = 1e-12):
        w = self.w
        if np.any(w < -tol):
            raise ValueError("weights must be nonnegative")
        if np.max(np.abs(w.sum(axis=1) - 1.0)) > tol:
            raise ValueError("every row must sum to 1")
        if np.max(np.abs(w.sum(axis=0) - 1.0)) > tol:
            raise ValueError("every column must sum to 1")
        if np.max(np.abs(w - w.T)) > tol:
            raise ValueError("weight matrix must be symmetric")
        if topology is not None:
            allowed = topology.adjacency | np.eye(self.n, dtype=bool)
            if np.any((np.abs(w) > tol) & ~allowed):
                raise ValueError("nonzero weight off the communication graph")
            if spectral_gap(self) <= 0:
                raise ValueError("mixing matrix does not contract disagreement")


def metropolis_weights(topology: Topology) -> WeightMatrix:
    """Metropolis-Hastings mixing weights for a connected graph."""
    deg = topology.degrees
    n = topology.n
    w = np.zeros((n, n))
    for i in range(n):
        for j in np.nonzero(topology.adjacency[i])[0]:
            w[i, j] = 1.0 / (1.0 + max(deg[i], deg[j]))
        w[i, i] = 1.0 - w[i].sum()
    wm = WeightMatrix(w=w)
    wm.validate(topology)
    return wm


def spectral_gap(w: WeightMatrix) -> float:
    """1 - |second largest eigenvalue|; larger means faster mixing."""
    vals = np.linalg.eigvalsh(w.w)
    mags = np.sort(np.abs(vals))[::-1]
    return float(1.0 - mags[1]) if len(mags) > 1 else 1.0
