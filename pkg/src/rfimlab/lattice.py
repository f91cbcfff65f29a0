"""Finite hypercubic lattices V_n = Z^d ∩ [1, n]^d with free boundaries."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import CapacityError, ValidationError

# Hard guard on the number of sites any engine will ever be handed.
MAX_VOLUME = 1 << 20


@dataclass(frozen=True)
class LatticeSpec:
    """Sites in lexicographic order plus the nearest-neighbour edge list.

    ``sites`` has shape (n**d, d) with 1-based coordinates; ``edges`` has
    shape (n_edges, 2) with ``edges[k, 0] < edges[k, 1]``.
    """

    d: int
    n: int
    sites: np.ndarray = field(repr=False, compare=False)
    edges: np.ndarray = field(repr=False, compare=False)

    @property
    def volume(self) -> int:
        return self.n**self.d

    def index(self, site: Sequence[int]) -> int:
        """Lexicographic index of a 1-based coordinate vector."""
        if len(site) != self.d:
            raise ValidationError(f"site {tuple(site)} has dimension {len(site)}, lattice has d={self.d}")
        idx = 0
        for c in site:
            if not 1 <= c <= self.n:
                raise ValidationError(f"site {tuple(site)} outside [1, {self.n}]^{self.d}")
            idx = idx * self.n + (int(c) - 1)
        return idx

    def neighbors(self) -> list[list[int]]:
        out: list[list[int]] = [[] for _ in range(self.volume)]
        for i, j in self.edges:
            out[i].append(int(j))
            out[j].append(int(i))
        return out

    def csr_neighbors(self) -> tuple[np.ndarray, np.ndarray]:
        """Neighbour lists as (offsets, indices) arrays for compiled kernels."""
        nbrs = self.neighbors()
        offsets = np.zeros(self.volume + 1, dtype=np.int64)
        offsets[1:] = np.cumsum([len(a) for a in nbrs])
        indices = np.array([j for a in nbrs for j in a], dtype=np.int64)
        return offsets, indices


def build_lattice(d: int, n: int, max_volume: int = MAX_VOLUME) -> LatticeSpec:
    if d < 1:
        raise ValidationError(f"dimension d must be >= 1, got {d}")
    if n < 1:
        raise ValidationError(f"side length n must be >= 1, got {n}")
    volume = n**d
    if volume > max_volume:
        raise CapacityError(f"lattice volume {n}^{d} = {volume} exceeds cap {max_volume}")

    sites = np.array(list(itertools.product(range(1, n + 1), repeat=d)), dtype=np.int64).reshape(volume, d)
    # Neighbour along axis a of index i is i + n**(d-1-a) when that coordinate < n.
    idx = np.arange(volume)
    edges = []
    for axis in range(d):
        stride = n ** (d - 1 - axis)
        mask = sites[:, axis] < n
        src = idx[mask]
        edges.append(np.stack([src, src + stride], axis=1))
    edge_arr = np.concatenate(edges) if edges else np.empty((0, 2), dtype=np.int64)
    order = np.lexsort((edge_arr[:, 1], edge_arr[:, 0]))
    edge_arr = edge_arr[order].astype(np.int64)
    return LatticeSpec(d=d, n=n, sites=sites, edges=edge_arr)


def site_norm(site: Sequence[int], origin: Sequence[int]) -> int:
    """L1 (graph) distance between two lattice sites."""
    if len(site) != len(origin):
        raise ValidationError(f"dimension mismatch: {len(site)} vs {len(origin)}")
    return int(sum(abs(int(a) - int(b)) for a, b in zip(site, origin)))


def site_norms(spec: LatticeSpec, origin: Sequence[int]) -> np.ndarray:
    if len(origin) != spec.d:
        raise ValidationError(f"dimension mismatch: origin has {len(origin)}, lattice has d={spec.d}")
    return np.abs(spec.sites - np.asarray(origin, dtype=np.int64)).sum(axis=1)
