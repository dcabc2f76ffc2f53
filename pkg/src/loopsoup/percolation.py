"""Percolation structure of a sampled soup.

An edge is open when some loop traverses it (the closing step counts).
Clusters are connected components of open edges, so a site on no loop has
an empty cluster: this convention is fixed here once and used everywhere,
because it decides P[#C(0) > 0].

Loop distance is computed on the loop-intersection graph: loops are nodes,
adjacent when they share a site.  A site's shell index is the length of
the shortest loop chain from the start site to it, which matches a
site-level definition but is much cheaper to compute.
"""

from dataclasses import dataclass
from typing import Optional, Sequence

from .errors import GuardError
from .green import CapacityEstimate, capacity_mc
from .lattice import norm_inf
from .sampler import SoupSample

import numpy as np


def open_edges(sample: SoupSample) -> frozenset:
    """Undirected edges traversed by at least one loop, closing pair included."""
    edges = set()
    for lp in sample.loops:
        seq = lp.sites
        n = lp.length
        for i in range(n):
            a, b = seq[i], seq[(i + 1) % n]
            edges.add((a, b) if a <= b else (b, a))
    return frozenset(edges)


class UnionFind:
    """Disjoint sets over hashable items, path halving plus union by size."""

    def __init__(self):
        self.parent = {}
        self.size = {}

    def add(self, x):
        if x not in self.parent:
            self.parent[x] = x
            self.size[x] = 1

    def find(self, x):
        p = self.parent
        while p[x] != x:
            p[x] = p[p[x]]
            x = p[x]
        return x

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return
        if self.size[ra] < self.size[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]

    def component(self, x) -> set:
        if x not in self.parent:
            return set()
        root = self.find(x)
        return {y for y in self.parent if self.find(y) == root}


@dataclass
class ClusterReport:
    """The open cluster of one site with its loop-distance decomposition."""

    origin_cluster: frozenset
    size: int
    reached_radius: int
    shells: dict
    capacity: Optional[CapacityEstimate] = None


def loop_adjacency(loops) -> list:
    """Adjacency lists of the loop-intersection graph (shared-site edges)."""
    site_owners = {}
    for i, lp in enumerate(loops):
        for s in set(lp.sites):
            site_owners.setdefault(s, []).append(i)
    adjacency = [set() for _ in loops]
    for owners in site_owners.values():
        for i in owners:
            for j in owners:
                if i != j:
                    adjacency[i].add(j)
    return [sorted(a) for a in adjacency]


def _loop_levels(loops, start) -> list:
    """BFS levels on the loop graph from the loops through ``start``.

    Level of a loop is the length of the shortest chain ending at it whose
    first loop contains ``start``; unreachable loops get level 0 sentinel -1.
    """
    adjacency = loop_adjacency(loops)
    level = [-1] * len(loops)
    queue = []
    for i, lp in enumerate(loops):
        if start in lp.sites:
            level[i] = 1
            queue.append(i)
    head = 0
    while head < len(queue):
        i = queue[head]
        head += 1
        for j in adjacency[i]:
            if level[j] < 0:
                level[j] = level[i] + 1
                queue.append(j)
    return level


def cluster_of(sample: SoupSample, x: Sequence[int]) -> ClusterReport:
    """Open cluster of x, its sup-norm reach, and loop-distance shells.

    The cluster set comes from union-find over open edges; shells come
    from loop-graph BFS.  A site on no loop yields the empty report.
    """
    x = tuple(x)
    uf = UnionFind()
    for a, b in open_edges(sample):
        uf.add(a)
        uf.add(b)
        uf.union(a, b)
    cluster = uf.component(x)
    if not cluster:
        return ClusterReport(frozenset(), 0, 0, {})

    level = _loop_levels(sample.loops, x)
    shells = {0: 1}
    site_level = {}
    for i, lp in enumerate(sample.loops):
        if level[i] < 0:
            continue
        for s in lp.sites:
            if s == x:
                continue
            prev = site_level.get(s)
            if prev is None or level[i] < prev:
                site_level[s] = level[i]
    for s, lv in site_level.items():
        shells[lv] = shells.get(lv, 0) + 1
    return ClusterReport(
        origin_cluster=frozenset(cluster),
        size=len(cluster),
        reached_radius=max(norm_inf(s) for s in cluster),
        shells=shells,
    )


def one_arm(sample: SoupSample, n: int, box_factor: float = 2.0) -> bool:
    """Whether the cluster of the origin reaches sup-norm n.

    Requires n at most boxRadius/box_factor so that the event is decided
    by loops the box can actually contain.
    """
    m = sample.params.spec.box_radius
    if n > m / box_factor:
        raise GuardError(
            f"one-arm radius {n} above truncation bound {m}/{box_factor}")
    origin = (0,) * sample.params.spec.dimension
    return cluster_of(sample, origin).reached_radius >= n


def crossing(sample: SoupSample, n: int, m: int, box_factor: float = 2.0) -> bool:
    """Whether any open cluster joins B(0,n) to the sphere of radius m."""
    box_radius = sample.params.spec.box_radius
    if not n < m:
        raise GuardError(f"crossing needs n < m, got {n} >= {m}")
    if m > box_radius / box_factor:
        raise GuardError(
            f"crossing radius {m} above truncation bound {box_radius}/{box_factor}")
    uf = UnionFind()
    for a, b in open_edges(sample):
        uf.add(a)
        uf.add(b)
        uf.union(a, b)
    reach_min = {}
    reach_max = {}
    for s in uf.parent:
        root = uf.find(s)
        r = norm_inf(s)
        if root not in reach_min:
            reach_min[root] = r
            reach_max[root] = r
        else:
            reach_min[root] = min(reach_min[root], r)
            reach_max[root] = max(reach_max[root], r)
    return any(reach_min[r] <= n and reach_max[r] >= m for r in reach_min)


def u_set_count(sample: SoupSample, k: int) -> int:
    """Number of sites x != 0 at the end of an exact-pattern chain of k loops.

    A valid chain l_1..l_k has 0 on l_1, consecutive loops sharing a site,
    non-consecutive loops disjoint, and x on l_k.  The loops of a chain
    are distinct ensemble atoms.  The search is exponential in k, hence
    the guard.
    """
    if not 1 <= k <= 4:
        raise GuardError(f"chain length must be between 1 and 4, got {k}")
    loops = sample.loops
    origin = (0,) * sample.params.spec.dimension
    site_sets = [frozenset(lp.sites) for lp in loops]
    starts = [i for i, ss in enumerate(site_sets) if origin in ss]
    if not starts:
        return 0
    adjacency = loop_adjacency(loops)
    endpoints = set()

    def extend(chain):
        if len(chain) == k:
            endpoints.update(site_sets[chain[-1]])
            return
        last = chain[-1]
        for j in adjacency[last]:
            if j in chain:
                continue
            if any(site_sets[j] & site_sets[i] for i in chain[:-1]):
                continue
            chain.append(j)
            extend(chain)
            chain.pop()

    for i in starts:
        extend([i])
    endpoints.discard(origin)
    return len(endpoints)


def cluster_capacity(sample: SoupSample, k: int, walkers: int, seed: int,
                     stream: int = 0) -> CapacityEstimate:
    """Capacity of the origin cluster grown from loops inside B(0,k) only."""
    d = sample.params.spec.dimension
    if d not in (3, 4):
        raise GuardError(f"cluster capacity growth is a d in {{3,4}} experiment, got d={d}")
    if k < 1:
        raise GuardError("containment radius must be at least 1")
    inner = [lp for lp in sample.loops if all(norm_inf(s) <= k for s in lp.sites)]
    sub = SoupSample(loops=inner, params=sample.params,
                     manifest=dict(sample.manifest, restricted_to=k))
    origin = (0,) * d
    report = cluster_of(sub, origin)
    if report.size == 0:
        return CapacityEstimate(0.0, 0.0, detail={"empty": True})
    coords = np.asarray(sorted(report.origin_cluster), dtype=np.int64)
    return capacity_mc(coords, 2 * k, walkers, d, seed, stream=stream)
