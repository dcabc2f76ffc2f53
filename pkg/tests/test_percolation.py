"""Cluster structure of soups, checked against hand-built references.

Handcrafted loop configurations give exact expected clusters; sampled
soups then confirm the same invariants statistically and the union-find
route against a plain BFS the test implements itself.
"""

import math
from collections import Counter, deque

import pytest

from loopsoup.errors import GuardError
from loopsoup.green import CapacityEstimate
from loopsoup.lattice import LatticeSpec, norm_inf
from loopsoup.loopmeasure import canonicalize
from loopsoup.percolation import (UnionFind, cluster_capacity, cluster_of,
                                  crossing, loop_adjacency, one_arm,
                                  open_edges, u_set_count)
from loopsoup.sampler import SoupParams, SoupSample, sample_soup, thin_soup


def _made(loops, d=2, m=4, alpha=1.0):
    params = SoupParams(alpha, LatticeSpec(d, m), 1)
    return SoupSample(loops=[canonicalize(l) for l in loops], params=params,
                      manifest={})


def _bfs_cluster(edges, start):
    adj = {}
    for a, b in edges:
        adj.setdefault(a, set()).add(b)
        adj.setdefault(b, set()).add(a)
    if start not in adj:
        return set()
    seen = {start}
    queue = deque([start])
    while queue:
        cur = queue.popleft()
        for nxt in adj[cur]:
            if nxt not in seen:
                seen.add(nxt)
                queue.append(nxt)
    return seen


def test_open_edges_includes_closing_step():
    sample = _made([((0, 0), (1, 0))])
    assert open_edges(sample) == frozenset({((0, 0), (1, 0))})
    square = _made([((0, 0), (1, 0), (1, 1), (0, 1))])
    assert len(open_edges(square)) == 4
    assert (((0, 0), (0, 1)) in open_edges(square))  # the closing edge


def test_union_find_components():
    uf = UnionFind()
    for x in range(8):
        uf.add(x)
    for a, b in [(0, 1), (1, 2), (4, 5), (6, 7), (5, 6)]:
        uf.union(a, b)
    assert uf.component(0) == {0, 1, 2}
    assert uf.component(3) == {3}
    assert uf.component(7) == {4, 5, 6, 7}
    assert uf.component("absent") == set()


def test_cluster_matches_bfs_on_samples():
    spec = LatticeSpec(2, 2)
    for i in range(400):
        sample = sample_soup(SoupParams(1.5, spec, 17, stream=i))
        edges = open_edges(sample)
        report = cluster_of(sample, (0, 0))
        assert set(report.origin_cluster) == _bfs_cluster(edges, (0, 0))


def test_empty_cluster_convention():
    report = cluster_of(_made([((2, 2), (3, 2))]), (0, 0))
    assert report.size == 0
    assert report.reached_radius == 0
    assert report.shells == {}
    assert report.origin_cluster == frozenset()


def test_cluster_shells_on_a_chain_of_loops():
    # three loops in a row: origin loop, a neighbor, a second neighbor
    sample = _made([((0, 0), (1, 0)), ((1, 0), (2, 0)), ((2, 0), (3, 0))])
    report = cluster_of(sample, (0, 0))
    assert report.size == 4
    assert report.reached_radius == 3
    # shell index is the shortest loop-chain length reaching each site
    assert report.shells == {0: 1, 1: 1, 2: 1, 3: 1}
    assert sum(report.shells.values()) == report.size


def test_cluster_shells_sum_to_size_on_samples():
    spec = LatticeSpec(2, 2)
    for i in range(300):
        report = cluster_of(sample_soup(SoupParams(2.0, spec, 27, stream=i)),
                            (0, 0))
        assert sum(report.shells.values()) == report.size
        if report.size:
            assert report.shells[0] == 1
            assert report.reached_radius == max(
                norm_inf(s) for s in report.origin_cluster)


def test_loop_adjacency_shared_sites():
    loops = [canonicalize(((0, 0), (1, 0))),
             canonicalize(((1, 0), (2, 0))),
             canonicalize(((3, 3), (3, 4)))]
    assert loop_adjacency(loops) == [[1], [0], []]


def test_translation_moves_the_cluster():
    base = [((0, 0), (1, 0)), ((1, 0), (1, 1))]
    shift = (1, -2)
    moved = [tuple(tuple(c + s for c, s in zip(site, shift)) for site in l)
             for l in base]
    rep0 = cluster_of(_made(base), (0, 0))
    rep1 = cluster_of(_made(moved), shift)
    assert rep1.size == rep0.size
    assert rep1.shells == rep0.shells
    assert {tuple(c - s for c, s in zip(site, shift))
            for site in rep1.origin_cluster} == set(rep0.origin_cluster)


def test_one_arm_equals_reached_radius_threshold():
    spec = LatticeSpec(2, 4)
    for i in range(200):
        sample = sample_soup(SoupParams(1.5, spec, 37, stream=i))
        report = cluster_of(sample, (0, 0))
        assert one_arm(sample, 2) == (report.reached_radius >= 2)
    with pytest.raises(GuardError):
        one_arm(sample, 3)  # needs box_radius >= box_factor * n


def test_arm_probability_grows_with_the_box():
    """A larger box can only add loops, so the arm event gains mass."""
    n_rep, n = 3000, 2
    hits = {}
    for m in (4, 6):
        spec = LatticeSpec(2, m)
        hits[m] = sum(one_arm(sample_soup(SoupParams(1.0, spec, 47, stream=i)),
                              n) for i in range(n_rep))
    p4, p6 = hits[4] / n_rep, hits[6] / n_rep
    se = math.sqrt((p4 * (1 - p4) + p6 * (1 - p6)) / n_rep)
    assert p6 >= p4 - 4 * se


def test_crossing_on_handcrafted_paths():
    bridge = [((0, 0), (1, 0)), ((1, 0), (2, 0)), ((2, 0), (3, 0))]
    sample = _made(bridge, m=8)
    assert crossing(sample, 1, 3)
    assert not crossing(sample, 1, 4)
    # a path that stays away from the inner ball does not cross
    outer = _made([((3, 0), (4, 0))], m=8)
    assert not crossing(outer, 1, 4)
    with pytest.raises(GuardError):
        crossing(sample, 3, 3)
    with pytest.raises(GuardError):
        crossing(sample, 1, 5)  # above box_radius / box_factor


def test_u_set_counts_on_a_loop_chain():
    chain = [((0, 0), (1, 0)), ((1, 0), (2, 0)), ((2, 0), (3, 0))]
    sample = _made(chain)
    assert u_set_count(sample, 1) == 1  # (1,0)
    assert u_set_count(sample, 2) == 2  # (1,0) and (2,0)
    assert u_set_count(sample, 3) == 2  # (2,0) and (3,0)
    assert u_set_count(sample, 4) == 0  # no chain of four distinct loops
    with pytest.raises(GuardError):
        u_set_count(sample, 0)
    with pytest.raises(GuardError):
        u_set_count(sample, 5)


def test_u_set_chain_requires_disjoint_nonconsecutive_loops():
    # the third loop revisits (1,0), so A-B-C is not an exact chain
    loops = [((0, 0), (1, 0)), ((1, 0), (2, 0)), ((2, 0), (1, 0))]
    sample = _made(loops)
    assert u_set_count(sample, 3) == 0


def test_u_set_empty_when_origin_unvisited():
    assert u_set_count(_made([((2, 2), (3, 2))]), 1) == 0


def test_thinned_cluster_is_contained():
    spec = LatticeSpec(2, 2)
    for i in range(500):
        parent = sample_soup(SoupParams(2.0, spec, 57, stream=i))
        child = thin_soup(parent, 1.0, 0.0)
        assert not Counter(child.loops) - Counter(parent.loops)
        pc = cluster_of(parent, (0, 0)).origin_cluster
        cc = cluster_of(child, (0, 0)).origin_cluster
        assert cc <= pc


def test_cluster_capacity_restriction_and_empty():
    params = SoupParams(1.0, LatticeSpec(3, 6), 1)
    far = SoupSample(loops=[canonicalize(((0, 0, 0), (1, 0, 0), (2, 0, 0),
                                          (3, 0, 0), (2, 0, 0), (1, 0, 0)))],
                     params=params, manifest={})
    # the only origin loop leaves B(0,2), so the restricted cluster is empty
    est = cluster_capacity(far, 2, walkers=50, seed=3)
    assert est.value == 0.0 and est.detail.get("empty")
    near = SoupSample(loops=[canonicalize(((0, 0, 0), (1, 0, 0)))],
                      params=params, manifest={})
    est_on = cluster_capacity(near, 2, walkers=400, seed=3)
    assert isinstance(est_on, CapacityEstimate)
    assert est_on.value > 0.0


def test_cluster_capacity_guards():
    sample = sample_soup(SoupParams(1.0, LatticeSpec(2, 2), 1))
    with pytest.raises(GuardError):
        cluster_capacity(sample, 1, 10, seed=1)  # d=2 unsupported
    sample3 = sample_soup(SoupParams(1.0, LatticeSpec(3, 2), 1))
    with pytest.raises(GuardError):
        cluster_capacity(sample3, 0, 10, seed=1)
