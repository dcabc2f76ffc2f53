"""Box geometry and the killed walk.

The mean exit time from a box is solvable exactly: on the interior,
(I - P) t = 1 with t = 0 outside, where P is the walk's one-step kernel
including per-step killing. The Monte Carlo side is driven by our own
stream generator, so agreement checks step and kill semantics at once.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from loopsoup.errors import GuardError
from loopsoup.lattice import (LatticeSpec, boundary, neighbors, norm_inf,
                              sites, walk_until_killed)
from loopsoup.rng import RngStream


def test_spec_rejects_bad_parameters():
    with pytest.raises(GuardError):
        LatticeSpec(0, 3)
    with pytest.raises(GuardError):
        LatticeSpec(2, -1)
    with pytest.raises(GuardError):
        LatticeSpec(2, 3, -0.1)
    with pytest.raises(GuardError):
        LatticeSpec(2, 3, float("nan"))


def test_site_count_and_side():
    spec = LatticeSpec(3, 2)
    assert spec.side == 5
    assert spec.site_count == 125


@given(d=st.integers(1, 4), m=st.integers(0, 3))
@settings(max_examples=30, deadline=None)
def test_index_coordinate_round_trip(d, m):
    spec = LatticeSpec(d, m)
    seen = set()
    for idx, site in enumerate(sites(spec)):
        assert spec.site_coords(idx) == site
        assert spec.site_index(site) == idx
        seen.add(site)
    assert len(seen) == spec.site_count


def test_index_order_is_lexicographic():
    spec = LatticeSpec(2, 1)
    listed = list(sites(spec))
    assert listed == sorted(listed)
    assert listed[0] == (-1, -1)
    assert listed[-1] == (1, 1)


def test_site_index_guards():
    spec = LatticeSpec(2, 1)
    with pytest.raises(GuardError):
        spec.site_index((2, 0))
    with pytest.raises(GuardError):
        spec.site_coords(9)
    with pytest.raises(GuardError):
        spec.site_coords(-1)


def test_in_box_boundary_cases():
    spec = LatticeSpec(3, 2)
    assert spec.in_box((2, -2, 0))
    assert not spec.in_box((3, 0, 0))
    assert not spec.in_box((0, 0, -3))


def test_norm_inf():
    assert norm_inf((0, 0)) == 0
    assert norm_inf((-3, 2)) == 3
    assert norm_inf((1, -1, 1)) == 1


def test_neighbors_structure():
    nb = neighbors((0, 0), 2)
    assert nb == [(-1, 0), (1, 0), (0, -1), (0, 1)]
    assert all(sum(abs(a - b) for a, b in zip(n, (5, -2, 7))) == 1
               for n in neighbors((5, -2, 7), 3))
    with pytest.raises(GuardError):
        neighbors((0, 0), 3)


def test_boundary_is_outer_shell():
    spec = LatticeSpec(2, 2)
    b = boundary(spec)
    assert b == {s for s in sites(spec) if norm_inf(s) == 2}
    assert boundary(LatticeSpec(3, 0)) == {(0, 0, 0)}


def test_walk_guards():
    spec = LatticeSpec(2, 2)
    rng = RngStream(1, 0)
    with pytest.raises(GuardError):
        walk_until_killed((3, 0), set(), spec, rng)
    with pytest.raises(GuardError):
        walk_until_killed((0, 0), {(0, 0)}, spec, rng)


def test_walk_terminals_are_consistent():
    spec = LatticeSpec(2, 3, 0.5)
    killed = {(1, 1)}
    rng = RngStream(8, 0)
    saw = set()
    for _ in range(2000):
        res = walk_until_killed((0, 0), killed, spec, rng)
        saw.add(res.terminal)
        assert res.path[0] == (0, 0)
        assert res.steps == len(res.path) - 1
        for a, b in zip(res.path, res.path[1:]):
            assert sum(abs(x - y) for x, y in zip(a, b)) == 1
        if res.terminal == "exited":
            assert not spec.in_box(res.path[-1])
            assert all(spec.in_box(s) for s in res.path[:-1])
        elif res.terminal == "killed":
            assert res.path[-1] in killed
            assert all(s not in killed for s in res.path[:-1])
        else:
            assert res.terminal == "death"
            assert spec.in_box(res.path[-1])
            assert res.path[-1] not in killed
    assert saw == {"exited", "killed", "death"}


def test_walk_accepts_predicate_killed_set():
    spec = LatticeSpec(2, 3)
    rng = RngStream(9, 0)
    res = walk_until_killed((0, 0), lambda s: s == (0, 1), spec, rng)
    assert res.terminal in ("exited", "killed")
    if res.terminal == "killed":
        assert res.path[-1] == (0, 1)


def _exact_mean_exit_steps(spec: LatticeSpec, killed=frozenset()):
    """Solve (I - P) t = 1 on the box minus the killed set.

    t(x) counts direction draws, including the final exiting or vetoed
    step but not a step cut short by per-step death; that matches
    WalkResult.steps plus one death correction handled by the caller.
    """
    live = [s for s in sites(spec) if s not in killed]
    pos = {s: i for i, s in enumerate(live)}
    n = len(live)
    d = spec.dimension
    surv = 1.0 / (1.0 + spec.kappa)
    A = np.eye(n)
    rhs = np.ones(n)
    for s in live:
        i = pos[s]
        for nb in neighbors(s, d):
            if spec.in_box(nb) and nb not in killed:
                A[i, pos[nb]] -= surv / (2 * d)
    return {s: t for s, t in zip(live, np.linalg.solve(A, rhs))}


@pytest.mark.parametrize("d,m,kappa,killed", [
    (1, 4, 0.0, frozenset()),
    (2, 3, 0.0, frozenset({(1, 1), (-2, 0)})),
    (2, 2, 0.3, frozenset()),
])
def test_mean_exit_time_matches_linear_solve(d, m, kappa, killed):
    spec = LatticeSpec(d, m, kappa)
    start = (0,) * d
    exact = _exact_mean_exit_steps(spec, killed)[start]
    rng = RngStream(4242, d)
    n = 20_000
    total = 0.0
    sq = 0.0
    for _ in range(n):
        res = walk_until_killed(start, killed, spec, rng)
        # steps counts completed moves; a death terminal consumed one
        # survival draw for the uncompleted step, which the exact kernel
        # also charges, so add it back
        x = res.steps + (1 if res.terminal == "death" else 0)
        total += x
        sq += x * x
    mean = total / n
    se = math.sqrt(max(sq / n - mean * mean, 0.0) / n)
    assert abs(mean - exact) < 4 * se + 1e-9


def test_exit_position_uniform_on_faces_by_symmetry():
    # from the center of a symmetric box every face is hit equally often
    spec = LatticeSpec(2, 2)
    rng = RngStream(515, 0)
    counts = {"x-": 0, "x+": 0, "y-": 0, "y+": 0}
    n = 8000
    for _ in range(n):
        res = walk_until_killed((0, 0), set(), spec, rng)
        x, y = res.path[-1]
        if x < -2:
            counts["x-"] += 1
        elif x > 2:
            counts["x+"] += 1
        elif y < -2:
            counts["y-"] += 1
        else:
            counts["y+"] += 1
    from scipy import stats

    chi2 = sum((c - n / 4) ** 2 / (n / 4) for c in counts.values())
    assert stats.chi2.sf(chi2, 3) > 1e-3
