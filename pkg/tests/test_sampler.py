"""Soup sampling laws checked against the exact measure.

Each statistical test fixes its seed, computes the exact law from the
Green table, and bounds the observed deviation by a z-score or a
chi-square p-value. Tolerances are wide enough that a correct sampler
fails with probability well under 1e-4 per test.
"""

import math
from collections import Counter

import pytest

from loopsoup.errors import GuardError, KernelError
from loopsoup.green import GreenTable
from loopsoup.lattice import LatticeSpec, sites
from loopsoup.loopmeasure import canonicalize, enumerate_loops, prob_avoid
from loopsoup.sampler import (SoupParams, jmax_for, jmax_free, occupation,
                              occupation_field, sample_soup, thin_soup)

SPEC = LatticeSpec(2, 1)
TABLE = GreenTable(SPEC)


def _soups(alpha, seed, count, spec=SPEC, **kw):
    for i in range(count):
        yield sample_soup(SoupParams(alpha, spec, seed, stream=i, **kw))


def test_same_params_identical_sample():
    a = sample_soup(SoupParams(1.0, SPEC, 11, stream=4))
    b = sample_soup(SoupParams(1.0, SPEC, 11, stream=4))
    assert a.loops == b.loops
    assert a.manifest == b.manifest
    c = sample_soup(SoupParams(1.0, SPEC, 11, stream=5))
    d = sample_soup(SoupParams(1.0, SPEC, 12, stream=4))
    assert (a.loops != c.loops) or (a.loops != d.loops)


def test_sampled_loops_are_canonical_and_in_box():
    for sample in _soups(2.0, 21, 300):
        for loop in sample.loops:
            assert canonicalize(loop.sites) == loop
            assert all(SPEC.in_box(s) for s in loop.sites)
            assert loop.length >= 2
    assert sample.total_length == sum(l.length for l in sample.loops)


def test_loop_count_is_poisson_with_total_mass_mean():
    """Mean and variance of the per-soup loop count match alpha * mu."""
    from loopsoup.loopmeasure import mu_hit_mass

    alpha, n = 1.5, 30_000
    mean_expected = alpha * mu_hit_mass(tuple(sites(SPEC)), TABLE)
    counts = [len(s.loops) for s in _soups(alpha, 31, n)]
    mean = sum(counts) / n
    var = sum((c - mean) ** 2 for c in counts) / n
    se = math.sqrt(mean_expected / n)
    assert abs(mean - mean_expected) < 4 * se
    # Poisson: variance equals the mean
    assert abs(var - mean_expected) < 5 * math.sqrt(2 * mean_expected ** 2 / n)


def test_class_frequencies_match_masses():
    alpha, n = 1.0, 30_000
    top = enumerate_loops(SPEC, lmax=6)[:8]
    observed = Counter()
    for sample in _soups(alpha, 41, n):
        observed.update(loop.sites for loop in sample.loops)
    for loop, mass in top:
        lam = alpha * mass * n
        z = (observed[loop.sites] - lam) / math.sqrt(lam)
        assert abs(z) < 4.0, (loop.sites, z)


def test_avoidance_probability_matches_determinant():
    alpha, n = 1.0, 30_000
    fsets = [((0, 0),), ((0, 0), (1, 0)), ((0, 0), (1, 0), (0, 1))]
    hits = [0] * len(fsets)
    for sample in _soups(alpha, 51, n):
        visited = set()
        for loop in sample.loops:
            visited.update(loop.sites)
        for i, f in enumerate(fsets):
            if not visited.intersection(f):
                hits[i] += 1
    for i, f in enumerate(fsets):
        p = prob_avoid(f, alpha, TABLE)
        z = (hits[i] - n * p) / math.sqrt(n * p * (1 - p))
        assert abs(z) < 4.0, (f, z)


def test_occupation_is_negative_binomial():
    """Visit counts at a site follow NB(alpha, 1 - 1/G(x,x)).

    At alpha = 1 that's geometric; the chi-square below buckets k = 0..5
    with a lumped tail.
    """
    from scipy import stats

    alpha, n, v = 1.0, 30_000, (0, 0)
    g = TABLE.entry(v, v)
    q = 1.0 - 1.0 / g
    counts = Counter(occupation(s, v) for s in _soups(alpha, 61, n))
    probs = [(1 - q) * q ** k for k in range(6)]
    probs.append(1.0 - sum(probs))
    obs = [counts[k] for k in range(6)]
    obs.append(n - sum(obs))
    chi2 = sum((o - n * p) ** 2 / (n * p) for o, p in zip(obs, probs))
    assert stats.chi2.sf(chi2, len(probs) - 1) > 1e-3
    mean = sum(k * c for k, c in counts.items()) / n
    assert abs(mean - alpha * (g - 1.0)) < 0.05


def test_occupation_field_consistency():
    sample = sample_soup(SoupParams(3.0, SPEC, 71, stream=2))
    field = occupation_field(sample)
    for x in sites(SPEC):
        assert field.visits.get(x, 0) == occupation(sample, x)
    assert sum(field.visits.values()) == sample.total_length


def test_vertex_order_leaves_the_law_alone():
    """Different sweep orders give different draws, one distribution.

    Both orders are held against the exact expected loop count, which is
    sharper than comparing the two noisy means with each other.
    """
    from loopsoup.loopmeasure import mu_hit_mass

    n = 50_000
    exact = mu_hit_mass(tuple(sites(SPEC)), TABLE)
    backward = tuple(reversed(range(SPEC.site_count)))
    mean_f = sum(len(s.loops) for s in _soups(1.0, 81, n)) / n
    mean_b = sum(len(s.loops)
                 for s in (sample_soup(SoupParams(1.0, SPEC, 81, stream=i,
                                                  vertex_order=backward))
                           for i in range(n))) / n
    se = math.sqrt(exact / n)
    assert abs(mean_f - exact) < 4 * se
    assert abs(mean_b - exact) < 4 * se
    assert mean_f != mean_b  # same seed, different sweep: different draws


def test_alpha_additivity_of_loop_counts():
    n = 20_000
    m1 = sum(len(s.loops) for s in _soups(0.7, 91, n)) / n
    m2 = sum(len(s.loops) for s in _soups(1.4, 92, n)) / n
    se = math.sqrt((m2 + 4 * m1) / n)
    assert abs(m2 - 2 * m1) < 4 * se


def test_thinning_is_a_literal_subset():
    parent = sample_soup(SoupParams(2.0, SPEC, 101, stream=0))
    child = thin_soup(parent, 1.0, 0.0)
    assert not Counter(child.loops) - Counter(parent.loops)
    assert child.params.alpha == 1.0


def test_thinning_boundary_keep_probabilities():
    keep_all = keep_half = total = 0
    for i in range(4000):
        parent = sample_soup(SoupParams(1.0, SPEC, 111, stream=i))
        total += len(parent.loops)
        keep_all += len(thin_soup(parent, 1.0, 0.0).loops)
        keep_half += len(thin_soup(parent, 0.5, 0.0).loops)
    assert keep_all == total
    z = (keep_half - total / 2) / math.sqrt(total / 4)
    assert abs(z) < 4.0


def test_thinning_by_kappa_prefers_short_loops():
    # raising kappa keeps a length-n loop with probability (1/(1+k1))^n,
    # so surviving loops are shorter on average
    kept_lengths = []
    parent_lengths = []
    for i in range(4000):
        parent = sample_soup(SoupParams(1.0, SPEC, 121, stream=i))
        parent_lengths += [l.length for l in parent.loops]
        kept_lengths += [l.length for l in thin_soup(parent, 0.2, 1.0).loops]
    assert kept_lengths
    assert (sum(kept_lengths) / len(kept_lengths)
            < sum(parent_lengths) / len(parent_lengths))


def test_thinning_guards():
    parent = sample_soup(SoupParams(1.0, SPEC, 131, stream=0))
    with pytest.raises(GuardError):
        thin_soup(parent, 1.0, -0.5)
    with pytest.raises(GuardError):
        thin_soup(parent, 1.5, 0.0)


def test_jmax_bounds():
    assert jmax_for(SPEC, 1.0) >= 1
    assert jmax_for(SPEC, 100.0) > jmax_for(SPEC, 0.01)
    assert jmax_free(3, 1.0) >= 1
    assert jmax_free(3, 100.0) > jmax_free(3, 0.01)


def test_total_length_cap_guard():
    with pytest.raises(KernelError):
        sample_soup(SoupParams(50.0, LatticeSpec(2, 3), 141,
                               max_total_length=3))
