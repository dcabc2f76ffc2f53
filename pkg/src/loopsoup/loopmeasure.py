"""Exact loop-measure computation.

A based loop is a cyclic site sequence; loops are equivalence classes under
rotation, represented canonically by the lexicographically minimal rotation.
The class mass under the kappa-killed walk measure is

    mass = (1/m) * (2d(1+kappa))^(-n),

with n the length and m the multiplicity (largest k such that the sequence
is a k-fold repetition).  On top of the masses sit determinant identities:
the mass of loops hitting a finite set F is log det(G|_F), avoidance
probabilities are det(G|_F)^(-alpha), and inclusion-exclusion over subsets
gives the mass of loops visiting every point of a list.  A brute-force
enumerator over tiny boxes provides an independent check of all of it.
"""

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import GuardError
from .green import bessel_grid, green_free_asymptotic
from .lattice import LatticeSpec

_DET_SITE_LIMIT = 1000
_VISIT_POINT_LIMIT = 20
_ENUM_SITE_LIMIT = 64
_ENUM_LENGTH_LIMIT = 14


@dataclass(frozen=True)
class Loop:
    """Rotation class of a based loop, stored as its canonical rotation."""

    sites: tuple
    multiplicity: int
    length: int

    def __post_init__(self):
        if self.length != len(self.sites):
            raise GuardError("loop length disagrees with site count")


def _adjacent(x, y) -> bool:
    diff = 0
    for a, b in zip(x, y):
        diff += abs(a - b)
        if diff > 1:
            return False
    return diff == 1


def validate_based_loop(sites) -> tuple:
    seq = tuple(tuple(int(c) for c in s) for s in sites)
    if len(seq) < 2:
        raise GuardError("a based loop visits at least two sites")
    dims = {len(s) for s in seq}
    if len(dims) != 1:
        raise GuardError("mixed coordinate dimensions in loop")
    for i, site in enumerate(seq):
        if not _adjacent(site, seq[(i + 1) % len(seq)]):
            raise GuardError(
                f"consecutive sites {site} and {seq[(i + 1) % len(seq)]} not adjacent")
    return seq


def canonicalize(sites) -> Loop:
    """Canonical representative (lexicographically minimal rotation)."""
    seq = validate_based_loop(sites)
    n = len(seq)
    best = min(range(n), key=lambda i: seq[i:] + seq[:i])
    canon = seq[best:] + seq[:best]
    period = n
    for p in range(1, n):
        if n % p == 0 and canon[p:] + canon[:p] == canon:
            period = p
            break
    return Loop(canon, n // period, n)


def loop_mass(loop: Loop, d: int, kappa: float) -> float:
    """Class mass (1/m) * (2d(1+kappa))^(-n); kappa > -1 accepted."""
    if kappa <= -1.0:
        raise GuardError("kappa must exceed -1")
    return (2.0 * d * (1.0 + kappa)) ** (-loop.length) / loop.multiplicity


def _submatrix_logdet(g: np.ndarray) -> float:
    sign, logdet = np.linalg.slogdet(g)
    if sign <= 0:
        raise GuardError("Green submatrix not positive definite; inputs inconsistent")
    return float(logdet)


def mu_hit_mass(fsites, table) -> float:
    """Loop-measure mass of loops meeting F: log det(G|_F)."""
    fsites = [tuple(s) for s in fsites]
    if not fsites:
        return 0.0
    if len(fsites) > _DET_SITE_LIMIT:
        raise GuardError(f"determinant limited to {_DET_SITE_LIMIT} sites")
    if len(set(fsites)) != len(fsites):
        raise GuardError("duplicate sites in F")
    return _submatrix_logdet(table.submatrix(fsites))


def mu_visit_all(points, table) -> float:
    """Mass of loops visiting every listed point, by inclusion-exclusion.

    For two points this reduces to -log(1 - G(x,y)^2/(G(x,x)G(y,y))).
    Cost is 2^k determinants, hence the point-count guard.
    """
    points = [tuple(s) for s in points]
    if not points:
        raise GuardError("need at least one point")
    if len(points) > _VISIT_POINT_LIMIT:
        raise GuardError(f"inclusion-exclusion limited to {_VISIT_POINT_LIMIT} points")
    if len(set(points)) != len(points):
        raise GuardError("duplicate points")
    full = table.submatrix(points)
    total = 0.0
    k = len(points)
    for mask in range(1, 1 << k):
        idx = [i for i in range(k) if mask >> i & 1]
        sub = full[np.ix_(idx, idx)]
        term = _submatrix_logdet(sub)
        total += term if len(idx) % 2 == 1 else -term
    return total


def prob_avoid(fsites, alpha: float, table) -> float:
    """P[no soup loop meets F] = det(G|_F)^(-alpha)."""
    if alpha <= 0:
        raise GuardError("alpha must be positive")
    return math.exp(-alpha * mu_hit_mass(fsites, table))


def cov_occupancy(x, y, alpha: float, table) -> float:
    """Covariance of the occupancy indicators of two distinct sites."""
    x, y = tuple(x), tuple(y)
    if x == y:
        raise GuardError("occupancy covariance needs distinct sites")
    gxx = table.entry(x, x)
    gyy = table.entry(y, y)
    gxy = table.entry(x, y)
    rho2 = gxy * gxy / (gxx * gyy)
    return (gxx * gyy) ** (-alpha) * ((1.0 - rho2) ** (-alpha) - 1.0)


def p_single_loop_two_point(x, alpha: float, table, origin=None) -> float:
    """P[some single loop visits both the origin and x]."""
    x = tuple(x)
    if origin is None:
        origin = (0,) * len(x)
    origin = tuple(origin)
    if x == origin:
        raise GuardError("offset must differ from the origin")
    g00 = table.entry(origin, origin)
    gxx = table.entry(x, x)
    g0x = table.entry(origin, x)
    rho2 = g0x * g0x / (g00 * gxx)
    return -math.expm1(alpha * math.log1p(-rho2))


@dataclass(frozen=True)
class FirstShellValue:
    value: float
    tail_width: float
    truncation_radius: int


@lru_cache(maxsize=32)
def _orbit_correlations(d: int, radius: int):
    """Per-orbit (count, correlation^2) for 0 < |x|_inf <= radius, free Z^d.

    Sites are grouped by sorted absolute coordinates; each orbit needs one
    Green value, evaluated on a shared quadrature grid.
    """
    wt, table = bessel_grid(d, radius)
    g00 = float(np.dot(wt, table[0] ** d))
    sizes = []
    rho2 = []
    for rep in itertools.combinations_with_replacement(range(radius + 1), d):
        if rep == (0,) * d:
            continue
        integrand = np.prod(table[list(rep)], axis=0)
        g = float(np.dot(wt, integrand))
        denom = 1
        for _, group in itertools.groupby(rep):
            denom *= math.factorial(len(list(group)))
        count = math.factorial(d) // denom * 2 ** sum(1 for c in rep if c != 0)
        sizes.append(count)
        rho2.append((g / g00) ** 2)
    return np.asarray(sizes, dtype=np.float64), np.asarray(rho2)


def _tail_bound(alpha: float, d: int, radius: int) -> float:
    """Bound on the neglected sum over |x|_inf > radius.

    Uses 1-(1-u)^alpha <= max(alpha,1)*u and the large-distance form of G
    with a 1.5x inflation margin for subleading corrections; shells beyond
    an explicit window are bounded by the integral comparison.
    """
    wt, table = bessel_grid(d, 0)
    g00 = float(np.dot(wt, table[0] ** d))
    c_d = d * math.gamma(d / 2.0) / ((d - 2) * math.pi ** (d / 2.0))
    base = (c_d / g00) ** 2
    total = 0.0
    r_stop = max(radius + 32, 64)
    for r in range(radius + 1, r_stop + 1):
        count = (2 * r + 1) ** d - (2 * r - 1) ** d
        total += count * base * (r + 1.0) ** (2 * (2 - d))
    remainder = d * 2**d * base * (r_stop + 2.0) ** (4 - d) / (d - 4)
    return max(alpha, 1.0) * 1.5 * (total + remainder)


def expected_first_shell(alpha: float, d: int, truncation_radius: int = 10) -> FirstShellValue:
    """Expected count of sites sharing a loop with the origin, free Z^d.

    Sums the single-loop two-point probability over the box of the given
    radius and returns it together with an analytic bound on the neglected
    exterior.  Finite only for d >= 5.
    """
    if d <= 4:
        raise GuardError(
            "first-shell expectation diverges for d <= 4 "
            "(two-point sum not summable); need d >= 5")
    if alpha <= 0:
        raise GuardError("alpha must be positive")
    if truncation_radius < 1:
        raise GuardError("truncation radius must be >= 1")
    sizes, rho2 = _orbit_correlations(d, truncation_radius)
    probs = -np.expm1(alpha * np.log1p(-rho2))
    value = float(np.dot(sizes, probs))
    return FirstShellValue(value, _tail_bound(alpha, d, truncation_radius),
                           truncation_radius)


def solve_unit_first_shell(d: int, truncation_radius: int = 8,
                           lo: float = 1e-6, hi: float = 512.0) -> float:
    """The alpha at which the expected first shell equals one.

    The expectation is strictly increasing in alpha, so bisection applies.
    """
    f_lo = expected_first_shell(lo, d, truncation_radius).value - 1.0
    f_hi = expected_first_shell(hi, d, truncation_radius).value - 1.0
    if f_lo >= 0 or f_hi <= 0:
        raise GuardError("unit first-shell level not bracketed in the alpha range")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if expected_first_shell(mid, d, truncation_radius).value > 1.0:
            hi = mid
        else:
            lo = mid
        if hi - lo < 1e-12 * max(hi, 1.0):
            break
    return 0.5 * (lo + hi)


def enumerate_loops(spec: LatticeSpec, killed=(), lmax: int = 12):
    """All loop classes of length <= lmax inside the box, with exact masses.

    Brute force with distance pruning; guarded to tiny state spaces.  The
    result is sorted by decreasing mass, ties broken by canonical sites.
    """
    if spec.site_count > _ENUM_SITE_LIMIT:
        raise GuardError(f"enumerator limited to {_ENUM_SITE_LIMIT} sites")
    if not 2 <= lmax <= _ENUM_LENGTH_LIMIT:
        raise GuardError(f"enumerator length limited to {_ENUM_LENGTH_LIMIT}")
    killed = {tuple(s) for s in killed}
    live = [s for s in _box_sites(spec) if s not in killed]
    live_rank = {s: i for i, s in enumerate(live)}
    found = {}
    d = spec.dimension

    def neighbors_live(site, min_rank):
        out = []
        for a in range(d):
            for delta in (-1, 1):
                nb = site[:a] + (site[a] + delta,) + site[a + 1:]
                rank = live_rank.get(nb)
                if rank is not None and rank >= min_rank:
                    out.append(nb)
        return out

    def manhattan(x, y):
        return sum(abs(a - b) for a, b in zip(x, y))

    path = []

    def extend(start, rank0):
        # A path of k sites has used k-1 edges; reaching nb and walking home
        # costs at least 1 + manhattan(nb, start) more, so nb is viable only
        # when manhattan(nb, start) <= lmax - k.
        budget = lmax - len(path)
        for nb in neighbors_live(path[-1], rank0):
            if nb == start and len(path) >= 2:
                loop = canonicalize(path)
                if loop not in found:
                    found[loop] = loop_mass(loop, d, spec.kappa)
            if len(path) < lmax and manhattan(nb, start) <= budget:
                path.append(nb)
                extend(start, rank0)
                path.pop()

    for start in live:
        path[:] = [start]
        extend(start, live_rank[start])
    return sorted(found.items(), key=lambda kv: (-kv[1], kv[0].sites))


def enumerate_tail_bound(spec: LatticeSpec, killed=(), lmax: int = 12) -> float:
    """Bound on the total mass of loops longer than lmax in the box.

    Length-n class masses sum to Tr(A^n) * (2d(1+kappa))^(-n) / n with A the
    live adjacency matrix, so the spectral radius of the weighted walk gives
    a geometric bound.
    """
    if spec.site_count > _ENUM_SITE_LIMIT:
        raise GuardError(f"tail bound limited to {_ENUM_SITE_LIMIT} sites")
    killed = {tuple(s) for s in killed}
    live = [s for s in _box_sites(spec) if s not in killed]
    if not live:
        return 0.0
    rank = {s: i for i, s in enumerate(live)}
    adj = np.zeros((len(live), len(live)))
    d = spec.dimension
    for s in live:
        i = rank[s]
        for a in range(d):
            for delta in (-1, 1):
                nb = s[:a] + (s[a] + delta,) + s[a + 1:]
                j = rank.get(nb)
                if j is not None:
                    adj[i, j] = 1.0
    lam_max = float(np.linalg.eigvalsh(adj)[-1])
    rho = lam_max / (2.0 * d * (1.0 + spec.kappa))
    if rho >= 1.0:
        raise GuardError("walk weight not contracting on the live graph")
    n = lmax + 1
    return len(live) * rho ** n / (n * (1.0 - rho))


def _box_sites(spec: LatticeSpec):
    rng = range(-spec.box_radius, spec.box_radius + 1)
    return [s for s in itertools.product(rng, repeat=spec.dimension)]
