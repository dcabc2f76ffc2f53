"""Exact sampling of the Poisson loop ensemble restricted to a box.

The sampler decomposes the soup by minimal vertex.  Processing box sites
in a fixed order, site v at stage i owns exactly the loops whose earliest
site (in that order) is v.  For each multiplicity j up to a cap, it draws
Poisson(alpha/j) candidates and keeps a candidate iff j independent
excursions from v all return to v before leaving the box, stepping on an
earlier-stage site, or dying at rate kappa/(1+kappa) per step.  Accepted
candidates concatenate their excursions into one loop.  The acceptance
probability F^j is never computed, only simulated, which is what lets the
sweep scale: no per-vertex linear algebra at all.

The cap J is chosen so the discarded intensity, at most
alpha * F^(J+1) / ((J+1)(1-F)) with F bounded through one center-column
Green solve, stays below 1e-12 for the whole box.
"""

from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .errors import GuardError
from .green import green_column
from .lattice import LatticeSpec
from .loopmeasure import Loop, canonicalize
from .rng import RngStream, stream_from_prefix, stream_prefix

_RESIDUAL_CEILING = 1e-12
_JMAX_HARD_CAP = 4096
_THIN_PREFIX = stream_prefix("thin-soup", 0)


def _jmax_from_gbar(g_bar: float, alpha: float) -> int:
    f_bar = 1.0 - 1.0 / g_bar
    if f_bar <= 0.0:
        return 1
    for j in range(1, _JMAX_HARD_CAP + 1):
        residual = alpha * f_bar ** (j + 1) / ((j + 1) * (1.0 - f_bar))
        if residual < _RESIDUAL_CEILING:
            return j
    raise GuardError("no multiplicity cap below 4096 meets the residual bound")


@lru_cache(maxsize=256)
def jmax_free(d: int, alpha: float) -> int:
    """Multiplicity cap from the free-lattice Green diagonal.

    The free value dominates the killed-box diagonal for every box and
    every kappa >= 0, so this cap is valid wherever :func:`jmax_for` is,
    without a per-box linear solve.  Requires d >= 3.
    """
    if alpha <= 0:
        raise GuardError(f"alpha must be positive, got {alpha!r}")
    from .green import green_free

    return _jmax_from_gbar(green_free(d, (0,) * d), alpha)


@lru_cache(maxsize=1024)
def jmax_for(spec: LatticeSpec, alpha: float) -> int:
    """Smallest multiplicity cap J with residual intensity below 1e-12.

    The residual after truncating at J is sum_{j>J} alpha F^j / j, at most
    alpha F^(J+1) / ((J+1)(1-F)).  F, the conditioned return probability,
    is bounded by 1 - 1/G(c,c) at the box center c, where the diagonal
    Green value is largest.
    """
    if alpha <= 0:
        raise GuardError(f"alpha must be positive, got {alpha!r}")
    center = (0,) * spec.dimension
    cidx = spec.site_index(center)
    g_center = float(green_column(spec, (), center)[cidx])
    return _jmax_from_gbar(g_center, alpha)


@dataclass(frozen=True)
class SoupParams:
    """Everything that determines one soup draw, bit for bit.

    ``vertex_order`` is a permutation of dense site indices (None means
    ascending, which is lexicographic in coordinates).  ``jmax`` of None
    asks for the smallest cap meeting the residual bound; an explicit cap
    is validated against the same bound.
    """

    alpha: float
    spec: LatticeSpec
    seed: int
    stream: int = 0
    vertex_order: Optional[tuple] = None
    jmax: Optional[int] = None
    max_total_length: int = 50_000_000

    def __post_init__(self):
        if not self.alpha > 0:
            raise GuardError(f"alpha must be positive, got {self.alpha!r}")
        if self.spec.kappa < 0:
            raise GuardError("sampling requires kappa >= 0")
        if self.vertex_order is not None:
            order = tuple(int(v) for v in self.vertex_order)
            n = self.spec.site_count
            if len(order) != n or set(order) != set(range(n)):
                raise GuardError("vertex_order must be a permutation of all box sites")
            object.__setattr__(self, "vertex_order", order)
        needed = jmax_for(self.spec, self.alpha)
        if self.jmax is None:
            object.__setattr__(self, "jmax", needed)
        elif self.jmax < needed:
            raise GuardError(
                f"multiplicity cap {self.jmax} leaves residual intensity above "
                f"1e-12; need at least {needed}")

    @property
    def kappa(self) -> float:
        return self.spec.kappa


@dataclass
class SoupSample:
    """One realization: canonical loops plus full provenance."""

    loops: list
    params: SoupParams
    manifest: dict

    @property
    def total_length(self) -> int:
        return sum(lp.length for lp in self.loops)


def _decode_coords(spec: LatticeSpec, flat: np.ndarray) -> np.ndarray:
    """Dense site indices -> (n, d) coordinate array, C-order convention."""
    d = spec.dimension
    side = spec.side
    m = spec.box_radius
    out = np.empty((flat.size, d), dtype=np.int64)
    rem = flat.astype(np.int64, copy=True)
    for a in range(d - 1, -1, -1):
        out[:, a] = rem % side - m
        rem //= side
    return out


def sample_soup(params: SoupParams) -> SoupSample:
    """Draw one soup; identical params give an identical sample."""
    spec = params.spec
    order = None if params.vertex_order is None else np.asarray(params.vertex_order,
                                                                dtype=np.int64)
    lengths, minvertex, mult, flat_sites = kernels.sweep_soup(
        spec.dimension, spec.box_radius, spec.kappa, params.alpha, params.jmax,
        params.seed, params.stream, order=order,
        max_total_length=params.max_total_length)
    coords = _decode_coords(spec, flat_sites)
    loops = []
    offset = 0
    for n in lengths:
        n = int(n)
        seq = tuple(map(tuple, coords[offset:offset + n]))
        offset += n
        loops.append(canonicalize(seq))
    manifest = {
        "version": 1,
        "seed": params.seed,
        "stream": params.stream,
        "alpha": params.alpha,
        "kappa": spec.kappa,
        "dimension": spec.dimension,
        "box_radius": spec.box_radius,
        "jmax": params.jmax,
        "n_loops": len(loops),
        "total_length": int(lengths.sum()) if len(loops) else 0,
        "compiled_kernels": kernels.COMPILED,
    }
    return SoupSample(loops=loops, params=params, manifest=manifest)


@dataclass
class OccupationField:
    """Visit counts per site; total mass equals summed loop length."""

    visits: dict

    def total(self) -> int:
        return sum(self.visits.values())


def occupation(sample: SoupSample, x: Sequence[int]) -> int:
    """Total visits of site x over all loops (length-n loop: n visits)."""
    x = tuple(x)
    return sum(1 for lp in sample.loops for s in lp.sites if s == x)


def occupation_field(sample: SoupSample) -> OccupationField:
    visits = {}
    for lp in sample.loops:
        for s in lp.sites:
            visits[s] = visits.get(s, 0) + 1
    return OccupationField(visits)


def thin_soup(sample: SoupSample, alpha1: float, kappa1: float) -> SoupSample:
    """Keep each loop independently so the result is the soup at (alpha1, kappa1).

    A loop of length n survives with probability
    (alpha1/alpha0) * ((1+kappa0)/(1+kappa1))^n, which requires kappa1 >=
    kappa0 and alpha1 <= alpha0 ((1+kappa1)/(1+kappa0))^2 so the shortest
    loops (n=2) are not asked to survive with probability above one.  The
    kept loops are the same Loop objects, so the output is a literal
    subset of the input ensemble and couplings stay monotone.
    """
    p0 = sample.params
    alpha0, kappa0 = p0.alpha, p0.spec.kappa
    if kappa1 < kappa0:
        raise GuardError(f"thinning cannot lower kappa ({kappa0} -> {kappa1})")
    ratio = (1.0 + kappa0) / (1.0 + kappa1)
    if alpha1 > alpha0 / ratio**2:
        raise GuardError(
            "thinning target out of range: keep probability would exceed 1 "
            "for loops of length 2")
    if not alpha1 > 0:
        raise GuardError(f"alpha must be positive, got {alpha1!r}")
    rng = RngStream(p0.seed, stream_from_prefix(_THIN_PREFIX, p0.stream))
    scale = alpha1 / alpha0
    kept = [lp for lp in sample.loops
            if rng.double53() < scale * ratio**lp.length]
    new_spec = LatticeSpec(p0.spec.dimension, p0.spec.box_radius, kappa1)
    new_params = SoupParams(alpha=alpha1, spec=new_spec, seed=p0.seed,
                            stream=p0.stream, vertex_order=p0.vertex_order,
                            max_total_length=p0.max_total_length)
    manifest = dict(sample.manifest)
    manifest.update({
        "alpha": alpha1,
        "kappa": kappa1,
        "n_loops": len(kept),
        "total_length": sum(lp.length for lp in kept),
        "thinned_from": {"alpha": alpha0, "kappa": kappa0,
                         "n_loops": len(sample.loops)},
    })
    return SoupSample(loops=kept, params=new_params, manifest=manifest)
