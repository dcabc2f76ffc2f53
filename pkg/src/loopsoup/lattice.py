"""Z^d box geometry and the killed simple random walk.

Sites live in the centered box B(0,M) = [-M, M]^d and map bijectively onto
dense indices in [0, (2M+1)^d) in C order (axis 0 slowest).  The walk steps
uniformly over the 2d neighbors and can die three ways: leaving the box,
landing on a vetoed site, or failing the per-step survival check, which
passes with probability 1/(1+kappa).
"""

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

from .errors import GuardError, KernelError
from .rng import RngStream

STEP_CAP = 10**9

Site = tuple  # integer coordinate tuple of length d


@dataclass(frozen=True)
class LatticeSpec:
    """Box geometry plus killing rate."""

    dimension: int
    box_radius: int
    kappa: float = 0.0

    def __post_init__(self):
        if not isinstance(self.dimension, int) or self.dimension < 1:
            raise GuardError(f"dimension must be a positive integer, got {self.dimension!r}")
        if not isinstance(self.box_radius, int) or self.box_radius < 0:
            raise GuardError(f"box_radius must be a nonnegative integer, got {self.box_radius!r}")
        if not (self.kappa >= 0.0):
            raise GuardError(f"kappa must be >= 0 for lattice walks, got {self.kappa!r}")

    @property
    def side(self) -> int:
        return 2 * self.box_radius + 1

    @property
    def site_count(self) -> int:
        return self.side**self.dimension

    def in_box(self, site: Sequence[int]) -> bool:
        m = self.box_radius
        return all(-m <= c <= m for c in site)

    def site_index(self, site: Sequence[int]) -> int:
        """Dense index; lexicographic coordinate order equals index order."""
        m = self.box_radius
        side = self.side
        idx = 0
        for c in site:
            if not -m <= c <= m:
                raise GuardError(f"site {tuple(site)} outside box of radius {m}")
            idx = idx * side + (c + m)
        return idx

    def site_coords(self, index: int) -> Site:
        if not 0 <= index < self.site_count:
            raise GuardError(f"index {index} out of range for box of radius {self.box_radius}")
        m = self.box_radius
        side = self.side
        coords = []
        for _ in range(self.dimension):
            index, rem = divmod(index, side)
            coords.append(rem - m)
        return tuple(reversed(coords))


def norm_inf(site: Sequence[int]) -> int:
    return max(abs(c) for c in site)


def neighbors(site: Sequence[int], d: int) -> list:
    """The 2d lattice neighbors, axis-major with minus before plus."""
    if len(site) != d:
        raise GuardError(f"site of length {len(site)} does not match d={d}")
    out = []
    for axis in range(d):
        for delta in (-1, 1):
            s = list(site)
            s[axis] += delta
            out.append(tuple(s))
    return out


def boundary(spec: LatticeSpec) -> set:
    """Sites of the box having at least one neighbor outside it."""
    m = spec.box_radius
    if m == 0:
        return {(0,) * spec.dimension}
    out = set()
    for idx in range(spec.site_count):
        site = spec.site_coords(idx)
        if norm_inf(site) == m:
            out.add(site)
    return out


@dataclass
class WalkResult:
    """Trajectory of one killed walk.

    ``path`` starts at the initial site.  For the ``exited`` and ``killed``
    terminals, the offending site is included as the last element; a
    ``death`` terminal (per-step killing) leaves the path at the last
    surviving site, since the walker never completes that step.
    """

    path: list = field(default_factory=list)
    terminal: str = ""  # "exited" | "killed" | "death"

    @property
    def steps(self) -> int:
        return len(self.path) - 1


def _as_predicate(killed) -> Callable[[Site], bool]:
    if callable(killed):
        return killed
    killed_set = set(map(tuple, killed)) if not isinstance(killed, (set, frozenset)) else killed
    return lambda s: s in killed_set


def walk_until_killed(start: Sequence[int], killed, spec: LatticeSpec, rng: RngStream) -> WalkResult:
    """Run one walk from ``start`` until it exits, is vetoed, or dies.

    ``killed`` may be a set of sites or a predicate.  The draw order is
    fixed: when kappa > 0, one survival uniform precedes each direction
    draw; at kappa == 0 no survival draw is consumed.
    """
    start = tuple(start)
    is_killed = _as_predicate(killed)
    if not spec.in_box(start):
        raise GuardError(f"walk start {start} outside box")
    if is_killed(start):
        raise GuardError(f"walk start {start} is a killed site")

    d = spec.dimension
    m = spec.box_radius
    kappa = spec.kappa
    survive = 1.0 / (1.0 + kappa) if kappa > 0.0 else 1.0
    path = [start]
    pos = list(start)
    for _ in range(STEP_CAP):
        if kappa > 0.0 and not rng.double53() < survive:
            return WalkResult(path, "death")
        r = rng.randbelow(2 * d)
        axis = r >> 1
        pos[axis] += 1 if (r & 1) else -1
        site = tuple(pos)
        path.append(site)
        if not -m <= pos[axis] <= m:
            return WalkResult(path, "exited")
        if is_killed(site):
            return WalkResult(path, "killed")
    raise KernelError(f"walk exceeded step cap {STEP_CAP}")


def sites(spec: LatticeSpec) -> Iterable[Site]:
    """All box sites in dense-index (lexicographic) order."""
    for idx in range(spec.site_count):
        yield spec.site_coords(idx)
