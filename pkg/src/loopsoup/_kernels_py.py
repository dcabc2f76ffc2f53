"""Pure-Python simulation kernels: the reference implementation.

The compiled extension ``_kernels`` reimplements every function in this file
with identical semantics, identical draw order, and identical float
arithmetic, so outputs are bit-identical between the two on one platform.
The contract, shared by all kernels:

* Randomness comes from SplitMix64 streams (see ``rng``).  One u64 draw per
  direction choice, mapped as ``axis = r >> 1``, minus step when the low bit
  is 0.  When kappa > 0 a survival uniform precedes every direction draw
  (``double53() < 1/(1+kappa)``); at kappa == 0 no survival draw happens.
* Poisson counts use cumulative-product inversion against a precomputed
  L = exp(-lambda).
* Box sites are dense C-order indices: index = sum (c_a + M) * side^(d-1-a),
  so lexicographic coordinate order equals index order.
* A candidate loop at vertex v with multiplicity j runs its j excursion
  attempts in order and stops at the first failed attempt.  An excursion
  fails on box exit, on a vetoed site, or on kappa-death; it succeeds when
  it first returns to v.  Accepted candidates concatenate their excursions;
  the recorded site sequence is the full step sequence starting at v, with
  each return to v starting the next excursion.

All heavy outputs are numpy arrays to keep parity checks trivial.
"""

import math

import numpy as np

from .errors import GuardError, KernelError
from .rng import GOLDEN, MASK64, mix64, stream_from_prefix, stream_start, substream

STEP_CAP = 10**9


def _strides(d, side):
    st = [1] * d
    for a in range(d - 2, -1, -1):
        st[a] = st[a + 1] * side
    return st


def _poisson_tables(alpha, jmax):
    return [math.exp(-alpha / j) for j in range(1, jmax + 1)]


class _Stream:
    """Local mirror of rng.RngStream with inlined state (hot path)."""

    __slots__ = ("state",)

    def __init__(self, seed, sid):
        self.state = stream_start(seed, sid)

    def u64(self):
        self.state = (self.state + GOLDEN) & MASK64
        return mix64(self.state)

    def double53(self):
        return (self.u64() >> 11) * 1.1102230246251565e-16

    def randbelow(self, k):
        return (self.u64() * k) >> 64

    def poisson_from_l(self, l_value):
        k = 0
        p = 1.0
        while True:
            p *= self.double53()
            if p <= l_value:
                return k
            k += 1


def sweep_soup(d, box_radius, kappa, alpha, jmax, seed, sid, order=None,
               max_total_length=50_000_000):
    """Sample one full soup on B(0, box_radius).

    Vertices are processed in ``order`` (dense indices; default ascending =
    lexicographic).  Vertex at stage i uses the derived stream
    ``substream(sid, i)``, so results do not depend on scheduling.

    Returns (lengths, minvertex, mult, sites): per-loop lengths, base vertex
    index, multiplicity, and the concatenated site-index sequences.
    """
    if d > 64:
        raise GuardError("kernels support dimension <= 64")
    side = 2 * box_radius + 1
    nsites = side**d
    if nsites > 70_000_000:
        raise GuardError(f"box with {nsites} sites exceeds the sweep budget")
    strides = _strides(d, side)
    if order is None:
        order_arr = range(nsites)
        rank = None  # rank equals index
    else:
        order_arr = np.asarray(order, dtype=np.int64)
        if len(order_arr) != nsites or len(set(order_arr.tolist())) != nsites:
            raise GuardError("order must be a permutation of all box sites")
        rank = np.empty(nsites, dtype=np.int64)
        rank[order_arr] = np.arange(nsites)
    ltab = _poisson_tables(alpha, jmax)
    survive = 1.0 / (1.0 + kappa)
    has_kappa = kappa > 0.0
    two_d = 2 * d

    lengths, minvertex, mult, all_sites = [], [], [], []
    total = 0

    for stage, vidx in enumerate(order_arr):
        vidx = int(vidx)
        vcoords = []
        rem = vidx
        for a in range(d):
            vcoords.append(rem // strides[a] - box_radius)
            rem %= strides[a]
        st = _Stream(seed, substream(sid, stage))
        for j in range(1, jmax + 1):
            n_j = st.poisson_from_l(ltab[j - 1])
            for _ in range(n_j):
                cand = []
                ok = True
                for _attempt in range(j):
                    cand.append(vidx)
                    pos = list(vcoords)
                    idx = vidx
                    steps = 0
                    while True:
                        if has_kappa and not st.double53() < survive:
                            ok = False
                            break
                        r = st.randbelow(two_d)
                        axis = r >> 1
                        if r & 1:
                            pos[axis] += 1
                            idx += strides[axis]
                        else:
                            pos[axis] -= 1
                            idx -= strides[axis]
                        if not -box_radius <= pos[axis] <= box_radius:
                            ok = False
                            break
                        if idx == vidx:
                            break  # excursion closed
                        if (rank[idx] if rank is not None else idx) < stage:
                            ok = False
                            break
                        cand.append(idx)
                        steps += 1
                        if steps > STEP_CAP:
                            raise KernelError("excursion exceeded step cap")
                    if not ok:
                        break
                if ok:
                    n = len(cand)
                    lengths.append(n)
                    minvertex.append(vidx)
                    mult.append(j)
                    all_sites.extend(cand)
                    total += n
                    if total > max_total_length:
                        raise KernelError(
                            f"soup total length exceeded budget {max_total_length}")
    return (np.asarray(lengths, dtype=np.int64),
            np.asarray(minvertex, dtype=np.int64),
            np.asarray(mult, dtype=np.int32),
            np.asarray(all_sites, dtype=np.int64))


def box_stage_batch(d, box_radius, kappa, alpha, jmax, seed, prefix, replica_offset,
                    n_replicas, seeds, target=None, collect_shell=False):
    """Sample, per replica, only the loops through a short staged seed list.

    ``seeds`` is an (s, d) array of coordinates, s <= 4.  Stage i draws the
    loops whose minimal vertex (in stage order) is seeds[i]: walks are
    vetoed at seeds[0..i-1] and at box exit.  Loops through none of the
    seeds are never generated; this leaves the law of every reported
    statistic unchanged because those loops cannot visit the seeds.

    Replica r uses stream id ``stream_from_prefix(prefix, replica_offset+r)``.

    Returns a dict of per-replica arrays:
      xi0        total visits to seeds[0] by stage-0 loops (the occupation
                 count of seeds[0] when it is first in stage order),
      nloops     accepted loop count,
      total_len  summed loop length,
      maxr       max sup-norm over all accepted loop sites (0 if none),
      occ        bitmask, bit i set iff seeds[i] lies on some accepted loop,
      target_hit 1 iff some accepted loop visits ``target``,
      shell      when collect_shell: distinct accepted-loop sites minus the
                 seed sites among them (for a single seed this is the size
                 of the set of other sites on loops through it).
    """
    if d > 64:
        raise GuardError("kernels support dimension <= 64")
    seeds = np.asarray(seeds, dtype=np.int64)
    if seeds.ndim != 2 or seeds.shape[1] != d:
        raise GuardError("seeds must be an (s, d) coordinate array")
    s_count = seeds.shape[0]
    if not 1 <= s_count <= 4:
        raise GuardError("between 1 and 4 staged seeds supported")
    side = 2 * box_radius + 1
    strides = _strides(d, side)
    seed_keys = []
    for i in range(s_count):
        key = 0
        for a in range(d):
            c = int(seeds[i, a])
            if not -box_radius <= c <= box_radius:
                raise GuardError("seed outside box")
            key += (c + box_radius) * strides[a]
        seed_keys.append(key)
    if len(set(seed_keys)) != s_count:
        raise GuardError("duplicate seeds")
    target_key = -1
    if target is not None:
        target_key = 0
        for a in range(d):
            c = int(target[a])
            if not -box_radius <= c <= box_radius:
                raise GuardError("target outside box")
            target_key += (c + box_radius) * strides[a]

    ltab = _poisson_tables(alpha, jmax)
    survive = 1.0 / (1.0 + kappa)
    has_kappa = kappa > 0.0
    two_d = 2 * d

    xi0 = np.zeros(n_replicas, dtype=np.int32)
    nloops = np.zeros(n_replicas, dtype=np.int32)
    total_len = np.zeros(n_replicas, dtype=np.int64)
    maxr = np.zeros(n_replicas, dtype=np.int32)
    occ = np.zeros(n_replicas, dtype=np.uint8)
    target_hit = np.zeros(n_replicas, dtype=np.uint8)
    shell = np.zeros(n_replicas, dtype=np.int64)

    for rep in range(n_replicas):
        st = _Stream(seed, stream_from_prefix(prefix, replica_offset + rep))
        rep_sites = [] if collect_shell else None
        rep_maxr = 0
        rep_occ = 0
        rep_hit = 0
        for i in range(s_count):
            vkey = seed_keys[i]
            vcoords = [int(seeds[i, a]) for a in range(d)]
            for j in range(1, jmax + 1):
                n_j = st.poisson_from_l(ltab[j - 1])
                for _ in range(n_j):
                    cand = [vkey]
                    cand_maxr = max(abs(c) for c in vcoords)
                    ok = True
                    for _attempt in range(j):
                        if _attempt > 0:
                            cand.append(vkey)
                        pos = list(vcoords)
                        idx = vkey
                        while True:
                            if has_kappa and not st.double53() < survive:
                                ok = False
                                break
                            r = st.randbelow(two_d)
                            axis = r >> 1
                            if r & 1:
                                pos[axis] += 1
                                idx += strides[axis]
                            else:
                                pos[axis] -= 1
                                idx -= strides[axis]
                            if not -box_radius <= pos[axis] <= box_radius:
                                ok = False
                                break
                            if idx == vkey:
                                break
                            vetoed = False
                            for t in range(i):
                                if idx == seed_keys[t]:
                                    vetoed = True
                                    break
                            if vetoed:
                                ok = False
                                break
                            cand.append(idx)
                            a_abs = abs(pos[axis])
                            if a_abs > cand_maxr:
                                cand_maxr = a_abs
                        if not ok:
                            break
                    if ok:
                        n = len(cand)
                        nloops[rep] += 1
                        total_len[rep] += n
                        if i == 0:
                            xi0[rep] += j
                        if cand_maxr > rep_maxr:
                            rep_maxr = cand_maxr
                        for w in cand:
                            for t in range(s_count):
                                if w == seed_keys[t]:
                                    rep_occ |= 1 << t
                            if w == target_key:
                                rep_hit = 1
                        if collect_shell:
                            rep_sites.extend(cand)
        maxr[rep] = rep_maxr
        occ[rep] = rep_occ
        target_hit[rep] = rep_hit
        if collect_shell and rep_sites:
            distinct = set(rep_sites)
            shell[rep] = len(distinct) - sum(1 for k in seed_keys if k in distinct)
    return {"xi0": xi0, "nloops": nloops, "total_len": total_len, "maxr": maxr,
            "occ": occ, "target_hit": target_hit, "shell": shell}


class ClusterWorkspace:
    """Reusable stamp arrays for exploring origin clusters in one box.

    ``explore`` lazily discovers the open cluster of a seed set: only loops
    through already-discovered sites are ever sampled.  Discovery is FIFO,
    so a site's discovery level equals its loop distance from the seeds,
    and loops avoiding every discovered site (which could never join the
    cluster) are skipped.  Restriction of a Poisson ensemble to the loops
    meeting a fixed growing set is again Poisson, so the cluster law is
    exactly that of a full-box soup.
    """

    def __init__(self, d, box_radius, memory_budget=2_000_000_000):
        if d > 64:
            raise GuardError("kernels support dimension <= 64")
        side = 2 * box_radius + 1
        nsites = side**d
        if nsites * 16 > memory_budget:
            raise GuardError(
                f"workspace for {nsites} sites exceeds memory budget {memory_budget}")
        self.d = d
        self.box_radius = box_radius
        self.side = side
        self.nsites = nsites
        self.strides = _strides(d, side)
        self._queued = np.zeros(nsites, dtype=np.uint32)
        self._killed = np.zeros(nsites, dtype=np.uint32)
        self._member = np.zeros(nsites, dtype=np.uint32)
        self._level = np.zeros(nsites, dtype=np.int32)
        self._token = 0

    def _next_token(self):
        self._token += 1
        if self._token >= 0xFFFFFFFF:
            self._queued[:] = 0
            self._killed[:] = 0
            self._member[:] = 0
            self._token = 1
        return self._token

    def explore(self, kappa, alpha, jmax, seed, sid, seed_indices, depth=-1,
                target_index=-1, collect_sites=False, shell_cap=64,
                max_total_length=200_000_000):
        d = self.d
        box_radius = self.box_radius
        strides = self.strides
        if target_index >= self.nsites:
            raise GuardError("target index out of range")
        token = self._next_token()
        queued, killed, member, level = self._queued, self._killed, self._member, self._level
        ltab = _poisson_tables(alpha, jmax)
        survive = 1.0 / (1.0 + kappa)
        has_kappa = kappa > 0.0
        two_d = 2 * d
        st = _Stream(seed, sid)

        queue = []
        for v in np.asarray(seed_indices, dtype=np.int64):
            v = int(v)
            if not 0 <= v < self.nsites:
                raise GuardError("seed index out of range")
            if queued[v] != token:
                queued[v] = token
                level[v] = 0
                queue.append(v)

        size = 0
        reached = 0
        n_loops = 0
        total_len = 0
        single_maxr = 0
        shells = np.zeros(shell_cap, dtype=np.int64)
        members = [] if collect_sites else None

        head = 0
        while head < len(queue):
            vidx = queue[head]
            head += 1
            vlevel = int(level[vidx])
            if depth >= 0 and vlevel >= depth:
                continue
            vcoords = []
            rem = vidx
            for a in range(d):
                vcoords.append(rem // strides[a] - box_radius)
                rem %= strides[a]
            for j in range(1, jmax + 1):
                n_j = st.poisson_from_l(ltab[j - 1])
                for _ in range(n_j):
                    cand = [vidx]
                    cand_maxr = max(abs(c) for c in vcoords)
                    ok = True
                    for _attempt in range(j):
                        if _attempt > 0:
                            cand.append(vidx)
                        pos = list(vcoords)
                        idx = vidx
                        while True:
                            if has_kappa and not st.double53() < survive:
                                ok = False
                                break
                            r = st.randbelow(two_d)
                            axis = r >> 1
                            if r & 1:
                                pos[axis] += 1
                                idx += strides[axis]
                            else:
                                pos[axis] -= 1
                                idx -= strides[axis]
                            if not -box_radius <= pos[axis] <= box_radius:
                                ok = False
                                break
                            if idx == vidx:
                                break
                            if killed[idx] == token:
                                ok = False
                                break
                            cand.append(idx)
                            a_abs = abs(pos[axis])
                            if a_abs > cand_maxr:
                                cand_maxr = a_abs
                        if not ok:
                            break
                    if ok:
                        n_loops += 1
                        total_len += len(cand)
                        if total_len > max_total_length:
                            raise KernelError("cluster exploration exceeded length budget")
                        if vlevel == 0 and cand_maxr > single_maxr:
                            single_maxr = cand_maxr
                        for w in cand:
                            if member[w] != token:
                                member[w] = token
                                size += 1
                                if queued[w] == token:
                                    wl = int(level[w])
                                else:
                                    wl = vlevel + 1
                                    queued[w] = token
                                    level[w] = wl
                                    queue.append(w)
                                if wl < shell_cap:
                                    shells[wl] += 1
                                wr = self._norm_of(w)
                                if wr > reached:
                                    reached = wr
                                if collect_sites:
                                    members.append(w)
            killed[vidx] = token
        return {
            "size": size,
            "reached_radius": reached,
            "n_loops": n_loops,
            "total_length": total_len,
            "single_max_radius": single_maxr,
            "target_hit": bool(target_index >= 0 and member[target_index] == token),
            "shell_sizes": shells,
            "sites": np.asarray(members, dtype=np.int64) if collect_sites else None,
        }

    def _norm_of(self, idx):
        m = 0
        for a in range(self.d):
            c = idx // self.strides[a] - self.box_radius
            idx %= self.strides[a]
            if abs(c) > m:
                m = abs(c)
        return m


def escape_counts(d, fsite_coords, escape_radius, walkers, seed, sid):
    """Escape-count Monte Carlo for the capacity of a finite site set.

    For every boundary site of F (a site of F with a lattice neighbor not
    in F), runs ``walkers`` free SRWs and counts those reaching sup-norm
    ``escape_radius`` before stepping onto F.  Returns (boundary_rows,
    counts): indices into ``fsite_coords`` and escape counts.
    """
    if d > 64:
        raise GuardError("kernels support dimension <= 64")
    coords = np.asarray(fsite_coords, dtype=np.int64)
    if coords.ndim != 2 or coords.shape[1] != d:
        raise GuardError("fsite_coords must be (n, d)")
    nf = coords.shape[0]
    if nf == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    mins = coords.min(axis=0) - 1
    maxs = coords.max(axis=0) + 1
    dims = (maxs - mins + 1).astype(np.int64)
    volume = int(np.prod(dims))
    if volume > 500_000_000:
        raise GuardError("capacity bitmap too large")
    bstr = [1] * d
    for a in range(d - 2, -1, -1):
        bstr[a] = bstr[a + 1] * int(dims[a + 1])
    bitmap = np.zeros(volume, dtype=np.uint8)
    fkeys = ((coords - mins[None, :]) * np.asarray(bstr)[None, :]).sum(axis=1)
    bitmap[fkeys] = 1

    def in_f(pos):
        key = 0
        for a in range(d):
            c = pos[a] - int(mins[a])
            if not 0 <= c < int(dims[a]):
                return False
            key += c * bstr[a]
        return bitmap[key] != 0

    boundary_rows = []
    for i in range(nf):
        site = coords[i]
        is_boundary = False
        for axis in range(d):
            for delta in (-1, 1):
                nb = site.copy()
                nb[axis] += delta
                if not in_f(nb):
                    is_boundary = True
                    break
            if is_boundary:
                break
        if is_boundary:
            boundary_rows.append(i)

    st = _Stream(seed, sid)
    two_d = 2 * d
    counts = np.zeros(len(boundary_rows), dtype=np.int64)
    for row, i in enumerate(boundary_rows):
        start = [int(c) for c in coords[i]]
        for _ in range(walkers):
            pos = list(start)
            steps = 0
            while True:
                r = st.randbelow(two_d)
                axis = r >> 1
                pos[axis] += 1 if (r & 1) else -1
                steps += 1
                if steps > STEP_CAP:
                    raise KernelError("capacity walk exceeded step cap")
                if abs(pos[axis]) >= escape_radius:
                    counts[row] += 1
                    break
                if in_f(pos):
                    break
    return np.asarray(boundary_rows, dtype=np.int64), counts


def excursion_batch(d, confine_radius, n_walks, seed, prefix, replica_offset,
                    want_range=False):
    """Free-walk excursions from the origin, confined to B(0, R).

    Each walk steps until it returns to 0 (returned=1, tau = step count) or
    reaches sup-norm R (returned=0).  With ``want_range`` the number of
    distinct sites on a returned excursion (including the origin) is
    reported; it is 0 for non-returning walks.
    """
    if d > 64:
        raise GuardError("kernels support dimension <= 64")
    side = 2 * confine_radius + 1
    if side**d >= 2**62:
        raise GuardError("confinement box too large to index")
    strides = _strides(d, side)
    two_d = 2 * d
    returned = np.zeros(n_walks, dtype=np.uint8)
    tau = np.zeros(n_walks, dtype=np.int64)
    range_count = np.zeros(n_walks, dtype=np.int64)
    origin_key = sum((0 + confine_radius) * s for s in strides)
    for i in range(n_walks):
        st = _Stream(seed, stream_from_prefix(prefix, replica_offset + i))
        pos = [0] * d
        idx = origin_key
        steps = 0
        visited = [origin_key] if want_range else None
        while True:
            r = st.randbelow(two_d)
            axis = r >> 1
            if r & 1:
                pos[axis] += 1
                idx += strides[axis]
            else:
                pos[axis] -= 1
                idx -= strides[axis]
            steps += 1
            if steps > STEP_CAP:
                raise KernelError("excursion exceeded step cap")
            if abs(pos[axis]) >= confine_radius:
                returned[i] = 0
                tau[i] = steps
                break
            if want_range:
                visited.append(idx)
            if idx == origin_key:
                returned[i] = 1
                tau[i] = steps
                if want_range:
                    range_count[i] = len(set(visited))
                break
    return returned, tau, range_count
