# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled simulation kernels.

Same contract as ``_kernels_py``: identical draw order, identical float
arithmetic, bit-identical outputs for equal seeds.  See that module for the
shared contract; this file only restates it in C.
"""

from libc.math cimport exp as c_exp
from libc.stdint cimport int32_t, int64_t, uint8_t, uint32_t, uint64_t
from libcpp.unordered_set cimport unordered_set
from libcpp.vector cimport vector

import numpy as np

cimport numpy as cnp

from .errors import GuardError, KernelError

cnp.import_array()

cdef extern from *:
    ctypedef unsigned long long uint128 "unsigned __int128"

cdef enum:
    MAX_D = 64

DEF STEP_CAP = 1000000000

cdef uint64_t GOLDEN = 0x9E3779B97F4A7C15ULL
cdef uint64_t FNV_PRIME = 0x100000001B3ULL


cdef inline uint64_t mix64(uint64_t z) noexcept nogil:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef inline uint64_t substream_c(uint64_t sid, uint64_t k) noexcept nogil:
    return mix64((sid + k + 1) * GOLDEN)


cdef inline uint64_t stream_start_c(uint64_t seed, uint64_t sid) noexcept nogil:
    return mix64(mix64(seed) ^ (sid * GOLDEN + 1))


cdef inline uint64_t fnv_le64(uint64_t prefix, uint64_t replica) noexcept nogil:
    cdef uint64_t h = prefix
    cdef int i
    for i in range(8):
        h = (h ^ ((replica >> (8 * i)) & 0xFF)) * FNV_PRIME
    return h


cdef struct Stream:
    uint64_t state


cdef inline uint64_t stream_u64(Stream* s) noexcept nogil:
    s.state += GOLDEN
    return mix64(s.state)


cdef inline double stream_double53(Stream* s) noexcept nogil:
    return <double>(stream_u64(s) >> 11) * 1.1102230246251565e-16


cdef inline uint64_t stream_randbelow(Stream* s, uint64_t k) noexcept nogil:
    return <uint64_t>(((<uint128>stream_u64(s)) * <uint128>k) >> 64)


cdef inline int64_t stream_poisson_from_l(Stream* s, double l_value) noexcept nogil:
    cdef int64_t k = 0
    cdef double p = 1.0
    while True:
        p *= stream_double53(s)
        if p <= l_value:
            return k
        k += 1


cdef void fill_strides(int64_t* st, int d, int64_t side) noexcept nogil:
    cdef int a
    st[d - 1] = 1
    for a in range(d - 2, -1, -1):
        st[a] = st[a + 1] * side


cdef object _vec_i64(vector[int64_t]& v):
    cdef cnp.ndarray[cnp.int64_t, ndim=1] out = np.empty(v.size(), dtype=np.int64)
    cdef size_t i
    for i in range(v.size()):
        out[i] = v[i]
    return out


cdef object _vec_i32(vector[int32_t]& v):
    cdef cnp.ndarray[cnp.int32_t, ndim=1] out = np.empty(v.size(), dtype=np.int32)
    cdef size_t i
    for i in range(v.size()):
        out[i] = v[i]
    return out


def sweep_soup(d, box_radius, kappa, alpha, jmax, seed, sid, order=None,
               max_total_length=50_000_000):
    """Sample one full soup on B(0, box_radius); see _kernels_py.sweep_soup."""
    cdef int dd = int(d)
    if dd > MAX_D:
        raise GuardError("kernels support dimension <= 64")
    cdef int64_t M = int(box_radius)
    cdef int64_t side = 2 * M + 1
    nsites_py = int(side) ** dd
    if nsites_py > 70_000_000:
        raise GuardError(f"box with {nsites_py} sites exceeds the sweep budget")
    cdef int64_t nsites = nsites_py
    cdef int64_t strides[MAX_D]
    fill_strides(strides, dd, side)

    cdef cnp.ndarray[cnp.int64_t, ndim=1] order_arr
    cdef cnp.ndarray[cnp.int64_t, ndim=1] rank_arr
    cdef int64_t[::1] order_v
    cdef int64_t[::1] rank_v
    cdef bint has_order = order is not None
    if has_order:
        order_arr = np.ascontiguousarray(order, dtype=np.int64)
        if len(order_arr) != nsites or len(set(order_arr.tolist())) != nsites:
            raise GuardError("order must be a permutation of all box sites")
        rank_arr = np.empty(nsites, dtype=np.int64)
        rank_arr[order_arr] = np.arange(nsites)
        order_v = order_arr
        rank_v = rank_arr

    cdef int jm = int(jmax)
    cdef vector[double] ltab
    cdef int j
    cdef double alpha_c = float(alpha)
    for j in range(1, jm + 1):
        ltab.push_back(c_exp(-alpha_c / j))
    cdef double survive = 1.0 / (1.0 + float(kappa))
    cdef bint has_kappa = float(kappa) > 0.0
    cdef uint64_t two_d = 2 * dd
    cdef uint64_t seed_c = int(seed) & 0xFFFFFFFFFFFFFFFF
    cdef uint64_t sid_c = int(sid) & 0xFFFFFFFFFFFFFFFF
    cdef int64_t budget = int(max_total_length)

    cdef vector[int64_t] lengths, minvertex, all_sites, cand
    cdef vector[int32_t] mult
    cdef int64_t total = 0

    cdef Stream st
    cdef int64_t stage, vidx, idx, rem, steps, nj, c_i, n
    cdef int64_t pos[MAX_D]
    cdef int64_t vcoords[MAX_D]
    cdef int a, axis, attempt
    cdef uint64_t r
    cdef bint ok
    cdef size_t w

    for stage in range(nsites):
        vidx = order_v[stage] if has_order else stage
        rem = vidx
        for a in range(dd):
            vcoords[a] = rem // strides[a] - M
            rem = rem % strides[a]
        st.state = stream_start_c(seed_c, substream_c(sid_c, <uint64_t>stage))
        for j in range(1, jm + 1):
            nj = stream_poisson_from_l(&st, ltab[j - 1])
            for c_i in range(nj):
                cand.clear()
                ok = True
                for attempt in range(j):
                    cand.push_back(vidx)
                    for a in range(dd):
                        pos[a] = vcoords[a]
                    idx = vidx
                    steps = 0
                    while True:
                        if has_kappa and not stream_double53(&st) < survive:
                            ok = False
                            break
                        r = stream_randbelow(&st, two_d)
                        axis = <int>(r >> 1)
                        if r & 1:
                            pos[axis] += 1
                            idx += strides[axis]
                        else:
                            pos[axis] -= 1
                            idx -= strides[axis]
                        if not -M <= pos[axis] <= M:
                            ok = False
                            break
                        if idx == vidx:
                            break
                        if (rank_v[idx] if has_order else idx) < stage:
                            ok = False
                            break
                        cand.push_back(idx)
                        steps += 1
                        if steps > STEP_CAP:
                            raise KernelError("excursion exceeded step cap")
                    if not ok:
                        break
                if ok:
                    n = <int64_t>cand.size()
                    lengths.push_back(n)
                    minvertex.push_back(vidx)
                    mult.push_back(<int32_t>j)
                    for w in range(cand.size()):
                        all_sites.push_back(cand[w])
                    total += n
                    if total > budget:
                        raise KernelError(
                            f"soup total length exceeded budget {max_total_length}")
    return (_vec_i64(lengths), _vec_i64(minvertex), _vec_i32(mult),
            _vec_i64(all_sites))


def box_stage_batch(d, box_radius, kappa, alpha, jmax, seed, prefix, replica_offset,
                    n_replicas, seeds, target=None, collect_shell=False):
    """Per-replica loops through a staged seed list; see _kernels_py."""
    cdef int dd = int(d)
    if dd > MAX_D:
        raise GuardError("kernels support dimension <= 64")
    seeds_arr = np.asarray(seeds, dtype=np.int64)
    if seeds_arr.ndim != 2 or seeds_arr.shape[1] != dd:
        raise GuardError("seeds must be an (s, d) coordinate array")
    cdef int s_count = seeds_arr.shape[0]
    if not 1 <= s_count <= 4:
        raise GuardError("between 1 and 4 staged seeds supported")
    cdef int64_t M = int(box_radius)
    cdef int64_t side = 2 * M + 1
    cdef int64_t strides[MAX_D]
    fill_strides(strides, dd, side)
    cdef int64_t seed_keys[4]
    cdef int64_t seed_coords[4][MAX_D]
    cdef int i, a
    cdef int64_t key, c
    for i in range(s_count):
        key = 0
        for a in range(dd):
            c = seeds_arr[i, a]
            if not -M <= c <= M:
                raise GuardError("seed outside box")
            key += (c + M) * strides[a]
            seed_coords[i][a] = c
        seed_keys[i] = key
    if len({int(seed_keys[i]) for i in range(s_count)}) != s_count:
        raise GuardError("duplicate seeds")
    cdef int64_t target_key = -1
    if target is not None:
        target_key = 0
        for a in range(dd):
            c = int(target[a])
            if not -M <= c <= M:
                raise GuardError("target outside box")
            target_key += (c + M) * strides[a]

    cdef int jm = int(jmax)
    cdef vector[double] ltab
    cdef int j
    cdef double alpha_c = float(alpha)
    for j in range(1, jm + 1):
        ltab.push_back(c_exp(-alpha_c / j))
    cdef double survive = 1.0 / (1.0 + float(kappa))
    cdef bint has_kappa = float(kappa) > 0.0
    cdef uint64_t two_d = 2 * dd
    cdef uint64_t seed_c = int(seed) & 0xFFFFFFFFFFFFFFFF
    cdef uint64_t prefix_c = int(prefix) & 0xFFFFFFFFFFFFFFFF
    cdef int64_t rep0 = int(replica_offset)
    cdef int64_t nrep = int(n_replicas)
    cdef bint want_shell = bool(collect_shell)

    cdef cnp.ndarray[cnp.int32_t, ndim=1] xi0 = np.zeros(nrep, dtype=np.int32)
    cdef cnp.ndarray[cnp.int32_t, ndim=1] nloops = np.zeros(nrep, dtype=np.int32)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] total_len = np.zeros(nrep, dtype=np.int64)
    cdef cnp.ndarray[cnp.int32_t, ndim=1] maxr = np.zeros(nrep, dtype=np.int32)
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] occ = np.zeros(nrep, dtype=np.uint8)
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] target_hit = np.zeros(nrep, dtype=np.uint8)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] shell = np.zeros(nrep, dtype=np.int64)

    cdef Stream st
    cdef vector[int64_t] cand, rep_sites
    cdef unordered_set[int64_t] distinct
    cdef int64_t rep, vkey, idx, nj, c_i, a_abs, n_seen
    cdef int64_t pos[MAX_D]
    cdef int axis, attempt, t
    cdef int64_t rep_maxr, cand_maxr
    cdef int rep_occ, rep_hit
    cdef uint64_t r
    cdef bint ok, vetoed
    cdef size_t w

    for rep in range(nrep):
        st.state = stream_start_c(seed_c, fnv_le64(prefix_c, <uint64_t>(rep0 + rep)))
        rep_sites.clear()
        rep_maxr = 0
        rep_occ = 0
        rep_hit = 0
        for i in range(s_count):
            vkey = seed_keys[i]
            for j in range(1, jm + 1):
                nj = stream_poisson_from_l(&st, ltab[j - 1])
                for c_i in range(nj):
                    cand.clear()
                    cand.push_back(vkey)
                    cand_maxr = 0
                    for a in range(dd):
                        a_abs = seed_coords[i][a]
                        if a_abs < 0:
                            a_abs = -a_abs
                        if a_abs > cand_maxr:
                            cand_maxr = a_abs
                    ok = True
                    for attempt in range(j):
                        if attempt > 0:
                            cand.push_back(vkey)
                        for a in range(dd):
                            pos[a] = seed_coords[i][a]
                        idx = vkey
                        while True:
                            if has_kappa and not stream_double53(&st) < survive:
                                ok = False
                                break
                            r = stream_randbelow(&st, two_d)
                            axis = <int>(r >> 1)
                            if r & 1:
                                pos[axis] += 1
                                idx += strides[axis]
                            else:
                                pos[axis] -= 1
                                idx -= strides[axis]
                            if not -M <= pos[axis] <= M:
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
                            cand.push_back(idx)
                            a_abs = pos[axis]
                            if a_abs < 0:
                                a_abs = -a_abs
                            if a_abs > cand_maxr:
                                cand_maxr = a_abs
                        if not ok:
                            break
                    if ok:
                        nloops[rep] += 1
                        total_len[rep] += <int64_t>cand.size()
                        if i == 0:
                            xi0[rep] += j
                        if cand_maxr > rep_maxr:
                            rep_maxr = cand_maxr
                        for w in range(cand.size()):
                            for t in range(s_count):
                                if cand[w] == seed_keys[t]:
                                    rep_occ |= 1 << t
                            if cand[w] == target_key:
                                rep_hit = 1
                        if want_shell:
                            for w in range(cand.size()):
                                rep_sites.push_back(cand[w])
        maxr[rep] = <int32_t>rep_maxr
        occ[rep] = <uint8_t>rep_occ
        target_hit[rep] = <uint8_t>rep_hit
        if want_shell and rep_sites.size() > 0:
            distinct.clear()
            for w in range(rep_sites.size()):
                distinct.insert(rep_sites[w])
            n_seen = <int64_t>distinct.size()
            for t in range(s_count):
                if distinct.count(seed_keys[t]):
                    n_seen -= 1
            shell[rep] = n_seen
    return {"xi0": xi0, "nloops": nloops, "total_len": total_len, "maxr": maxr,
            "occ": occ, "target_hit": target_hit, "shell": shell}


cdef class ClusterWorkspace:
    """Reusable stamp arrays for exploring origin clusters in one box.

    Same lazy-discovery exploration as the reference class: FIFO discovery
    makes levels equal loop distances, and only processed stages veto walks.
    """

    cdef public int d
    cdef public int64_t box_radius, side, nsites
    cdef int64_t strides[MAX_D]
    cdef object _qa, _ka, _ma, _la
    cdef uint32_t[::1] _queued
    cdef uint32_t[::1] _killed
    cdef uint32_t[::1] _member
    cdef int32_t[::1] _level
    cdef uint32_t _token

    def __init__(self, d, box_radius, memory_budget=2_000_000_000):
        cdef int dd = int(d)
        if dd > MAX_D:
            raise GuardError("kernels support dimension <= 64")
        cdef int64_t M = int(box_radius)
        cdef int64_t side = 2 * M + 1
        nsites_py = int(side) ** dd
        if nsites_py * 16 > int(memory_budget):
            raise GuardError(
                f"workspace for {nsites_py} sites exceeds memory budget {memory_budget}")
        self.d = dd
        self.box_radius = M
        self.side = side
        self.nsites = nsites_py
        fill_strides(self.strides, dd, side)
        self._qa = np.zeros(nsites_py, dtype=np.uint32)
        self._ka = np.zeros(nsites_py, dtype=np.uint32)
        self._ma = np.zeros(nsites_py, dtype=np.uint32)
        self._la = np.zeros(nsites_py, dtype=np.int32)
        self._queued = self._qa
        self._killed = self._ka
        self._member = self._ma
        self._level = self._la
        self._token = 0

    cdef uint32_t _next_token(self):
        self._token += 1
        if self._token >= 0xFFFFFFFF:
            self._qa[:] = 0
            self._ka[:] = 0
            self._ma[:] = 0
            self._token = 1
        return self._token

    def explore(self, kappa, alpha, jmax, seed, sid, seed_indices, depth=-1,
                target_index=-1, collect_sites=False, shell_cap=64,
                max_total_length=200_000_000):
        cdef int dd = self.d
        cdef int64_t M = self.box_radius
        cdef int64_t* strides = self.strides
        cdef int64_t tgt = int(target_index)
        if tgt >= self.nsites:
            raise GuardError("target index out of range")
        cdef uint32_t token = self._next_token()
        cdef uint32_t[::1] queued = self._queued
        cdef uint32_t[::1] killed = self._killed
        cdef uint32_t[::1] member = self._member
        cdef int32_t[::1] level = self._level

        cdef int jm = int(jmax)
        cdef vector[double] ltab
        cdef int j
        cdef double alpha_c = float(alpha)
        for j in range(1, jm + 1):
            ltab.push_back(c_exp(-alpha_c / j))
        cdef double survive = 1.0 / (1.0 + float(kappa))
        cdef bint has_kappa = float(kappa) > 0.0
        cdef uint64_t two_d = 2 * dd
        cdef Stream st
        st.state = stream_start_c(int(seed) & 0xFFFFFFFFFFFFFFFF,
                                  int(sid) & 0xFFFFFFFFFFFFFFFF)
        cdef int64_t depth_c = int(depth)
        cdef int64_t budget = int(max_total_length)
        cdef bint collect = bool(collect_sites)
        cdef int64_t cap = int(shell_cap)

        cdef vector[int64_t] queue, cand, members
        cdef int64_t v
        for v in np.asarray(seed_indices, dtype=np.int64):
            if not 0 <= v < self.nsites:
                raise GuardError("seed index out of range")
            if queued[v] != token:
                queued[v] = token
                level[v] = 0
                queue.push_back(v)

        cdef int64_t size = 0, reached = 0, n_loops = 0, total_len = 0
        cdef int64_t single_maxr = 0
        cdef cnp.ndarray[cnp.int64_t, ndim=1] shells = np.zeros(cap, dtype=np.int64)
        cdef int64_t[::1] shells_v = shells

        cdef size_t head = 0
        cdef int64_t vidx, vlevel, rem, idx, nj, c_i, wl, wsite, wr, cc
        cdef int64_t vcoords[MAX_D]
        cdef int64_t pos[MAX_D]
        cdef int a, axis, attempt
        cdef int64_t cand_maxr, a_abs
        cdef uint64_t r
        cdef bint ok
        cdef size_t w

        while head < queue.size():
            vidx = queue[head]
            head += 1
            vlevel = level[vidx]
            if depth_c >= 0 and vlevel >= depth_c:
                continue
            rem = vidx
            for a in range(dd):
                vcoords[a] = rem // strides[a] - M
                rem = rem % strides[a]
            for j in range(1, jm + 1):
                nj = stream_poisson_from_l(&st, ltab[j - 1])
                for c_i in range(nj):
                    cand.clear()
                    cand.push_back(vidx)
                    cand_maxr = 0
                    for a in range(dd):
                        a_abs = vcoords[a]
                        if a_abs < 0:
                            a_abs = -a_abs
                        if a_abs > cand_maxr:
                            cand_maxr = a_abs
                    ok = True
                    for attempt in range(j):
                        if attempt > 0:
                            cand.push_back(vidx)
                        for a in range(dd):
                            pos[a] = vcoords[a]
                        idx = vidx
                        while True:
                            if has_kappa and not stream_double53(&st) < survive:
                                ok = False
                                break
                            r = stream_randbelow(&st, two_d)
                            axis = <int>(r >> 1)
                            if r & 1:
                                pos[axis] += 1
                                idx += strides[axis]
                            else:
                                pos[axis] -= 1
                                idx -= strides[axis]
                            if not -M <= pos[axis] <= M:
                                ok = False
                                break
                            if idx == vidx:
                                break
                            if killed[idx] == token:
                                ok = False
                                break
                            cand.push_back(idx)
                            a_abs = pos[axis]
                            if a_abs < 0:
                                a_abs = -a_abs
                            if a_abs > cand_maxr:
                                cand_maxr = a_abs
                        if not ok:
                            break
                    if ok:
                        n_loops += 1
                        total_len += <int64_t>cand.size()
                        if total_len > budget:
                            raise KernelError("cluster exploration exceeded length budget")
                        if vlevel == 0 and cand_maxr > single_maxr:
                            single_maxr = cand_maxr
                        for w in range(cand.size()):
                            wsite = cand[w]
                            if member[wsite] != token:
                                member[wsite] = token
                                size += 1
                                if queued[wsite] == token:
                                    wl = level[wsite]
                                else:
                                    wl = vlevel + 1
                                    queued[wsite] = token
                                    level[wsite] = <int32_t>wl
                                    queue.push_back(wsite)
                                if wl < cap:
                                    shells_v[wl] += 1
                                rem = wsite
                                wr = 0
                                for a in range(dd):
                                    cc = rem // strides[a] - M
                                    rem = rem % strides[a]
                                    if cc < 0:
                                        cc = -cc
                                    if cc > wr:
                                        wr = cc
                                if wr > reached:
                                    reached = wr
                                if collect:
                                    members.push_back(wsite)
            killed[vidx] = token
        return {
            "size": size,
            "reached_radius": reached,
            "n_loops": n_loops,
            "total_length": total_len,
            "single_max_radius": single_maxr,
            "target_hit": bool(tgt >= 0 and member[tgt] == token),
            "shell_sizes": shells,
            "sites": _vec_i64(members) if collect else None,
        }


def escape_counts(d, fsite_coords, escape_radius, walkers, seed, sid):
    """Escape-count Monte Carlo for set capacity; see _kernels_py."""
    cdef int dd = int(d)
    if dd > MAX_D:
        raise GuardError("kernels support dimension <= 64")
    coords = np.asarray(fsite_coords, dtype=np.int64)
    if coords.ndim != 2 or coords.shape[1] != dd:
        raise GuardError("fsite_coords must be (n, d)")
    cdef int64_t nf = coords.shape[0]
    if nf == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    mins_a = coords.min(axis=0) - 1
    maxs_a = coords.max(axis=0) + 1
    dims_a = (maxs_a - mins_a + 1).astype(np.int64)
    volume_py = int(np.prod([int(x) for x in dims_a]))
    if volume_py > 500_000_000:
        raise GuardError("capacity bitmap too large")
    cdef int64_t volume = volume_py
    cdef int64_t mins[MAX_D]
    cdef int64_t dims[MAX_D]
    cdef int64_t bstr[MAX_D]
    cdef int a
    for a in range(dd):
        mins[a] = mins_a[a]
        dims[a] = dims_a[a]
    bstr[dd - 1] = 1
    for a in range(dd - 2, -1, -1):
        bstr[a] = bstr[a + 1] * dims[a + 1]
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] bitmap_a = np.zeros(volume, dtype=np.uint8)
    cdef uint8_t[::1] bitmap = bitmap_a
    cdef int64_t[:, ::1] coords_v = np.ascontiguousarray(coords)
    cdef int64_t i, key
    for i in range(nf):
        key = 0
        for a in range(dd):
            key += (coords_v[i, a] - mins[a]) * bstr[a]
        bitmap[key] = 1

    cdef vector[int64_t] brows
    cdef int64_t nb[MAX_D]
    cdef int axis
    cdef int delta
    cdef bint is_boundary, inside
    cdef int64_t cc
    for i in range(nf):
        is_boundary = False
        for axis in range(dd):
            for delta in range(-1, 2, 2):
                inside = True
                key = 0
                for a in range(dd):
                    cc = coords_v[i, a] - mins[a]
                    if a == axis:
                        cc += delta
                    if not 0 <= cc < dims[a]:
                        inside = False
                        break
                    key += cc * bstr[a]
                if inside and bitmap[key] != 0:
                    continue
                is_boundary = True
                break
            if is_boundary:
                break
        if is_boundary:
            brows.push_back(i)

    cdef Stream st
    st.state = stream_start_c(int(seed) & 0xFFFFFFFFFFFFFFFF,
                              int(sid) & 0xFFFFFFFFFFFFFFFF)
    cdef uint64_t two_d = 2 * dd
    cdef int64_t R = int(escape_radius)
    cdef int64_t nwalk = int(walkers)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] counts_a = np.zeros(brows.size(), dtype=np.int64)
    cdef int64_t[::1] counts = counts_a
    cdef int64_t pos[MAX_D]
    cdef size_t row
    cdef int64_t wk, steps
    cdef uint64_t r
    cdef int64_t p_ax
    for row in range(brows.size()):
        i = brows[row]
        for wk in range(nwalk):
            for a in range(dd):
                pos[a] = coords_v[i, a]
            steps = 0
            while True:
                r = stream_randbelow(&st, two_d)
                axis = <int>(r >> 1)
                if r & 1:
                    pos[axis] += 1
                else:
                    pos[axis] -= 1
                steps += 1
                if steps > STEP_CAP:
                    raise KernelError("capacity walk exceeded step cap")
                p_ax = pos[axis]
                if p_ax < 0:
                    p_ax = -p_ax
                if p_ax >= R:
                    counts[row] += 1
                    break
                inside = True
                key = 0
                for a in range(dd):
                    cc = pos[a] - mins[a]
                    if not 0 <= cc < dims[a]:
                        inside = False
                        break
                    key += cc * bstr[a]
                if inside and bitmap[key] != 0:
                    break
    return _vec_i64(brows), counts_a


def excursion_batch(d, confine_radius, n_walks, seed, prefix, replica_offset,
                    want_range=False):
    """Origin excursions confined to B(0, R); see _kernels_py."""
    cdef int dd = int(d)
    if dd > MAX_D:
        raise GuardError("kernels support dimension <= 64")
    cdef int64_t R = int(confine_radius)
    cdef int64_t side = 2 * R + 1
    if int(side) ** dd >= 2**62:
        raise GuardError("confinement box too large to index")
    cdef int64_t strides[MAX_D]
    fill_strides(strides, dd, side)
    cdef uint64_t two_d = 2 * dd
    cdef int64_t nw = int(n_walks)
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] returned_a = np.zeros(nw, dtype=np.uint8)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] tau_a = np.zeros(nw, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] range_a = np.zeros(nw, dtype=np.int64)
    cdef uint8_t[::1] returned = returned_a
    cdef int64_t[::1] tau = tau_a
    cdef int64_t[::1] range_count = range_a
    cdef int64_t origin_key = 0
    cdef int a
    for a in range(dd):
        origin_key += R * strides[a]
    cdef uint64_t seed_c = int(seed) & 0xFFFFFFFFFFFFFFFF
    cdef uint64_t prefix_c = int(prefix) & 0xFFFFFFFFFFFFFFFF
    cdef int64_t rep0 = int(replica_offset)
    cdef bint want = bool(want_range)

    cdef Stream st
    cdef int64_t i, idx, steps, p_ax
    cdef int64_t pos[MAX_D]
    cdef int axis
    cdef uint64_t r
    cdef unordered_set[int64_t] visited
    for i in range(nw):
        st.state = stream_start_c(seed_c, fnv_le64(prefix_c, <uint64_t>(rep0 + i)))
        for a in range(dd):
            pos[a] = 0
        idx = origin_key
        steps = 0
        if want:
            visited.clear()
            visited.insert(origin_key)
        while True:
            r = stream_randbelow(&st, two_d)
            axis = <int>(r >> 1)
            if r & 1:
                pos[axis] += 1
                idx += strides[axis]
            else:
                pos[axis] -= 1
                idx -= strides[axis]
            steps += 1
            if steps > STEP_CAP:
                raise KernelError("excursion exceeded step cap")
            p_ax = pos[axis]
            if p_ax < 0:
                p_ax = -p_ax
            if p_ax >= R:
                returned[i] = 0
                tau[i] = steps
                break
            if want:
                visited.insert(idx)
            if idx == origin_key:
                returned[i] = 1
                tau[i] = steps
                if want:
                    range_count[i] = <int64_t>visited.size()
                break
    return returned_a, tau_a, range_a
