"""Experiment drivers: replicated soups in, scaling-law estimates out.

Every driver follows the same shape.  Replica r of a stage named by
(kind, n) draws from the stream ``stream_from_prefix(stream_prefix(kind,
n), r)``, so results are sums of per-replica statistics and do not depend
on scheduling, worker count, or restarts.  Drivers emit EstimateRow lists
(CSV-ready) plus SlopeFit sidecars where a power law is being read off.

Replica loops advance in blocks; with a checkpoint path each completed
block is persisted, and a rerun resumes from the recorded counts because
per-replica streams make partial sums additive.
"""

import json
import math
import os
import tempfile
import time
from dataclasses import dataclass, field, asdict
from multiprocessing import get_context
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .errors import ConfigError, GuardError
from .green import capacity_mc, green_free
from .rng import stream_from_prefix, stream_prefix
from .sampler import jmax_free

CSV_HEADER = "kind,d,alpha,kappa,n,value,stderr,replicas,walltime_s"

_EXPERIMENT_KINDS = ("one-arm", "two-point", "cluster-tail", "excursion-tail",
                     "crossing-scan", "first-shell", "capacity-growth",
                     "gw-progeny")

_CHECKPOINT_BLOCK = 1000


@dataclass(frozen=True)
class EstimateRow:
    """One measured value with provenance, one CSV line."""

    kind: str
    d: int
    alpha: float
    kappa: float
    n: float
    value: float
    stderr: float
    replicas: int
    walltime_s: float

    def csv_line(self) -> str:
        def num(x):
            if isinstance(x, float) and x == int(x) and abs(x) < 1e15:
                return str(int(x))
            return repr(x)

        return ",".join([self.kind, str(self.d), num(float(self.alpha)),
                         num(float(self.kappa)), num(float(self.n)),
                         repr(float(self.value)), repr(float(self.stderr)),
                         str(self.replicas), f"{self.walltime_s:.3f}"])


@dataclass
class SlopeFit:
    """Weighted log-log least squares result."""

    slope: float
    slope_se: float
    intercept: float
    points_used: int
    metadata: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ExperimentSpec:
    """Parameters of one experiment family."""

    kind: str
    d: int
    alpha: float
    kappa: float = 0.0
    sizes: tuple = ()
    box_factor: float = 2.0
    replicas: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.kind not in _EXPERIMENT_KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}")
        if self.replicas < 100:
            raise GuardError(f"need at least 100 replicas, got {self.replicas}")
        sizes = tuple(self.sizes)
        if not sizes:
            raise GuardError("sizes must be nonempty")
        if any(b <= a for a, b in zip(sizes, sizes[1:])):
            raise GuardError(f"sizes must be strictly increasing, got {sizes}")
        object.__setattr__(self, "sizes", sizes)


def atomic_write_text(path: str, text: str) -> None:
    """Write via a sibling temp file and rename, so readers never see a torn file."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_rows(path: str, rows: Sequence[EstimateRow]) -> None:
    atomic_write_text(path, "\n".join([CSV_HEADER] + [r.csv_line() for r in rows]) + "\n")


def read_rows(path: str):
    with open(path) as fh:
        header = fh.readline().rstrip("\n")
        if header != CSV_HEADER:
            raise ConfigError(f"unexpected CSV header {header!r}")
        rows = []
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            kind, d, alpha, kappa, n, value, stderr, replicas, wall = line.split(",")
            rows.append(EstimateRow(kind, int(d), float(alpha), float(kappa),
                                    float(n), float(value), float(stderr),
                                    int(replicas), float(wall)))
    return rows


def write_slope_sidecar(path: str, fits: dict) -> None:
    payload = {name: asdict(fit) for name, fit in fits.items()}
    atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def fit_loglog(rows: Sequence[EstimateRow]) -> SlopeFit:
    """Weighted least squares of log value on log n.

    Weights are 1/relSE^2 (capped for exact inputs).  The smallest n is
    dropped when its relative error exceeds 20%, recorded in metadata.
    Refuses fewer than 3 usable points or any nonpositive value.
    """
    pts = sorted(((float(r.n), float(r.value), float(r.stderr)) for r in rows))
    if any(v <= 0.0 for _, v, _ in pts):
        raise GuardError("log-log fit requires strictly positive values")
    excluded = []
    if pts and pts[0][1] > 0 and pts[0][2] / pts[0][1] > 0.20:
        excluded.append(pts[0][0])
        pts = pts[1:]
    if len(pts) < 3:
        raise GuardError(f"log-log fit needs at least 3 points, have {len(pts)}")
    x = np.log([p[0] for p in pts])
    y = np.log([p[1] for p in pts])
    rel = np.array([max(p[2] / p[1], 1e-12) for p in pts])
    w = 1.0 / rel**2
    xbar = np.average(x, weights=w)
    ybar = np.average(y, weights=w)
    sxx = float(np.sum(w * (x - xbar) ** 2))
    slope = float(np.sum(w * (x - xbar) * (y - ybar)) / sxx)
    return SlopeFit(
        slope=slope,
        slope_se=float(1.0 / math.sqrt(sxx)),
        intercept=float(ybar - slope * xbar),
        points_used=len(pts),
        metadata={"excluded_small_n": excluded} if excluded else {},
    )


# --- replica plumbing -------------------------------------------------------

_WORKSPACES = {}


def _workspace(d: int, box_radius: int):
    key = (d, box_radius)
    if key not in _WORKSPACES:
        _WORKSPACES.clear()  # one big box at a time keeps memory bounded
        _WORKSPACES[key] = kernels.ClusterWorkspace(d, box_radius)
    return _WORKSPACES[key]


def _sum_states(total: Optional[dict], part: dict) -> dict:
    if total is None:
        return {k: (np.array(v, copy=True) if isinstance(v, np.ndarray) else v)
                for k, v in part.items()}
    for k, v in part.items():
        total[k] = total[k] + v
    return total


class Checkpoint:
    """Per-stage partial sums persisted as JSON, resumable across runs."""

    def __init__(self, path: Optional[str], identity: dict):
        self.path = path
        self.identity = identity
        self.stages = {}
        if path and os.path.exists(path):
            with open(path) as fh:
                saved = json.load(fh)
            if saved.get("identity") == identity:
                self.stages = saved.get("stages", {})

    def get(self, stage: str):
        entry = self.stages.get(stage)
        if entry is None:
            return 0, None
        sums = {k: (np.asarray(v) if isinstance(v, list) else v)
                for k, v in entry["sums"].items()}
        return int(entry["completed"]), sums

    def update(self, stage: str, completed: int, sums: dict) -> None:
        self.stages[stage] = {
            "completed": completed,
            "sums": {k: (v.tolist() if isinstance(v, np.ndarray) else v)
                     for k, v in sums.items()},
        }
        if self.path:
            atomic_write_text(self.path, json.dumps(
                {"identity": self.identity, "stages": self.stages}, sort_keys=True))


def _replica_sweep(block_fn, static_args: tuple, total: int, workers: int = 1,
                   checkpoint: Optional[Checkpoint] = None, stage: str = "",
                   block: int = _CHECKPOINT_BLOCK) -> dict:
    """Run block_fn(*static_args, offset, count) over replicas, summing results."""
    done, sums = (0, None)
    if checkpoint is not None:
        done, sums = checkpoint.get(stage)
    if done >= total:
        return sums or {}
    offsets = [(off, min(block, total - off)) for off in range(done, total, block)]
    if workers <= 1:
        for off, count in offsets:
            sums = _sum_states(sums, block_fn(*static_args, off, count))
            done = off + count
            if checkpoint is not None:
                checkpoint.update(stage, done, sums)
    else:
        ctx = get_context("fork")
        with ctx.Pool(workers) as pool:
            wave = max(1, workers)
            for i in range(0, len(offsets), wave):
                parts = pool.starmap(
                    block_fn,
                    [static_args + (off, count) for off, count in offsets[i:i + wave]])
                for (off, count), part in zip(offsets[i:i + wave], parts):
                    sums = _sum_states(sums, part)
                    done = off + count
                if checkpoint is not None:
                    checkpoint.update(stage, done, sums)
    return sums


def _binomial_se(p: float, n: int) -> float:
    return math.sqrt(max(p * (1.0 - p), 0.0) / n)


# --- block workers (module level so worker processes can import them) -------


def _arm_block(d, box_radius, kappa, alpha, jm, seed, prefix, n,
               offset, count):
    ws = _workspace(d, box_radius)
    origin = ws.nsites // 2
    arm = 0
    single = 0
    for i in range(count):
        sid = stream_from_prefix(prefix, offset + i)
        r = ws.explore(kappa, alpha, jm, seed, sid, [origin])
        if r["reached_radius"] >= n:
            arm += 1
        if r["single_max_radius"] >= n:
            single += 1
    return {"arm": arm, "single": single}


def _two_point_block(d, box_radius, kappa, alpha, jm, seed, prefix,
                     target_index, offset, count):
    ws = _workspace(d, box_radius)
    origin = ws.nsites // 2
    hits = 0
    for i in range(count):
        sid = stream_from_prefix(prefix, offset + i)
        r = ws.explore(kappa, alpha, jm, seed, sid, [origin],
                       target_index=target_index)
        if r["target_hit"]:
            hits += 1
    return {"hits": hits}


def _cluster_size_block(d, box_radius, kappa, alpha, jm, seed, prefix,
                        thresholds, offset, count):
    ws = _workspace(d, box_radius)
    origin = ws.nsites // 2
    thresholds = np.asarray(thresholds)
    exceed = np.zeros(len(thresholds), dtype=np.int64)
    for i in range(count):
        sid = stream_from_prefix(prefix, offset + i)
        size = ws.explore(kappa, alpha, jm, seed, sid, [origin])["size"]
        exceed += size > thresholds
    return {"exceed": exceed}


def _shell_block(d, box_radius, kappa, alpha, jm, seed, prefix, thresholds,
                 offset, count):
    out = kernels.box_stage_batch(
        d, box_radius, kappa, alpha, jm, seed, prefix, offset, count,
        np.zeros((1, d), dtype=np.int64), collect_shell=True)
    shell = out["shell"]
    thresholds = np.asarray(thresholds)
    return {
        "exceed": (shell[None, :] > thresholds[:, None]).sum(axis=1).astype(np.int64),
        "sum": int(shell.sum()),
        "sumsq": float(np.square(shell, dtype=np.float64).sum()),
    }


def _crossing_block(d, box_radius, kappa, alpha, jm, seed, prefix,
                    inner, outer, offset, count):
    ws = _workspace(d, box_radius)
    side = 2 * box_radius + 1
    axes = [np.arange(-inner, inner + 1) + box_radius] * d
    mesh = np.meshgrid(*axes, indexing="ij")
    seeds = np.zeros(mesh[0].size, dtype=np.int64)
    for a in range(d):
        seeds = seeds * side + mesh[a].ravel()
    hits = 0
    for i in range(count):
        sid = stream_from_prefix(prefix, offset + i)
        r = ws.explore(kappa, alpha, jm, seed, sid, seeds)
        if r["reached_radius"] >= outer:
            hits += 1
    return {"hits": hits}


def _capacity_block(d, k, kappa, alpha, jm, seed, prefix, cap_prefix, walkers,
                    offset, count):
    ws = _workspace(d, k)
    origin = ws.nsites // 2
    side = 2 * k + 1
    total = 0.0
    total_sq = 0.0
    nonempty = 0
    for i in range(count):
        sid = stream_from_prefix(prefix, offset + i)
        r = ws.explore(kappa, alpha, jm, seed, sid, [origin], collect_sites=True)
        if r["size"] == 0:
            continue
        nonempty += 1
        coords = np.empty((r["sites"].size, d), dtype=np.int64)
        rem = r["sites"].copy()
        for a in range(d - 1, -1, -1):
            coords[:, a] = rem % side - k
            rem //= side
        est = capacity_mc(coords, 2 * k, walkers, d, seed,
                          stream=stream_from_prefix(cap_prefix, offset + i))
        total += est.value
        total_sq += est.value ** 2
    return {"sum": total, "sumsq": total_sq, "nonempty": nonempty}


def _excursion_block(d, radius, seed, prefix, tau_thresholds, want_range,
                     range_thresholds, offset, count):
    returned, tau, rng_count = kernels.excursion_batch(
        d, radius, count, seed, prefix, offset, want_range=want_range)
    tau_thresholds = np.asarray(tau_thresholds)
    tau_counts = (tau[returned == 1][None, :] ==
                  tau_thresholds[:, None]).sum(axis=1).astype(np.int64)
    out = {"returned": int(returned.sum()), "tau_eq": tau_counts}
    if want_range:
        rt = np.asarray(range_thresholds)
        rr = rng_count[returned == 1]
        out["range_exceed"] = (rr[None, :] > rt[:, None]).sum(axis=1).astype(np.int64)
    return out


# --- drivers ----------------------------------------------------------------


def run_one_arm(spec: ExperimentSpec, workers: int = 1,
                checkpoint_path: Optional[str] = None):
    """P[origin cluster reaches radius n] per n, with a log-log slope fit.

    Alongside each estimate, an independent replica set measures the
    chance that a single loop through the origin already reaches radius n,
    giving the one-loop lower bound without reusing the same draws.
    """
    ckpt = Checkpoint(checkpoint_path, {"kind": "one-arm", **_identity(spec)})
    rows = []
    arm_rows = []
    for n in spec.sizes:
        n = int(n)
        box_radius = math.ceil(spec.box_factor * n)
        if n > box_radius / spec.box_factor + 1e-9:
            raise GuardError(f"radius {n} above truncation bound")
        jm = jmax_free(spec.d, spec.alpha)
        t0 = time.perf_counter()
        main = _replica_sweep(
            _arm_block,
            (spec.d, box_radius, spec.kappa, spec.alpha, jm, spec.seed,
             stream_prefix("one-arm", n), n),
            spec.replicas, workers, ckpt, f"arm-{n}")
        single = _replica_sweep(
            _arm_block,
            (spec.d, box_radius, spec.kappa, spec.alpha, jm, spec.seed,
             stream_prefix("one-arm-single", n), n),
            spec.replicas, workers, ckpt, f"single-{n}")
        wall = time.perf_counter() - t0
        p_arm = main["arm"] / spec.replicas
        p_single = single["single"] / spec.replicas
        row = EstimateRow("one-arm", spec.d, spec.alpha, spec.kappa, n, p_arm,
                          _binomial_se(p_arm, spec.replicas), spec.replicas, wall)
        rows.append(row)
        arm_rows.append(row)
        rows.append(EstimateRow("one-arm-single-loop", spec.d, spec.alpha,
                                spec.kappa, n, p_single,
                                _binomial_se(p_single, spec.replicas),
                                spec.replicas, wall))
    fits = {}
    positive = [r for r in arm_rows if r.value > 0.0]
    if len(positive) >= 3:
        fits["one-arm"] = fit_loglog(positive)
        if len(positive) < len(arm_rows):
            fits["one-arm"].metadata["excluded_zero_sizes"] = [
                int(r.n) for r in arm_rows if r.value <= 0.0]
    return rows, fits


def run_two_point(spec: ExperimentSpec, workers: int = 1,
                  checkpoint_path: Optional[str] = None):
    """P[x in C(0)] for x = n e_1; fit is against log(n + 1).

    An offset of 0 measures P[the origin cluster is nonempty], reported
    under its own kind and kept out of the fit.
    """
    ckpt = Checkpoint(checkpoint_path, {"kind": "two-point", **_identity(spec)})
    rows = []
    fit_pts = []
    for n in spec.sizes:
        n = int(n)
        box_radius = max(math.ceil(spec.box_factor * max(n, 1)), 2)
        jm = jmax_free(spec.d, spec.alpha)
        side = 2 * box_radius + 1
        target_index = 0
        for a in range(spec.d):
            c = n if a == 0 else 0
            target_index = target_index * side + (c + box_radius)
        t0 = time.perf_counter()
        sums = _replica_sweep(
            _two_point_block,
            (spec.d, box_radius, spec.kappa, spec.alpha, jm, spec.seed,
             stream_prefix("two-point", n), target_index),
            spec.replicas, workers, ckpt, f"x-{n}")
        wall = time.perf_counter() - t0
        p = sums["hits"] / spec.replicas
        kind = "two-point-origin" if n == 0 else "two-point"
        row = EstimateRow(kind, spec.d, spec.alpha, spec.kappa, n, p,
                          _binomial_se(p, spec.replicas), spec.replicas, wall)
        rows.append(row)
        if n > 0:
            # the decay benchmark is in the shifted offset norm
            fit_pts.append(EstimateRow(kind, spec.d, spec.alpha, spec.kappa,
                                       n + 1, p, row.stderr, spec.replicas, wall))
    fits = {}
    fit_pts = [r for r in fit_pts if r.value > 0.0]
    if len(fit_pts) >= 3:
        fits["two-point"] = fit_loglog(fit_pts)
        fits["two-point"].metadata["abscissa"] = "offset_norm_plus_1"
    return rows, fits


def _dyadic(limit: int, start: int = 1):
    out = []
    x = start
    while x <= limit:
        out.append(x)
        x *= 2
    return out


def run_cluster_tail(spec: ExperimentSpec, workers: int = 1,
                     checkpoint_path: Optional[str] = None,
                     shell_box_radius: Optional[int] = None,
                     full_cluster_box_radius: Optional[int] = None,
                     min_fit_bucket: int = 16):
    """Tail of the cluster size and of the first-shell size.

    For d >= 5 the first-shell tail over dyadic buckets gives a slope and
    a prefactor, the latter read at the largest bucket with at least 100
    exceedances.  For d = 3 the first-shell mean has no limit, so the
    driver emits a running-mean trace over growing replica prefixes
    instead of a fit.
    """
    ckpt = Checkpoint(checkpoint_path, {"kind": "cluster-tail", **_identity(spec)})
    rows = []
    fits = {}
    jm = jmax_free(spec.d, spec.alpha)
    buckets = [int(x) for x in spec.sizes]
    shell_radius = shell_box_radius or (88 if spec.d >= 5 else 32)

    t0 = time.perf_counter()
    sums = _replica_sweep(
        _shell_block,
        (spec.d, shell_radius, spec.kappa, spec.alpha, jm, spec.seed,
         stream_prefix("first-shell-tail", shell_radius), buckets),
        spec.replicas, workers, ckpt, "shell")
    wall = time.perf_counter() - t0
    shell_rows = []
    for x, count in zip(buckets, sums["exceed"]):
        p = count / spec.replicas
        row = EstimateRow("first-shell-tail", spec.d, spec.alpha, spec.kappa,
                          x, p, _binomial_se(p, spec.replicas), spec.replicas,
                          wall)
        rows.append(row)
        shell_rows.append((row, int(count)))

    if spec.d >= 5:
        fit_rows = [r for r, c in shell_rows
                    if r.n >= min_fit_bucket and c >= 100 and r.value > 0]
        if len(fit_rows) >= 3:
            fits["first-shell-tail"] = fit_loglog(fit_rows)
            fits["first-shell-tail"].metadata["min_bucket"] = min_fit_bucket
        eligible = [(r, c) for r, c in shell_rows if c >= 100]
        if eligible:
            r, _ = eligible[-1]
            prefactor = r.value * r.n ** (spec.d / 2.0 - 1.0)
            rel = r.stderr / r.value if r.value > 0 else 0.0
            rows.append(EstimateRow(
                "first-shell-prefactor", spec.d, spec.alpha, spec.kappa, r.n,
                prefactor, prefactor * rel, spec.replicas, wall))
    else:
        mean = sums["sum"] / spec.replicas
        se = math.sqrt(max(sums["sumsq"] / spec.replicas - mean**2, 0.0)
                       / spec.replicas)
        rows.append(EstimateRow("first-shell-mean", spec.d, spec.alpha,
                                spec.kappa, shell_radius, mean, se,
                                spec.replicas, wall))
        for frac in (0.125, 0.25, 0.5):
            # running mean over a replica prefix, recomputed deterministically
            n_prefix = max(1, int(spec.replicas * frac))
            part = _replica_sweep(
                _shell_block,
                (spec.d, shell_radius, spec.kappa, spec.alpha, jm, spec.seed,
                 stream_prefix("first-shell-tail", shell_radius), buckets),
                n_prefix, workers, ckpt, f"shell-prefix-{n_prefix}")
            m = part["sum"] / n_prefix
            rows.append(EstimateRow("first-shell-running-mean", spec.d,
                                    spec.alpha, spec.kappa, n_prefix, m,
                                    0.0, n_prefix, wall))
        rows.append(EstimateRow("first-shell-running-mean", spec.d, spec.alpha,
                                spec.kappa, spec.replicas, mean, 0.0,
                                spec.replicas, wall))

    cluster_radius = full_cluster_box_radius or (8 if spec.d >= 5 else 16)
    t0 = time.perf_counter()
    sums = _replica_sweep(
        _cluster_size_block,
        (spec.d, cluster_radius, spec.kappa, spec.alpha, jm, spec.seed,
         stream_prefix("cluster-size-tail", cluster_radius), buckets),
        spec.replicas, workers, ckpt, "size")
    wall = time.perf_counter() - t0
    size_rows = []
    for x, count in zip(buckets, sums["exceed"]):
        p = count / spec.replicas
        row = EstimateRow("cluster-size-tail", spec.d, spec.alpha, spec.kappa,
                          x, p, _binomial_se(p, spec.replicas), spec.replicas,
                          wall)
        rows.append(row)
        if count >= 100 and x >= min_fit_bucket:
            size_rows.append(row)
    if len(size_rows) >= 3:
        fits["cluster-size-tail"] = fit_loglog(size_rows)
    return rows, fits


def run_excursion_tail(d: int, seed: int, n_walks: int,
                       confine_radius: int = 32,
                       range_radius: int = 48,
                       want_range: bool = False,
                       range_buckets: Sequence[int] = (),
                       tau_values: Sequence[int] = (1, 2, 4, 8, 16),
                       workers: int = 1,
                       checkpoint_path: Optional[str] = None):
    """Return probability, return-time spectrum, and excursion-range tail.

    The return probability is measured at the confinement radius and at
    twice it, then extrapolated in the same way as the capacity estimator
    (the truncation error is O(R^{2-d})).  tau rows report P[tau = 2n]
    against the n^{-d/2} decay; range rows (optional) report
    P[returned and range > x].
    """
    if d < 3:
        raise GuardError("excursion statistics need a transient walk, d >= 3")
    ckpt = Checkpoint(checkpoint_path,
                      {"kind": "excursion-tail", "d": d, "seed": seed,
                       "n": n_walks, "radius": confine_radius})
    rows = []
    tau_thr = [2 * int(v) for v in tau_values]
    t0 = time.perf_counter()
    raw = {}
    for radius, tag in ((confine_radius, "R"), (2 * confine_radius, "2R")):
        sums = _replica_sweep(
            _excursion_block,
            (d, radius, seed, stream_prefix("excursion", radius), tau_thr,
             False, ()),
            n_walks, workers, ckpt, f"return-{radius}")
        raw[tag] = sums
        p = sums["returned"] / n_walks
        rows.append(EstimateRow("excursion-return-raw", d, 0.0, 0.0, radius,
                                p, _binomial_se(p, n_walks), n_walks,
                                time.perf_counter() - t0))
    p1 = raw["R"]["returned"] / n_walks
    p2 = raw["2R"]["returned"] / n_walks
    w = 2.0 ** (2 - d)
    f_hat = (p2 - w * p1) / (1.0 - w)
    var = (_binomial_se(p2, n_walks) ** 2 + w * w * _binomial_se(p1, n_walks) ** 2)
    rows.append(EstimateRow("excursion-return", d, 0.0, 0.0, confine_radius,
                            f_hat, math.sqrt(var) / (1.0 - w), n_walks,
                            time.perf_counter() - t0))

    g00 = green_free(d, (0,) * d)
    f_exact = 1.0 - 1.0 / g00
    # local-CLT prefactor of P[tau = 2n] ~ C n^(-d/2) for the returning walk
    tau_prefactor = ((1.0 - f_exact) ** 2 * 2.0 * d ** (d / 2.0)
                     / (4.0 * math.pi) ** (d / 2.0))
    for v, count in zip(tau_values, raw["2R"]["tau_eq"]):
        p = int(count) / n_walks
        rows.append(EstimateRow("excursion-tau", d, 0.0, 0.0, v, p,
                                _binomial_se(p, n_walks), n_walks,
                                time.perf_counter() - t0))
        asym = tau_prefactor * float(v) ** (-d / 2.0)
        if p > 0:
            rows.append(EstimateRow("excursion-tau-ratio", d, 0.0, 0.0, v,
                                    p / asym, _binomial_se(p, n_walks) / asym,
                                    n_walks, time.perf_counter() - t0))

    if want_range:
        buckets = [int(x) for x in range_buckets] or _dyadic(256, 4)
        sums = _replica_sweep(
            _excursion_block,
            (d, range_radius, seed, stream_prefix("excursion-range", range_radius),
             tau_thr, True, buckets),
            n_walks, workers, ckpt, f"range-{range_radius}")
        for x, count in zip(buckets, sums["range_exceed"]):
            p = int(count) / n_walks
            rows.append(EstimateRow("excursion-range-tail", d, 0.0, 0.0, x, p,
                                    _binomial_se(p, n_walks), n_walks,
                                    time.perf_counter() - t0))
    fits = {}
    range_rows = [r for r in rows
                  if r.kind == "excursion-range-tail" and
                  r.value * r.replicas >= 100 and r.value > 0]
    if len(range_rows) >= 3:
        fits["excursion-range-tail"] = fit_loglog(range_rows)
    return rows, fits


def run_crossing_scan(d: int, alphas: Sequence[float], sizes: Sequence[int],
                      replicas: int, seed: int, kappa: float = 0.0,
                      beta: float = 2.0, box_factor: float = 2.0,
                      level: float = 0.5, workers: int = 1,
                      checkpoint_path: Optional[str] = None):
    """Scan sup_n P[B(0,n) connects to radius beta*n] over an alpha grid.

    This is a finite-box proxy for a limsup definition and is labeled as
    such in its row kinds; it cannot certify any threshold.  Reports, per
    alpha, the max over the n grid, and finally the first alpha whose max
    exceeds ``level``.
    """
    if beta < 2.0:
        raise GuardError(f"annulus ratio must be at least 2, got {beta}")
    ckpt = Checkpoint(checkpoint_path,
                      {"kind": "crossing-scan", "d": d, "seed": seed,
                       "alphas": list(map(float, alphas)),
                       "sizes": list(map(int, sizes)), "replicas": replicas})
    rows = []
    first_alpha = math.nan
    for alpha in alphas:
        per_n = []
        for n in sizes:
            n = int(n)
            outer = math.ceil(beta * n)
            box_radius = math.ceil(box_factor * outer)
            t0 = time.perf_counter()
            if alpha == 0.0:
                p = 0.0
            else:
                jm = jmax_free(d, alpha)
                sums = _replica_sweep(
                    _crossing_block,
                    (d, box_radius, kappa, alpha, jm, seed,
                     stream_prefix(f"crossing-a{alpha!r}", n), n, outer),
                    replicas, workers, ckpt, f"a{alpha!r}-n{n}")
                p = sums["hits"] / replicas
            rows.append(EstimateRow("crossing-proxy", d, alpha, kappa, n, p,
                                    _binomial_se(p, replicas), replicas,
                                    time.perf_counter() - t0))
            per_n.append(p)
        best = max(per_n)
        rows.append(EstimateRow("crossing-proxy-max", d, alpha, kappa, 0,
                                best, _binomial_se(best, replicas), replicas, 0.0))
        if math.isnan(first_alpha) and best > level:
            first_alpha = alpha
    rows.append(EstimateRow("crossing-proxy-first-alpha", d, first_alpha,
                            kappa, 0, first_alpha, 0.0, replicas, 0.0))
    return rows, {}


def run_first_shell_and_threshold(spec: ExperimentSpec, workers: int = 1,
                                  exact_radius: int = 30,
                                  threshold_dims: Sequence[int] = (6, 8, 10),
                                  box_radius: int = 32,
                                  checkpoint_path: Optional[str] = None):
    """Expected first-shell size, Monte Carlo vs exact, plus unit thresholds.

    The exact value comes from the orbit sum at ``exact_radius`` with its
    reported tail width.  Threshold rows solve E[first shell] = 1 in
    alpha, per dimension in ``threshold_dims``.
    """
    from .loopmeasure import expected_first_shell, solve_unit_first_shell

    if spec.d < 5:
        raise GuardError("first-shell mean comparisons need d >= 5")
    ckpt = Checkpoint(checkpoint_path, {"kind": "first-shell", **_identity(spec)})
    jm = jmax_free(spec.d, spec.alpha)
    t0 = time.perf_counter()
    sums = _replica_sweep(
        _shell_block,
        (spec.d, box_radius, spec.kappa, spec.alpha, jm, spec.seed,
         stream_prefix("first-shell-mc", box_radius), [1]),
        spec.replicas, workers, ckpt, "mc")
    wall = time.perf_counter() - t0
    mean = sums["sum"] / spec.replicas
    se = math.sqrt(max(sums["sumsq"] / spec.replicas - mean**2, 0.0) / spec.replicas)
    rows = [EstimateRow("first-shell-mc", spec.d, spec.alpha, spec.kappa,
                        box_radius, mean, se, spec.replicas, wall)]

    t0 = time.perf_counter()
    exact = expected_first_shell(spec.alpha, spec.d, truncation_radius=exact_radius)
    rows.append(EstimateRow("first-shell-exact", spec.d, spec.alpha, spec.kappa,
                            exact_radius, exact.value, exact.tail_width, 1,
                            time.perf_counter() - t0))

    for dim in threshold_dims:
        t0 = time.perf_counter()
        alpha_hat = solve_unit_first_shell(int(dim))
        rows.append(EstimateRow("first-shell-threshold", int(dim), alpha_hat,
                                spec.kappa, int(dim), alpha_hat, 0.0, 1,
                                time.perf_counter() - t0))
    return rows, {}


def run_capacity_growth(spec: ExperimentSpec, walkers: int = 24,
                        workers: int = 1,
                        checkpoint_path: Optional[str] = None):
    """E[capacity of the origin cluster grown inside B(0,k)] over a k grid."""
    if spec.d not in (3, 4):
        raise GuardError("capacity growth experiments run at d in {3,4}")
    ckpt = Checkpoint(checkpoint_path, {"kind": "capacity-growth",
                                        **_identity(spec)})
    rows = []
    for k in spec.sizes:
        k = int(k)
        jm = jmax_free(spec.d, spec.alpha)
        t0 = time.perf_counter()
        sums = _replica_sweep(
            _capacity_block,
            (spec.d, k, spec.kappa, spec.alpha, jm, spec.seed,
             stream_prefix("capacity-growth", k),
             stream_prefix("capacity-growth-cap", k), walkers),
            spec.replicas, workers, ckpt, f"k-{k}")
        wall = time.perf_counter() - t0
        mean = sums["sum"] / spec.replicas
        se = math.sqrt(max(sums["sumsq"] / spec.replicas - mean**2, 0.0)
                       / spec.replicas)
        rows.append(EstimateRow("capacity-growth", spec.d, spec.alpha,
                                spec.kappa, k, mean, se, spec.replicas, wall))
        p_nonempty = sums["nonempty"] / spec.replicas
        rows.append(EstimateRow("capacity-growth-nonempty", spec.d, spec.alpha,
                                spec.kappa, k, p_nonempty,
                                _binomial_se(p_nonempty, spec.replicas),
                                spec.replicas, wall))
    fits = {}
    cap_rows = [r for r in rows if r.kind == "capacity-growth" and r.value > 0]
    if len(cap_rows) >= 3:
        fits["capacity-growth"] = fit_loglog(cap_rows)
    return rows, fits


def run_gw_progeny(tail_exponent: float, mean: float, replicas: int, seed: int,
                   stream: int = 0, max_generations: int = 60,
                   tail_buckets: Sequence[int] = (), min_fit_bucket: int = 16):
    """Total-progeny tail and generation survival of a subcritical process.

    Offspring are zero-inflated zeta variables: with probability q a draw
    from P[Z = j] proportional to j^{-(1+tail_exponent)}, else zero, with
    q set so the mean comes out to ``mean``.  The total progeny inherits
    the offspring tail exponent; survival decays at least geometrically.
    """
    from scipy.special import zeta

    if not tail_exponent > 1.0:
        raise GuardError("offspring tail exponent must exceed 1")
    if not 0.0 <= mean < 1.0:
        raise GuardError(f"offspring mean must be in [0, 1), got {mean}")
    q = mean * zeta(tail_exponent + 1.0) / zeta(tail_exponent)
    rng = np.random.Generator(np.random.Philox(
        key=[seed & 0xFFFFFFFFFFFFFFFF, stream & 0xFFFFFFFFFFFFFFFF]))
    t0 = time.perf_counter()
    totals = np.ones(replicas, dtype=np.int64)
    alive = np.ones(replicas, dtype=np.int64)
    survive_counts = []
    for _ in range(max_generations):
        active = alive > 0
        if not active.any():
            break
        births = np.zeros(replicas, dtype=np.int64)
        idx = np.flatnonzero(active)
        counts = alive[idx]
        draws_needed = int(counts.sum())
        keep = rng.random(draws_needed) < q
        z = np.where(keep, rng.zipf(tail_exponent + 1.0, draws_needed), 0)
        bounds = np.concatenate(([0], np.cumsum(counts)))
        births[idx] = np.add.reduceat(z, bounds[:-1]) if draws_needed else 0
        alive = births
        totals += births
        survive_counts.append(int((alive > 0).sum()))
    wall = time.perf_counter() - t0

    rows = []
    buckets = [int(x) for x in tail_buckets] or _dyadic(4096, 1)
    for x in buckets:
        p = float((totals > x).mean())
        rows.append(EstimateRow("gw-progeny-tail", 0, 0.0, 0.0, x, p,
                                _binomial_se(p, replicas), replicas, wall))
    for k, count in enumerate(survive_counts, start=1):
        p = count / replicas
        rows.append(EstimateRow("gw-generation", 0, 0.0, 0.0, k, p,
                                _binomial_se(p, replicas), replicas, wall))
    fits = {}
    tail_rows = [r for r in rows if r.kind == "gw-progeny-tail"
                 and r.value * replicas >= 100 and r.value > 0
                 and r.n >= min_fit_bucket]
    if len(tail_rows) >= 3:
        fits["gw-progeny-tail"] = fit_loglog(tail_rows)
        fits["gw-progeny-tail"].metadata["min_bucket"] = min_fit_bucket
    return rows, fits


def _identity(spec: ExperimentSpec) -> dict:
    return {"d": spec.d, "alpha": spec.alpha, "kappa": spec.kappa,
            "sizes": list(spec.sizes), "replicas": spec.replicas,
            "seed": spec.seed, "box_factor": spec.box_factor}
