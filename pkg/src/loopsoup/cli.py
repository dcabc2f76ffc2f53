"""Command-line entry point.

Subcommands: sample | analyze | exact | green | experiment | validate |
defaults.  Every run takes a JSON config (nested key-value sections),
merges it over the printable defaults tree with unknown keys rejected,
and writes plain-text outputs (line-delimited loops, CSV, JSON) plus a
reproducibility manifest.  All files are written atomically.

Exit codes: 0 success, 1 configuration problems, 2 guard violations
(requests outside a contract's domain), 3 runtime failures, 4 validation
suite reporting at least one failed check.
"""

from __future__ import annotations

import argparse
import copy
import datetime
import json
import math
import os
import platform
import sys
import time
from dataclasses import asdict
from typing import Dict, List, Optional, Sequence

from . import __version__, kernels
from .errors import ConfigError, GuardError, KernelError, LoopSoupError
from .estimators import (CSV_HEADER, ExperimentSpec, atomic_write_text,
                         run_capacity_growth, run_cluster_tail,
                         run_crossing_scan, run_excursion_tail,
                         run_first_shell_and_threshold, run_gw_progeny,
                         run_one_arm, run_two_point, write_rows)
from .green import FreeGreenTable, GreenTable, green_free
from .lattice import LatticeSpec
from .loopmeasure import (canonicalize, cov_occupancy, expected_first_shell,
                          mu_hit_mass, prob_avoid)
from .percolation import cluster_of
from .rng import stream_prefix
from .sampler import SoupParams, SoupSample, sample_soup

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_GUARD = 2
EXIT_RUNTIME = 3
EXIT_VALIDATION = 4

DEFAULTS: Dict[str, object] = {
    "seed": 0,
    "workers": 1,
    "out": "loopsoup-out",
    "memory_budget_mb": 2048,
    "sample": {
        "dimension": 3,
        "box_radius": 4,
        "alpha": 1.0,
        "kappa": 0.0,
        "n_soups": 1,
        "stream": 0,
    },
    "analyze": {
        "input_dir": None,
        "origin": [0, 0, 0],
    },
    "exact": {
        "dimension": 3,
        "box_radius": 1,
        "kappa": 0.0,
        "alpha": 1.0,
        "sets": [[[0, 0, 0]], [[0, 0, 0], [1, 0, 0]]],
        "pairs": [[[0, 0, 0], [1, 0, 0]]],
        "first_shell_dims": [5, 6],
        "truncation_radius": 10,
    },
    "green": {
        "dimension": 3,
        "box_radius": 8,
        "kappa": 0.0,
        "killed": [],
        "free": False,
        "targets": [[0, 0, 0], [1, 0, 0], [2, 0, 0]],
    },
    "experiment": {
        "kind": "one-arm",
        "d": 5,
        "alpha": 1.0,
        "kappa": 0.0,
        "sizes": [2, 3, 4, 6],
        "box_factor": 2.0,
        "replicas": 10000,
        "checkpoint": True,
        # settings below apply to specific kinds and are ignored elsewhere
        "walkers": 24,
        "alphas": [0.25, 0.5, 1.0],
        "beta": 2.0,
        "level": 0.5,
        "n_walks": 100000,
        "confine_radius": 32,
        "range_radius": 48,
        "want_range": False,
        "shell_box_radius": None,
        "full_cluster_box_radius": None,
        "min_fit_bucket": 16,
        "exact_radius": 30,
        "threshold_dims": [6, 8, 10],
        "first_shell_box_radius": 32,
        "tail_exponent": 1.5,
        "mean": 0.5,
        "max_generations": 60,
    },
}


def _merge_config(defaults: dict, override: dict, path: str = "") -> dict:
    """Overlay a user config on the defaults tree, rejecting unknown keys."""
    merged = copy.deepcopy(defaults)
    for key, value in override.items():
        if key not in defaults:
            raise ConfigError(f"unknown config key {path + key!r}; "
                              f"run the defaults command for the schema")
        base = defaults[key]
        if isinstance(base, dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {path + key!r} must be a section")
            merged[key] = _merge_config(base, value, path + key + ".")
        else:
            merged[key] = value
    return merged


def load_config(path: Optional[str]) -> dict:
    """Read a config file, inline JSON object, or "-" for stdin."""
    if path is None:
        return copy.deepcopy(DEFAULTS)
    try:
        if path == "-":
            text = sys.stdin.read()
        elif path.lstrip().startswith("{"):
            text = path
        else:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        data = json.loads(text)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config root must be an object")
    return _merge_config(DEFAULTS, data)


def emit_config(config: dict) -> str:
    """Render a config; parsing the result again is the identity."""
    return json.dumps(config, indent=2, sort_keys=True) + "\n"


def _utc_now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def _manifest(command: str, config: dict, streams: dict,
              started: str, outputs: Sequence[str]) -> dict:
    return {
        "toolVersion": __version__,
        "command": command,
        "config": config,
        "masterSeed": config["seed"],
        "streamIds": streams,
        "startedAt": started,
        "finishedAt": _utc_now(),
        "outputs": sorted(outputs),
        "host": {
            "platform": platform.platform(),
            "python": platform.python_version(),
            "machine": platform.machine(),
            "compiledKernels": bool(kernels.COMPILED),
        },
    }


def _write_json(path: str, payload: dict) -> None:
    atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _require_number(section: dict, key: str, kind=float, minimum=None):
    value = section[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"config key {key!r} must be a number, got {value!r}")
    if kind is int and int(value) != value:
        raise ConfigError(f"config key {key!r} must be an integer, got {value!r}")
    value = kind(value)
    if minimum is not None and value < minimum:
        raise ConfigError(f"config key {key!r} must be >= {minimum}, got {value}")
    return value


def _lattice_from(section: dict) -> LatticeSpec:
    d = _require_number(section, "dimension", int, 1)
    radius = _require_number(section, "box_radius", int, 1)
    kappa = _require_number(section, "kappa", float)
    if kappa < 0:
        raise ConfigError("kappa < 0 is unsupported: the per-step weight "
                          "1/(2d(1+kappa)) must stay sub-probabilistic")
    return LatticeSpec(d, radius, kappa)


def _loop_lines(sample: SoupSample) -> str:
    spec = sample.params.spec
    lines = []
    for loop in sample.loops:
        idx = [spec.site_index(s) for s in loop.sites]
        lines.append(" ".join([str(loop.length)] + [str(i) for i in idx]))
    return "\n".join(lines) + ("\n" if lines else "")


def _read_loop_file(path: str, spec: LatticeSpec) -> list:
    loops = []
    with open(path, encoding="utf-8") as fh:
        for ln, raw in enumerate(fh, 1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                parts = [int(tok) for tok in raw.split()]
                length, idx = parts[0], parts[1:]
                if length != len(idx):
                    raise ValueError("length field does not match site count")
                sites = [spec.site_coords(i) for i in idx]
                loops.append(canonicalize(sites))
            except (ValueError, IndexError, GuardError) as exc:
                raise ConfigError(f"{path}:{ln}: bad loop line ({exc})") from exc
    return loops


def cmd_sample(config: dict, out_dir: str) -> int:
    started = _utc_now()
    section = config["sample"]
    spec = _lattice_from(section)
    alpha = _require_number(section, "alpha", float)
    if alpha <= 0:
        raise ConfigError(f"alpha must be positive, got {alpha}")
    n_soups = _require_number(section, "n_soups", int, 1)
    base_stream = _require_number(section, "stream", int, 0)
    seed = int(config["seed"])

    outputs = []
    counts = []
    for i in range(n_soups):
        params = SoupParams(alpha=alpha, spec=spec, seed=seed,
                            stream=base_stream + i)
        sample = sample_soup(params)
        name = f"soup-{i:05d}.loops.txt"
        atomic_write_text(os.path.join(out_dir, name), _loop_lines(sample))
        outputs.append(name)
        counts.append({"file": name, "stream": base_stream + i,
                       "n_loops": len(sample.loops),
                       "total_length": sample.total_length})
    manifest = _manifest("sample", config,
                         {"first_stream": base_stream, "n_streams": n_soups},
                         started, outputs)
    manifest["soups"] = counts
    _write_json(os.path.join(out_dir, "manifest.json"), manifest)
    print(f"wrote {n_soups} soup file(s) to {out_dir}")
    return EXIT_OK


def cmd_analyze(config: dict, out_dir: str) -> int:
    started = _utc_now()
    section = config["analyze"]
    input_dir = section["input_dir"] or out_dir
    manifest_path = os.path.join(input_dir, "manifest.json")
    if not os.path.exists(manifest_path):
        raise ConfigError(f"no manifest.json in {input_dir}; "
                          f"run the sample command first")
    with open(manifest_path, encoding="utf-8") as fh:
        sample_manifest = json.load(fh)
    sect = sample_manifest.get("config", {}).get("sample")
    if not sect:
        raise ConfigError(f"{manifest_path} does not describe a sample run")
    spec = _lattice_from(sect)
    alpha = float(sect["alpha"])
    seed = int(sample_manifest["config"]["seed"])
    origin = tuple(int(c) for c in section["origin"])
    if len(origin) != spec.dimension:
        raise ConfigError(f"origin {origin} does not match dimension "
                          f"{spec.dimension}")
    if not spec.in_box(origin):
        raise ConfigError(f"origin {origin} lies outside the sampled box")

    lines = []
    files = sorted(f for f in os.listdir(input_dir) if f.endswith(".loops.txt"))
    if not files:
        raise ConfigError(f"no .loops.txt files in {input_dir}")
    for i, name in enumerate(files):
        loops = _read_loop_file(os.path.join(input_dir, name), spec)
        params = SoupParams(alpha=alpha, spec=spec, seed=seed, stream=i)
        report = cluster_of(SoupSample(loops=loops, params=params,
                                       manifest={}), origin)
        lines.append(json.dumps({
            "soup": name,
            "origin": list(origin),
            "size": report.size,
            "reached_radius": report.reached_radius,
            "shells": {str(k): v for k, v in sorted(report.shells.items())},
            "sites": sorted(map(list, report.origin_cluster)),
        }, sort_keys=True))
    atomic_write_text(os.path.join(out_dir, "clusters.jsonl"),
                      "\n".join(lines) + "\n")
    manifest = _manifest("analyze", config, {"input_dir": input_dir},
                         started, ["clusters.jsonl"])
    _write_json(os.path.join(out_dir, "analyze-manifest.json"), manifest)
    print(f"wrote {len(lines)} cluster report(s) to {out_dir}/clusters.jsonl")
    return EXIT_OK


def _coord_key(site) -> str:
    return " ".join(str(int(c)) for c in site)


def _set_key(sites) -> str:
    return ";".join(_coord_key(s) for s in sites)


def cmd_exact(config: dict, out_dir: str) -> int:
    started = _utc_now()
    section = config["exact"]
    spec = _lattice_from(section)
    alpha = _require_number(section, "alpha", float)
    if alpha <= 0:
        raise ConfigError(f"alpha must be positive, got {alpha}")
    table = GreenTable(spec)
    rows = ["quantity,arguments,value,extra"]
    for raw in section["sets"]:
        fset = tuple(tuple(int(c) for c in s) for s in raw)
        rows.append(f"mu-hit-mass,{_set_key(fset)},"
                    f"{mu_hit_mass(fset, table)!r},")
        rows.append(f"prob-avoid,{_set_key(fset)},"
                    f"{prob_avoid(fset, alpha, table)!r},")
    for raw in section["pairs"]:
        if len(raw) != 2:
            raise ConfigError(f"covariance pairs need exactly 2 sites: {raw}")
        x, y = (tuple(int(c) for c in s) for s in raw)
        rows.append(f"cov-occupancy,{_set_key((x, y))},"
                    f"{cov_occupancy(x, y, alpha, table)!r},")
    radius = _require_number(section, "truncation_radius", int, 2)
    for d in section["first_shell_dims"]:
        d = int(d)
        val = expected_first_shell(alpha, d, radius)
        rows.append(f"expected-first-shell,d={d},{val.value!r},"
                    f"tail_width={val.tail_width!r}")
    atomic_write_text(os.path.join(out_dir, "exact.csv"),
                      "\n".join(rows) + "\n")
    manifest = _manifest("exact", config, {}, started, ["exact.csv"])
    _write_json(os.path.join(out_dir, "exact-manifest.json"), manifest)
    print(f"wrote {len(rows) - 1} exact value(s) to {out_dir}/exact.csv")
    return EXIT_OK


def cmd_green(config: dict, out_dir: str) -> int:
    started = _utc_now()
    section = config["green"]
    targets = [tuple(int(c) for c in t) for t in section["targets"]]
    rows = ["x,y,value"]
    if section["free"]:
        d = _require_number(section, "dimension", int, 1)
        if d < 3:
            raise ConfigError("free-lattice values need dimension >= 3 "
                              "(the walk is recurrent below)")
        for x in targets:
            for y in targets:
                offset = tuple(a - b for a, b in zip(x, y))
                rows.append(f"{_coord_key(x)},{_coord_key(y)},"
                            f"{green_free(d, offset)!r}")
    else:
        spec = _lattice_from(section)
        killed = [tuple(int(c) for c in s) for s in section["killed"]]
        table = GreenTable(spec, killed)
        for x in targets:
            for y in targets:
                rows.append(f"{_coord_key(x)},{_coord_key(y)},"
                            f"{table.entry(x, y)!r}")
    atomic_write_text(os.path.join(out_dir, "green.csv"),
                      "\n".join(rows) + "\n")
    manifest = _manifest("green", config, {}, started, ["green.csv"])
    _write_json(os.path.join(out_dir, "green-manifest.json"), manifest)
    print(f"wrote {len(rows) - 1} entries to {out_dir}/green.csv")
    return EXIT_OK


def _experiment_spec(section: dict, seed: int) -> ExperimentSpec:
    return ExperimentSpec(
        kind=str(section["kind"]),
        d=_require_number(section, "d", int, 1),
        alpha=_require_number(section, "alpha", float),
        kappa=_require_number(section, "kappa", float),
        sizes=tuple(int(n) for n in section["sizes"]),
        box_factor=_require_number(section, "box_factor", float),
        replicas=_require_number(section, "replicas", int, 1),
        seed=seed,
    )


def cmd_experiment(config: dict, out_dir: str, workers: int) -> int:
    started = _utc_now()
    section = config["experiment"]
    seed = int(config["seed"])
    kind = str(section["kind"])
    if section["kappa"] < 0:
        raise ConfigError("kappa < 0 is unsupported: the per-step weight "
                          "1/(2d(1+kappa)) must stay sub-probabilistic")
    ckpt = os.path.join(out_dir, "checkpoint.json") if section["checkpoint"] else None

    if kind == "one-arm":
        spec = _experiment_spec(section, seed)
        rows, fits = run_one_arm(spec, workers=workers, checkpoint_path=ckpt)
    elif kind == "two-point":
        spec = _experiment_spec(section, seed)
        rows, fits = run_two_point(spec, workers=workers, checkpoint_path=ckpt)
    elif kind == "cluster-tail":
        spec = _experiment_spec(section, seed)
        shell_r = section["shell_box_radius"]
        full_r = section["full_cluster_box_radius"]
        rows, fits = run_cluster_tail(
            spec, workers=workers, checkpoint_path=ckpt,
            shell_box_radius=None if shell_r is None else int(shell_r),
            full_cluster_box_radius=None if full_r is None else int(full_r),
            min_fit_bucket=_require_number(section, "min_fit_bucket", int, 1))
    elif kind == "excursion-tail":
        rows, fits = run_excursion_tail(
            _require_number(section, "d", int, 3), seed,
            n_walks=_require_number(section, "n_walks", int, 1),
            confine_radius=_require_number(section, "confine_radius", int, 2),
            range_radius=_require_number(section, "range_radius", int, 2),
            want_range=bool(section["want_range"]),
            range_buckets=tuple(int(n) for n in section["sizes"]),
            workers=workers, checkpoint_path=ckpt)
    elif kind == "crossing-scan":
        rows, fits = run_crossing_scan(
            _require_number(section, "d", int, 1),
            [float(a) for a in section["alphas"]],
            [int(n) for n in section["sizes"]],
            _require_number(section, "replicas", int, 1), seed,
            kappa=float(section["kappa"]),
            beta=_require_number(section, "beta", float),
            box_factor=_require_number(section, "box_factor", float),
            level=_require_number(section, "level", float),
            workers=workers, checkpoint_path=ckpt)
    elif kind == "first-shell":
        spec = _experiment_spec(section, seed)
        rows, fits = run_first_shell_and_threshold(
            spec, workers=workers,
            exact_radius=_require_number(section, "exact_radius", int, 2),
            threshold_dims=tuple(int(d) for d in section["threshold_dims"]),
            box_radius=_require_number(section, "first_shell_box_radius", int, 2),
            checkpoint_path=ckpt)
    elif kind == "capacity-growth":
        spec = _experiment_spec(section, seed)
        rows, fits = run_capacity_growth(
            spec, walkers=_require_number(section, "walkers", int, 1),
            workers=workers, checkpoint_path=ckpt)
    elif kind == "gw-progeny":
        rows, fits = run_gw_progeny(
            _require_number(section, "tail_exponent", float),
            _require_number(section, "mean", float),
            _require_number(section, "replicas", int, 1), seed,
            max_generations=_require_number(section, "max_generations", int, 1),
            tail_buckets=tuple(int(n) for n in section["sizes"]),
            min_fit_bucket=_require_number(section, "min_fit_bucket", int, 1))
    else:
        raise ConfigError(f"unknown experiment kind {kind!r}")

    write_rows(os.path.join(out_dir, "rows.csv"), rows)
    _write_json(os.path.join(out_dir, "fits.json"),
                {name: asdict(fit) for name, fit in fits.items()})
    streams = {"per_size": {str(int(n)): stream_prefix(kind, int(n))
                            for n in section["sizes"]}}
    manifest = _manifest("experiment", config, streams, started,
                         ["rows.csv", "fits.json"])
    _write_json(os.path.join(out_dir, "manifest.json"), manifest)
    print(f"wrote {len(rows)} row(s) and {len(fits)} fit(s) to {out_dir}")
    return EXIT_OK


def cmd_validate(config: dict, out_dir: str, level: str) -> int:
    from .validate import run_validation

    started = _utc_now()
    results = run_validation(level)
    payload = {
        "level": level,
        "startedAt": started,
        "finishedAt": _utc_now(),
        "toolVersion": __version__,
        "results": [asdict(r) for r in results],
        "passed": all(r.passed for r in results if not r.skipped),
    }
    _write_json(os.path.join(out_dir, "validation.json"), payload)
    print(f"wrote {out_dir}/validation.json")
    return EXIT_OK if payload["passed"] else EXIT_VALIDATION


class _Parser(argparse.ArgumentParser):
    """Argument errors are configuration errors, with exit code 1."""

    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="loopsoup",
        description="Sample lattice loop ensembles, analyze their "
                    "percolation clusters, and check them against exact "
                    "identities and scaling laws.",
        epilog="Exit codes: 0 ok, 1 config, 2 guard, 3 runtime, "
               "4 failed validation checks.")
    parser.add_argument("--version", action="version",
                        version=f"loopsoup {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH",
                        help="JSON config: a file path, an inline object, "
                             "or - for stdin (merged over defaults)")
    common.add_argument("--seed", type=int, metavar="U64",
                        help="master seed (overrides the config)")
    common.add_argument("--workers", type=int, metavar="N",
                        help="worker processes (overrides LOOPSOUP_WORKERS "
                             "and the config)")
    common.add_argument("--out", metavar="DIR",
                        help="output directory (overrides the config)")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("sample", parents=[common],
                   help="sample soups to line-delimited loop files")
    sub.add_parser("analyze", parents=[common],
                   help="cluster reports for previously sampled soups")
    sub.add_parser("exact", parents=[common],
                   help="closed-form hit masses, avoidance and covariance")
    sub.add_parser("green", parents=[common],
                   help="Green function entries (box or free lattice)")
    sub.add_parser("experiment", parents=[common],
                   help="run an estimator driver, write CSV + fit sidecar")
    val = sub.add_parser("validate", parents=[common],
                         help="run the numbered validation checks")
    val.add_argument("--level", choices=("quick", "full"), default="quick",
                     help="quick: smoke subset in minutes; full: "
                          "calibrated scales (default: quick)")
    sub.add_parser("defaults", help="print the full default config tree")
    return parser


def _resolve_workers(args, config) -> int:
    if getattr(args, "workers", None) is not None:
        workers = args.workers
    elif os.environ.get("LOOPSOUP_WORKERS"):
        try:
            workers = int(os.environ["LOOPSOUP_WORKERS"])
        except ValueError as exc:
            raise ConfigError(f"LOOPSOUP_WORKERS is not an integer: "
                              f"{os.environ['LOOPSOUP_WORKERS']!r}") from exc
    else:
        workers = int(config["workers"])
    if workers < 1:
        raise ConfigError(f"worker count must be >= 1, got {workers}")
    return workers


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command == "defaults":
            sys.stdout.write(emit_config(DEFAULTS))
            return EXIT_OK
        config = load_config(args.config)
        if args.seed is not None:
            config["seed"] = args.seed
        if args.out is not None:
            config["out"] = args.out
        out_dir = str(config["out"])
        os.makedirs(out_dir, exist_ok=True)
        if args.command == "sample":
            return cmd_sample(config, out_dir)
        if args.command == "analyze":
            return cmd_analyze(config, out_dir)
        if args.command == "exact":
            return cmd_exact(config, out_dir)
        if args.command == "green":
            return cmd_green(config, out_dir)
        if args.command == "experiment":
            return cmd_experiment(config, out_dir, _resolve_workers(args, config))
        if args.command == "validate":
            return cmd_validate(config, out_dir, args.level)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except GuardError as exc:
        print(f"guard violation: {exc}", file=sys.stderr)
        return EXIT_GUARD
    except KernelError as exc:
        print(f"kernel failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except LoopSoupError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
