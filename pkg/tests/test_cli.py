"""End-to-end checks of the command-line interface.

Commands run in-process through ``cli.main`` so exit codes and stderr
text can be asserted directly. Outputs land in tmp directories and are
compared against the library routines they are documented to call.
"""

import copy
import csv
import io
import json
import os

import pytest

from loopsoup import cli
from loopsoup.green import GreenTable
from loopsoup.lattice import LatticeSpec
from loopsoup.loopmeasure import mu_hit_mass, prob_avoid
from loopsoup.percolation import cluster_of
from loopsoup.rng import stream_prefix
from loopsoup.sampler import SoupParams, sample_soup


def run(args, expect=0, capsys=None):
    code = cli.main(args)
    assert code == expect, f"{args} exited {code}, wanted {expect}"
    if capsys is not None:
        return capsys.readouterr()
    return None


SAMPLE_CFG = {"sample": {"dimension": 2, "box_radius": 3, "alpha": 1.5,
                         "n_soups": 3}}


def test_defaults_prints_the_full_schema(capsys):
    out = run(["defaults"], capsys=capsys).out
    assert json.loads(out) == cli.DEFAULTS


def test_defaults_output_is_an_accepted_config(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(run(["defaults"], capsys=capsys).out)
    run(["exact", "--config", str(cfg), "--out", str(tmp_path / "o")])


def test_config_file_inline_and_stdin_agree(tmp_path, monkeypatch, capsys):
    text = json.dumps(SAMPLE_CFG)
    cfg = tmp_path / "cfg.json"
    cfg.write_text(text)
    run(["sample", "--config", str(cfg), "--seed", "5",
         "--out", str(tmp_path / "a")], capsys=capsys)
    run(["sample", "--config", text, "--seed", "5",
         "--out", str(tmp_path / "b")], capsys=capsys)
    monkeypatch.setattr("sys.stdin", io.StringIO(text))
    run(["sample", "--config", "-", "--seed", "5",
         "--out", str(tmp_path / "c")], capsys=capsys)
    files = sorted(f for f in os.listdir(tmp_path / "a")
                   if f.endswith(".loops.txt"))
    assert len(files) == 3
    for name in files:
        ref = (tmp_path / "a" / name).read_bytes()
        assert (tmp_path / "b" / name).read_bytes() == ref
        assert (tmp_path / "c" / name).read_bytes() == ref


@pytest.mark.parametrize("cfg, fragment", [
    ('{"sample": {"typo_key": 1}}', "unknown config key"),
    ('{"sample": {"kappa": -0.5}}', "kappa < 0"),
    ('{"sample": {"alpha": -1.0}}', "alpha"),
    ('{"not json', "config"),
])
def test_bad_configs_exit_one(tmp_path, capsys, cfg, fragment):
    code = cli.main(["sample", "--config", cfg, "--out", str(tmp_path / "o")])
    err = capsys.readouterr().err
    assert code == 1
    assert "config error:" in err
    assert fragment in err


def test_non_object_config_root_exits_one(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text("[1, 2]\n")
    code = cli.main(["sample", "--config", str(cfg),
                     "--out", str(tmp_path / "o")])
    assert code == 1
    assert "root must be an object" in capsys.readouterr().err


def test_missing_config_file_exits_one(tmp_path, capsys):
    code = cli.main(["sample", "--config", str(tmp_path / "nope.json"),
                     "--out", str(tmp_path / "o")])
    assert code == 1
    assert "config error:" in capsys.readouterr().err


def test_unknown_subcommand_exits_one(capsys):
    assert cli.main(["frobnicate"]) == 1
    assert "config error:" in capsys.readouterr().err


def test_no_subcommand_exits_one(capsys):
    assert cli.main([]) == 1


def test_version_flag():
    with pytest.raises(SystemExit) as exc:
        cli.main(["--version"])
    assert exc.value.code == 0


def test_guard_failures_exit_two(tmp_path, capsys):
    cfg = json.dumps({"green": {"targets": [[99, 0, 0]]}})
    code = cli.main(["green", "--config", cfg, "--out", str(tmp_path / "g")])
    assert code == 2
    assert "guard violation:" in capsys.readouterr().err

    cfg = json.dumps({"experiment": {"kind": "crossing-scan", "d": 2,
                                     "replicas": 200, "sizes": [2]}})
    code = cli.main(["experiment", "--config", cfg,
                     "--out", str(tmp_path / "x")])
    assert code == 2


def test_free_green_below_three_dimensions_exits_one(tmp_path, capsys):
    cfg = json.dumps({"green": {"free": True, "dimension": 2,
                                "targets": [[0, 0]]}})
    assert cli.main(["green", "--config", cfg,
                     "--out", str(tmp_path / "g")]) == 1
    assert "recurrent" in capsys.readouterr().err


def test_sample_is_deterministic(tmp_path, capsys):
    cfg = json.dumps(SAMPLE_CFG)
    for name in ("a", "b"):
        run(["sample", "--config", cfg, "--seed", "9",
             "--out", str(tmp_path / name)], capsys=capsys)
    man = []
    for name in ("a", "b"):
        base = tmp_path / name
        with open(base / "manifest.json", encoding="utf-8") as fh:
            m = json.load(fh)
        for key in ("startedAt", "finishedAt"):
            m.pop(key)
        m["config"].pop("out")
        man.append(m)
        for f in sorted(os.listdir(base)):
            if f.endswith(".loops.txt"):
                assert (base / f).read_bytes() == \
                    (tmp_path / "a" / f).read_bytes()
    assert man[0] == man[1]
    run(["sample", "--config", cfg, "--seed", "10",
         "--out", str(tmp_path / "c")], capsys=capsys)
    same = all((tmp_path / "c" / f).read_bytes() ==
               (tmp_path / "a" / f).read_bytes()
               for f in os.listdir(tmp_path / "a") if f.endswith(".loops.txt"))
    assert not same


def test_sample_manifest_describes_streams(tmp_path, capsys):
    run(["sample", "--config", json.dumps(SAMPLE_CFG), "--seed", "4",
         "--out", str(tmp_path / "s")], capsys=capsys)
    with open(tmp_path / "s" / "manifest.json", encoding="utf-8") as fh:
        m = json.load(fh)
    assert m["command"] == "sample"
    assert m["masterSeed"] == 4
    assert m["streamIds"] == {"first_stream": 0, "n_streams": 3}
    assert [s["file"] for s in m["soups"]] == sorted(m["outputs"])
    for s in m["soups"]:
        assert s["total_length"] >= 2 * s["n_loops"]


def test_analyze_round_trips_the_loop_files(tmp_path, capsys):
    run(["sample", "--config", json.dumps(SAMPLE_CFG), "--seed", "9",
         "--out", str(tmp_path / "s")], capsys=capsys)
    run(["analyze", "--config",
         json.dumps({"analyze": {"input_dir": str(tmp_path / "s"),
                                 "origin": [0, 0]}}),
         "--out", str(tmp_path / "an")], capsys=capsys)
    reports = [json.loads(line) for line in
               (tmp_path / "an" / "clusters.jsonl").read_text().splitlines()]
    assert len(reports) == 3
    spec = LatticeSpec(2, 3)
    for i, rep in enumerate(reports):
        params = SoupParams(alpha=1.5, spec=spec, seed=9, stream=i)
        want = cluster_of(sample_soup(params), (0, 0))
        assert rep["size"] == want.size
        assert rep["reached_radius"] == want.reached_radius
        assert rep["shells"] == {str(k): v for k, v in want.shells.items()}
        assert rep["sites"] == sorted(map(list, want.origin_cluster))


def test_analyze_rejects_mismatched_origin(tmp_path, capsys):
    run(["sample", "--config", json.dumps(SAMPLE_CFG), "--seed", "9",
         "--out", str(tmp_path / "s")], capsys=capsys)
    for origin, fragment in ([[0, 0, 0]], "dimension"), ([[9, 0]], "outside"):
        cfg = json.dumps({"analyze": {"input_dir": str(tmp_path / "s"),
                                      "origin": origin[0]}})
        assert cli.main(["analyze", "--config", cfg,
                         "--out", str(tmp_path / "an")]) == 1
        assert fragment in capsys.readouterr().err


def test_analyze_without_sample_run_exits_one(tmp_path, capsys):
    assert cli.main(["analyze", "--out", str(tmp_path / "an")]) == 1
    assert "sample command first" in capsys.readouterr().err


def test_analyze_rejects_corrupt_loop_file(tmp_path, capsys):
    run(["sample", "--config", json.dumps(SAMPLE_CFG), "--seed", "9",
         "--out", str(tmp_path / "s")], capsys=capsys)
    bad = tmp_path / "s" / "soup-00001.loops.txt"
    bad.write_text("3 0 1\n")
    cfg = json.dumps({"analyze": {"input_dir": str(tmp_path / "s"),
                                  "origin": [0, 0]}})
    assert cli.main(["analyze", "--config", cfg,
                     "--out", str(tmp_path / "an")]) == 1
    assert "bad loop line" in capsys.readouterr().err


def test_exact_csv_matches_the_library(tmp_path, capsys):
    run(["exact", "--out", str(tmp_path / "e")], capsys=capsys)
    with open(tmp_path / "e" / "exact.csv", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    table = GreenTable(LatticeSpec(3, 1))
    by_kind = {}
    for r in rows:
        by_kind.setdefault(r["quantity"], []).append(r)
    one = (("0", "0", "0"),)
    pair = (("0", "0", "0"), ("1", "0", "0"))
    f1 = tuple(tuple(map(int, s)) for s in one)
    f2 = tuple(tuple(map(int, s)) for s in pair)
    hit = {r["arguments"]: float(r["value"])
           for r in by_kind["mu-hit-mass"]}
    assert hit["0 0 0"] == mu_hit_mass(f1, table)
    assert hit["0 0 0;1 0 0"] == mu_hit_mass(f2, table)
    avoid = {r["arguments"]: float(r["value"])
             for r in by_kind["prob-avoid"]}
    assert avoid["0 0 0"] == prob_avoid(f1, 1.0, table)
    assert avoid["0 0 0;1 0 0"] == prob_avoid(f2, 1.0, table)
    shell = {r["arguments"]: r for r in by_kind["expected-first-shell"]}
    assert set(shell) == {"d=5", "d=6"}
    for r in shell.values():
        assert float(r["value"]) > 0
        assert r["extra"].startswith("tail_width=")


def test_green_csv_matches_the_table(tmp_path, capsys):
    run(["green", "--out", str(tmp_path / "g")], capsys=capsys)
    with open(tmp_path / "g" / "green.csv", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    table = GreenTable(LatticeSpec(3, 8))
    assert len(rows) == 9
    for r in rows:
        x = tuple(int(c) for c in r["x"].split())
        y = tuple(int(c) for c in r["y"].split())
        assert float(r["value"]) == table.entry(x, y)


EXP_CFG = {"experiment": {"kind": "one-arm", "d": 3, "alpha": 1.0,
                          "sizes": [1, 2], "replicas": 400}}


def _read_rows(path):
    with open(path, encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def test_experiment_reruns_identically_except_walltime(tmp_path, capsys):
    cfg = json.dumps(EXP_CFG)
    for name in ("a", "b"):
        run(["experiment", "--config", cfg, "--seed", "7",
             "--out", str(tmp_path / name)], capsys=capsys)
    ra = _read_rows(tmp_path / "a" / "rows.csv")
    rb = _read_rows(tmp_path / "b" / "rows.csv")
    assert len(ra) == len(rb) > 0
    for x, y in zip(ra, rb):
        for key in x:
            if key != "walltime_s":
                assert x[key] == y[key], key
    fa = json.loads((tmp_path / "a" / "fits.json").read_text())
    fb = json.loads((tmp_path / "b" / "fits.json").read_text())
    assert fa == fb


def test_experiment_manifest_and_checkpoint(tmp_path, capsys):
    run(["experiment", "--config", json.dumps(EXP_CFG), "--seed", "7",
         "--out", str(tmp_path / "x")], capsys=capsys)
    assert (tmp_path / "x" / "checkpoint.json").exists()
    with open(tmp_path / "x" / "manifest.json", encoding="utf-8") as fh:
        m = json.load(fh)
    per_size = m["streamIds"]["per_size"]
    assert per_size == {str(n): stream_prefix("one-arm", n) for n in (1, 2)}
    assert sorted(m["outputs"]) == ["fits.json", "rows.csv"]
    assert m["host"]["compiledKernels"] in (True, False)


def test_experiment_rows_do_not_depend_on_workers(tmp_path, monkeypatch,
                                                  capsys):
    cfg = json.dumps(EXP_CFG)
    run(["experiment", "--config", cfg, "--seed", "7", "--workers", "1",
         "--out", str(tmp_path / "w1")], capsys=capsys)
    monkeypatch.setenv("LOOPSOUP_WORKERS", "2")
    run(["experiment", "--config", cfg, "--seed", "7",
         "--out", str(tmp_path / "w2")], capsys=capsys)
    ra = _read_rows(tmp_path / "w1" / "rows.csv")
    rb = _read_rows(tmp_path / "w2" / "rows.csv")
    for x, y in zip(ra, rb):
        for key in x:
            if key != "walltime_s":
                assert x[key] == y[key], key


def test_worker_count_must_be_positive(tmp_path, capsys):
    code = cli.main(["experiment", "--config", json.dumps(EXP_CFG),
                     "--workers", "0", "--out", str(tmp_path / "x")])
    assert code == 1
    assert "worker count" in capsys.readouterr().err


def test_unknown_experiment_kind_exits_one(tmp_path, capsys):
    cfg = json.dumps({"experiment": {"kind": "ouija"}})
    assert cli.main(["experiment", "--config", cfg,
                     "--out", str(tmp_path / "x")]) == 1
    assert "ouija" in capsys.readouterr().err


def test_merge_rejects_unknown_nested_keys():
    with pytest.raises(cli.ConfigError, match="sample.typo"):
        cli._merge_config(copy.deepcopy(cli.DEFAULTS),
                          {"sample": {"typo": 1}})


def test_seed_flag_overrides_config(tmp_path, capsys):
    cfg = json.dumps({"seed": 1, **SAMPLE_CFG})
    run(["sample", "--config", cfg, "--seed", "9",
         "--out", str(tmp_path / "a")], capsys=capsys)
    with open(tmp_path / "a" / "manifest.json", encoding="utf-8") as fh:
        assert json.load(fh)["masterSeed"] == 9
