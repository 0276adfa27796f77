import csv
import json
import subprocess
import sys

import pytest

from ezag.cli import cli_main
from ezag.harness import (
    BUILTIN_SPECS,
    OUTPUT_ENV,
    ExperimentSpec,
    SpecError,
    connected_world,
    load_spec,
    parse_spec,
    run_experiment,
)
from ezag.world import is_connected

TINY = """
[experiment]
kind = protocol
protocols = ezag, srrw
n = 1, 30
models = random_direction
speeds = 9
trials = 2
"""


def rows_of(path):
    with open(path) as f:
        return list(csv.DictReader(f))


def test_single_node_spec_gives_one_trivial_row(tmp_path):
    spec = parse_spec("[experiment]\nn = 1\ntrials = 1\nprotocols = ezag\n", "one")
    out = run_experiment(spec, tmp_path)
    rows = rows_of(out.trials_csv)
    assert len(rows) == 1
    assert rows[0]["transfers"] == "0" and rows[0]["complete"] == "1"
    manifest = json.loads(out.manifest.read_text())
    assert manifest["seeds"] == [0]


def test_spec_round_trips_through_ini():
    for spec in BUILTIN_SPECS.values():
        again = parse_spec(spec.to_ini(), spec.name)
        assert again == spec


def test_inline_comments_are_ignored():
    spec = parse_spec("[experiment]\nprotocols = ezag, srrw ; two protocols\nn = 100 ; small\n", "c")
    assert spec.protocols == ("ezag", "srrw") and spec.n_values == (100,)


def test_builtins_validate():
    for spec in BUILTIN_SPECS.values():
        spec.validate()
    assert set(BUILTIN_SPECS["fig2b"].protocols) == {"srrw", "ezag"}
    assert BUILTIN_SPECS["table1"].kind == "link_change"


@pytest.mark.parametrize(
    "text,msg",
    [
        ("[experiment]\ntrials = 0\n", "trials"),
        ("[experiment]\nprotocols = flood\n", "protocol"),
        ("[experiment]\nfoo = 1\n", "unknown spec key"),
        ("[other]\n", "experiment"),
        ("[experiment]\nn = ten\n", "bad value"),
    ],
)
def test_bad_specs_are_rejected(text, msg):
    with pytest.raises(SpecError, match=msg):
        parse_spec(text).validate()


def test_rerun_is_byte_identical_and_worker_count_does_not_matter(tmp_path):
    spec = parse_spec(TINY, "tiny")
    a = run_experiment(spec, tmp_path / "a")
    b = run_experiment(spec, tmp_path / "b")
    c = run_experiment(spec, tmp_path / "c", workers=2)
    body = a.trials_csv.read_bytes()
    assert body == b.trials_csv.read_bytes() == c.trials_csv.read_bytes()
    assert a.summary_csv.read_bytes() == c.summary_csv.read_bytes()
    assert len(rows_of(a.trials_csv)) == 2 * 2 * 2


def test_spec_file_is_not_modified(tmp_path):
    p = tmp_path / "tiny.ini"
    p.write_text(TINY)
    before = p.read_bytes()
    assert cli_main(["run", str(p), "--output", str(tmp_path / "o")]) == 0
    assert p.read_bytes() == before
    assert load_spec(str(p)).name == "tiny"


def test_unwritable_output_fails_before_simulating(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    spec = parse_spec(TINY, "tiny")
    with pytest.raises(OSError):
        run_experiment(spec, blocker / "sub")
    assert cli_main(["run", "fig2b", "--output", str(blocker / "sub")]) == 1
    assert "I/O error" in capsys.readouterr().err


def test_output_directory_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path))
    out = run_experiment(parse_spec("[experiment]\nn = 1\ntrials = 1\n", "envcheck"))
    assert out.directory == tmp_path / "envcheck"
    assert out.trials_csv.exists()


def test_link_change_and_projection_specs(tmp_path):
    spec = parse_spec("[experiment]\nkind = link_change\nn = 100\nspeeds = 3\ntrials = 1\ntrace_duration = 5\n", "lc")
    rows = rows_of(run_experiment(spec, tmp_path / "lc").trials_csv)
    assert len(rows) == 1 and float(rows[0]["link_changes_per_node_s"]) > 0
    assert rows[0]["reference"] == "1"
    out = run_experiment(BUILTIN_SPECS["gossip"], tmp_path / "g")
    assert rows_of(out.trials_csv)[0]["n"] == "100"


def test_hierarchy_spec(tmp_path):
    spec = parse_spec("[experiment]\nkind = hierarchy\nn = 256\nmodels = static\ntrials = 1\n", "h")
    out = run_experiment(spec, tmp_path)
    rows = rows_of(out.trials_csv)
    assert [r["level"] for r in rows] == ["0", "1", "2"]
    assert (tmp_path / "projection.csv").exists()


def test_connected_world_redraws_deterministically():
    w1 = connected_world(60, 6e-3, 4)
    w2 = connected_world(60, 6e-3, 4)
    assert is_connected(w1)
    assert (w1.positions == w2.positions).all()


def test_cli_commands(capsys):
    assert cli_main(["list-specs"]) == 0
    listing = capsys.readouterr().out
    assert "fig2b" in listing and "table1" in listing
    assert cli_main(["validate", "fig2b"]) == 0
    assert cli_main(["oracle", "coupon", "3"]) == 0
    assert capsys.readouterr().out.splitlines()[-1] == "5.5"
    assert cli_main(["oracle", "cover", "cycle4"]) == 0
    assert cli_main(["oracle", "hier-messages", "1024", "16"]) == 0
    assert capsys.readouterr().out.splitlines()[-1] == "4096"


def test_cli_validate_names_the_violation(tmp_path, capsys):
    p = tmp_path / "zero.ini"
    p.write_text("[experiment]\ntrials = 0\n")
    assert cli_main(["validate", str(p)]) == 1
    assert "trials must be >= 1" in capsys.readouterr().err


def test_cli_usage_errors_exit_two():
    for argv in (["frobnicate"], ["run"], ["list-specs", "--bogus"]):
        with pytest.raises(SystemExit) as e:
            cli_main(argv)
        assert e.value.code == 2


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "ezag", "oracle", "coupon", "1"], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.strip() == "1.0"


def test_cli_run_with_trial_override(tmp_path):
    assert cli_main(["run", "fig2a", "--trials", "1", "--output", str(tmp_path)]) == 0
    rows = rows_of(tmp_path / "trials.csv")
    assert len(rows) == 3
