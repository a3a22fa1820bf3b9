import math
import subprocess
import sys

import pytest

from expattn.cli import load_pattern_config, main
from expattn.graph import path_graph, write_edge_list
from expattn.reports import parse_report, read_manifest


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    return tmp_path


def report(capsys):
    return parse_report(capsys.readouterr().out)


def test_generate_writes_graph_cert_and_manifest(workdir):
    assert main(["generate", "--n", "256", "--d", "6", "--variant", "hamiltonian", "--seed", "1",
                 "--out", "g.el"]) == 0
    for name in ("g.el", "g.el.cert", "g.el.manifest"):
        assert (workdir / name).exists()
    man = read_manifest("g.el.manifest")
    assert man["subcommand"] == "generate" and man["seed.generator"] == "1"
    assert "hamiltonian_cycles=3" in (workdir / "g.el.cert").read_text()


def test_spectrum_reports_achieved_bound(workdir, capsys):
    main(["generate", "--n", "256", "--d", "6", "--seed", "1", "--out", "g.el"])
    capsys.readouterr()
    assert main(["spectrum", "--in", "g.el", "--slack", "0.6", "--pe", "2"]) == 0
    fields, blocks = report(capsys)
    assert float(fields["achieved_bound"]) <= 2 * math.sqrt(5) + 0.6
    assert fields["near_ramanujan"] == "true"
    assert len(blocks["eigenvalues"]) == 257
    assert blocks["laplacian_pe"][0] == ["node", "pe0", "pe1"]


def test_check_reports_without_failing(workdir, capsys):
    main(["generate", "--n", "64", "--d", "4", "--seed", "0", "--out", "g.el"])
    assert main(["pattern", "--in", "g.el", "--virtual", "0", "--expander-d", "4", "--variant", "standard",
                 "--seed", "2", "--no-self-loops", "--out", "p.exph"]) == 0
    capsys.readouterr()
    assert main(["check", "--pattern", "p.exph"]) == 0
    fields, _ = report(capsys)
    assert fields["universality.satisfied"] == "false"
    assert fields["universality.hamiltonian"] == "false"
    assert int(fields["budget.total"]) <= int(fields["budget.bound"])


def test_check_hamiltonian_pattern_uses_certificate(workdir, capsys):
    write_edge_list(path_graph(32), "p32.el")
    main(["pattern", "--in", "p32.el", "--virtual", "0", "--expander-d", "4", "--variant", "hamiltonian",
          "--seed", "3", "--out", "p.exph"])
    capsys.readouterr()
    assert main(["check", "--pattern", "p.exph"]) == 0
    fields, _ = report(capsys)
    assert fields["universality.hamiltonian"] == "true"
    assert fields["universality.satisfied"] == "true"


def test_check_suite_exit_code(workdir, capsys):
    assert main(["check", "--suite", "universality", "--suite", "spectral"]) == 0
    fields, _ = report(capsys)
    assert fields["suite.universality"] == "true"


def test_mixing(workdir, capsys):
    main(["generate", "--n", "128", "--d", "6", "--seed", "0", "--out", "g.el"])
    capsys.readouterr()
    assert main(["mixing", "--in", "g.el", "--delta", "0.001"]) == 0
    fields, _ = report(capsys)
    assert int(fields["t_empirical"]) <= int(fields["t_bound"])


def test_domain_error_exit_1(workdir, capsys):
    write_edge_list(path_graph(4), "p4.el")
    assert main(["mixing", "--in", "p4.el"]) == 1  # bipartite
    assert "NoConvergence" in capsys.readouterr().err
    assert main(["generate", "--n", "40", "--d", "4", "--seed", "16", "--slack", "0", "--max-retries", "2",
                 "--out", "x.el"]) == 1
    assert "RetriesExhausted" in capsys.readouterr().err
    assert main(["spectrum", "--in", "missing.el"]) == 1


def test_usage_errors_exit_2(capsys):
    assert main(["generate", "--bogus"]) == 2
    assert "usage" in capsys.readouterr().err
    assert main([]) == 2
    assert main(["frobnicate"]) == 2


def test_train_report_and_replay(workdir, capsys):
    (workdir / "pc.txt").write_text("use_local=true\nnum_virtual=1\nself_loops=true\nexpander_d=4\n")
    argv = ["train", "--task", "global-mean", "--pattern-config", "pc.txt", "--steps", "20", "--seed", "3",
            "--graphs", "10", "--report", "r.txt"]
    assert main(argv) == 0
    fields, blocks = parse_report((workdir / "r.txt").read_text())
    assert fields["steps"] == "20" and len(blocks["loss"]) == 21
    assert (workdir / "r.txt.timing").exists()
    first = (workdir / "r.txt").read_bytes()
    assert main(["replay", "r.txt.manifest"]) == 0
    assert (workdir / "r.txt").read_bytes() == first
    assert "replay identical" in capsys.readouterr().out


def test_replay_detects_changed_input(workdir, capsys):
    write_edge_list(path_graph(5), "p5.el")
    main(["pattern", "--in", "p5.el", "--virtual", "1", "--out", "p.exph"])
    (workdir / "p5.el").write_text("5 1\n0 1 1\n")
    assert main(["replay", "p.exph.manifest"]) == 1
    assert "changed" in capsys.readouterr().err


def test_pattern_config_parsing(tmp_path):
    path = tmp_path / "pc.txt"
    path.write_text("use_local=false\nnum_virtual=0\nexpander_d=6\nexpander_variant=hamiltonian\n")
    cfg = load_pattern_config(path, 20)
    assert not cfg.use_local and cfg.num_virtual == 0 and cfg.expander.d == 6
    path.write_text("colour=blue\n")
    with pytest.raises(ValueError):
        load_pattern_config(path, 20)


def test_console_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "expattn.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "generate" in out.stdout
