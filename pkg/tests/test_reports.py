import hashlib
import os

from expattn import __version__
from expattn.reports import (format_value, manifest_path, parse_report, read_manifest, render_report,
                             sha256_file, write_manifest)


def test_format_value():
    assert format_value(None) == "none"
    assert format_value(True) == "true"
    assert format_value(0.1) == "0.1"
    assert format_value(3) == "3"


def test_render_parse_round_trip():
    text = render_report({"n": 4, "eps": 0.5, "ok": False},
                         {"eigenvalues": (("index", "value"), [(0, 2.0), (1, -2.0)])})
    assert text.splitlines()[:4] == ["n=4", "eps=0.5", "ok=false", "[eigenvalues]"]
    fields, blocks = parse_report(text)
    assert fields == {"n": "4", "eps": "0.5", "ok": "false"}
    assert blocks["eigenvalues"] == [["index", "value"], ["0", "2.0"], ["1", "-2.0"]]


def test_manifest_contents(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    (tmp_path / "in.txt").write_text("abc")
    (tmp_path / "out.txt").write_text("xyz")
    path = write_manifest("demo", ["demo", "--x", "a b"], {"k": 1}, {"main": 7}, ["in.txt"], ["out.txt"])
    assert path == manifest_path("out.txt")
    man = read_manifest(path)
    assert man["subcommand"] == "demo"
    assert man["tool_version"] == __version__
    assert man["argv"] == "demo --x 'a b'"
    assert man["cwd"] == os.getcwd()
    assert man["config.k"] == "1" and man["seed.main"] == "7"
    assert man["input.in.txt"] == hashlib.sha256(b"abc").hexdigest()
    assert man["output.out.txt"] == sha256_file("out.txt")
