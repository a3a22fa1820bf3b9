"""Line-oriented report files and run manifests.

A report is ``key=value`` lines optionally followed by CSV blocks, each
introduced by a ``[name]`` line::

    n=256
    epsilon=0.7412
    [eigenvalues]
    index,value
    0,6.0
"""

from __future__ import annotations

import hashlib
import io
import os
import shlex
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

from . import __version__


def format_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def render_report(fields: Mapping, blocks: Optional[Mapping[str, tuple[Sequence[str], Iterable[Sequence]]]] = None) -> str:
    out = io.StringIO()
    for k, v in fields.items():
        out.write(f"{k}={format_value(v)}\n")
    for name, (header, rows) in (blocks or {}).items():
        out.write(f"[{name}]\n")
        out.write(",".join(header) + "\n")
        for row in rows:
            out.write(",".join(format_value(x) for x in row) + "\n")
    return out.getvalue()


def parse_report(text: str) -> tuple[dict[str, str], dict[str, list[list[str]]]]:
    """Inverse of :func:`render_report` (values stay strings)."""
    fields: dict[str, str] = {}
    blocks: dict[str, list[list[str]]] = {}
    current = None
    for line in text.splitlines():
        if not line.strip():
            continue
        if line.startswith("[") and line.endswith("]"):
            current = blocks.setdefault(line[1:-1], [])
        elif current is not None:
            current.append(line.split(","))
        else:
            k, _, v = line.partition("=")
            fields[k] = v
    return fields, blocks


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def manifest_path(output) -> Path:
    return Path(str(output) + ".manifest")


def write_manifest(subcommand: str, argv: Sequence[str], config: Mapping, seeds: Mapping,
                   inputs: Sequence, outputs: Sequence) -> Path:
    """Record enough to replay a run next to its first output file."""
    fields = {
        "subcommand": subcommand,
        "tool_version": __version__,
        "argv": shlex.join(argv),
        "cwd": os.getcwd(),
    }
    fields.update({f"config.{k}": v for k, v in config.items()})
    fields.update({f"seed.{k}": v for k, v in seeds.items()})
    fields.update({f"input.{p}": sha256_file(p) for p in inputs})
    fields.update({f"output.{p}": sha256_file(p) for p in outputs})
    path = manifest_path(outputs[0])
    path.write_text(render_report(fields))
    return path


def read_manifest(path) -> dict[str, str]:
    return parse_report(Path(path).read_text())[0]
