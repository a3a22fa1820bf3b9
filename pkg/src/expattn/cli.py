"""``expattn`` command-line entry point.

Every subcommand that writes files also writes ``<first output>.manifest``
holding the argv, resolved config, seeds and SHA-256 digests of inputs and
outputs.  ``expattn replay MANIFEST`` re-runs it and verifies the digests.

Exit codes: 0 success, 1 domain error (diagnostic on stderr), 2 usage error.
"""

from __future__ import annotations

import argparse
import logging
import os
import shlex
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import checks
from .attention import AttentionError
from .expander import ExpanderConfig, GenerationCertificate, RetriesExhausted, Variant, generate_verified
from .graph import GraphError, read_edge_list, write_edge_list
from .pattern import (PatternConfig, PatternError, build_pattern, budget_bound, check_invariants,
                      edge_budget, export_pattern, import_pattern, reachability_layers,
                      universality_precondition, EdgeKind)
from .reports import parse_report, read_manifest, render_report, sha256_file, write_manifest
from .spectral import (NoConvergence, SpectralError, adjacency_spectrum, empirical_mixing_time,
                       is_epsilon_expander, laplacian_pe, mixing_bound, near_ramanujan_from_eigs)
from .train import TaskKind, TrainConfig, TrainingDiverged, make_task, train_loop

log = logging.getLogger("expattn")

DOMAIN_ERRORS = (RetriesExhausted, NoConvergence, GraphError, SpectralError, PatternError,
                 AttentionError, TrainingDiverged, ValueError, KeyError, OSError)

SUITES = ("spectral", "ramanujan", "mixing", "diameter", "oracle", "gradcheck",
          "softmax", "budget", "forcing", "reachability", "universality")


def cert_path(out) -> Path:
    return Path(str(out) + ".cert")


def _emit(text: str, out: Optional[str]) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


# -- generate ---------------------------------------------------------------

def cmd_generate(args, argv) -> int:
    # the file holds the certified multigraph unless stripping is asked for
    cfg = ExpanderConfig(args.n, args.d, Variant(args.variant), seed=args.seed, slack=args.slack,
                         max_retries=args.max_retries, strip_self_loops=args.strip_self_loops)
    g, cert = generate_verified(cfg)
    write_edge_list(g, args.out)
    cert.save(cert_path(args.out))
    write_manifest("generate", argv,
                   {"n": cfg.n, "d": cfg.d, "variant": cfg.variant.value, "slack": cfg.slack,
                    "max_retries": cfg.max_retries, "strip_self_loops": cfg.strip_self_loops},
                   {"generator": cfg.seed}, [], [args.out, cert_path(args.out)])
    print(f"wrote {args.out} (retries={cert.retries}, achieved_bound={cert.achieved_bound:.6f})")
    return 0


# -- spectrum ---------------------------------------------------------------

def cmd_spectrum(args, argv) -> int:
    g = read_edge_list(args.input)
    rep = adjacency_spectrum(g)
    fields = rep.as_dict()
    if args.eps is not None:
        fields["eps"] = args.eps
        fields["is_epsilon_expander"] = is_epsilon_expander(g, args.eps)
    if args.slack is not None:
        if not rep.regular:
            raise SpectralError("near-Ramanujan check needs a regular graph")
        ok, _ = near_ramanujan_from_eigs(rep.eigenvalues, rep.d_max, args.slack)
        fields["slack"] = args.slack
        fields["near_ramanujan"] = ok
    blocks = {"eigenvalues": (("index", "value"), enumerate(rep.eigenvalues.tolist()))}
    if args.pe:
        pe = laplacian_pe(g, args.pe)
        blocks["laplacian_pe"] = (("node",) + tuple(f"pe{j}" for j in range(args.pe)),
                                  ([i] + row for i, row in enumerate(pe.tolist())))
    _emit(render_report(fields, blocks), args.out)
    if args.out:
        write_manifest("spectrum", argv, {"eps": args.eps, "slack": args.slack, "pe": args.pe},
                       {}, [args.input], [args.out])
    return 0


# -- pattern ----------------------------------------------------------------

def cmd_pattern(args, argv) -> int:
    g = read_edge_list(args.input)
    expander = None
    if args.expander_d:
        expander = ExpanderConfig(g.n, args.expander_d, Variant(args.variant), seed=args.seed,
                                  slack=args.slack)
    cfg = PatternConfig(use_local=not args.no_local, expander=expander, num_virtual=args.virtual,
                        self_loops=not args.no_self_loops)
    p, cert = build_pattern(g, cfg)
    export_pattern(p, args.out)
    outputs = [args.out]
    if cert is not None:
        cert.save(cert_path(args.out))
        outputs.append(cert_path(args.out))
    write_manifest("pattern", argv,
                   {"virtual": args.virtual, "expander_d": args.expander_d, "variant": args.variant,
                    "slack": None if expander is None else expander.slack, "local": not args.no_local,
                    "self_loops": not args.no_self_loops},
                   {"expander": args.seed}, [args.input], outputs)
    print(f"wrote {args.out} ({p.num_edges} edges, flags {p.flags})")
    return 0


# -- mixing -----------------------------------------------------------------

def cmd_mixing(args, argv) -> int:
    g = read_edge_list(args.input)
    fields = {"n": g.n, "delta": args.delta, "start": args.start}
    if g.is_regular():
        rep = adjacency_spectrum(g)
        fields["epsilon"] = rep.epsilon
        if rep.epsilon is not None and 0 < rep.epsilon < 1:
            fields["t_bound"] = mixing_bound(g.n, rep.epsilon, args.delta).t_bound
    fields["t_empirical"] = empirical_mixing_time(g, args.delta, args.start, args.max_steps)
    _emit(render_report(fields), args.out)
    if args.out:
        write_manifest("mixing", argv, {"delta": args.delta, "start": args.start,
                                        "max_steps": args.max_steps}, {}, [args.input], [args.out])
    return 0


# -- check ------------------------------------------------------------------

def _pattern_report(args) -> dict:
    p = import_pattern(args.pattern)
    check_invariants(p)
    cert = None
    cpath = Path(args.cert) if args.cert else cert_path(args.pattern)
    if args.cert or cpath.exists():
        cert = GenerationCertificate.load(cpath)
    uni = universality_precondition(p, cert)
    budget = edge_budget(p)
    local = len(p.edge_set(EdgeKind.LOCAL)) // 2
    x_deg = 0
    if p.n_real and p.used_expander:
        x_deg = round(len(p.edge_set(EdgeKind.EXPANDER)) / p.n_real)
    fields = {
        "n_real": p.n_real,
        "n_virtual": p.n_virtual,
        "flags": p.flags,
        "universality.star": uni.star,
        "universality.hamiltonian": uni.hamiltonian,
        "universality.self_loops": uni.self_loops,
        "universality.satisfied": uni.satisfied,
        "reachability_layers": reachability_layers(p),
    }
    fields.update({f"budget.{k}": v for k, v in budget.items()})
    fields["budget.bound"] = budget_bound(local, p.n_real, x_deg, p.n_virtual, p.used_self_loops)
    return fields


def _small(suite: str):
    """Reduced-size runs used unless ``--full`` is given."""
    return {
        "spectral": lambda: checks.spectral_sanity(),
        "ramanujan": lambda: checks.near_ramanujan_rates(ns=(256,), ds=(6,), draws=10)[0],
        "mixing": lambda: checks.mixing_time_check(checks.near_ramanujan_rates(ns=(256,), ds=(6,), draws=5)[1]),
        "diameter": lambda: checks.diameter_scaling(calib_seeds=5, test_sizes=((1024, 3),)),
        "oracle": lambda: checks.oracle_equivalence(28),
        "gradcheck": lambda: checks.gradient_exactness(14),
        "softmax": lambda: checks.softmax_and_equivariance(14),
        "budget": lambda: checks.linear_budget(),
        "forcing": lambda: checks.component_forcing(seeds=1),
        "reachability": lambda: checks.reachability(5),
        "universality": lambda: checks.universality(),
    }[suite]


def _full(suite: str):
    def mixing():
        return checks.mixing_time_check(checks.near_ramanujan_rates()[1])
    return {
        "spectral": checks.spectral_sanity,
        "ramanujan": lambda: checks.near_ramanujan_rates()[0],
        "mixing": mixing,
        "diameter": checks.diameter_scaling,
        "oracle": checks.oracle_equivalence,
        "gradcheck": checks.gradient_exactness,
        "softmax": checks.softmax_and_equivariance,
        "budget": checks.linear_budget,
        "forcing": checks.component_forcing,
        "reachability": checks.reachability,
        "universality": checks.universality,
    }[suite]


def cmd_check(args, argv) -> int:
    if not args.pattern and not args.suite:
        raise ValueError("check needs --pattern and/or --suite")
    fields: dict = {}
    if args.pattern:
        fields.update(_pattern_report(args))
    failed = False
    suites = list(SUITES) if args.suite and "all" in args.suite else (args.suite or [])
    for name in suites:
        res = (_full if args.full else _small)(name)()
        print(res.line(), file=sys.stderr)
        fields[f"suite.{name}"] = res.passed
        failed |= not res.passed
    _emit(render_report(fields), args.out)
    if args.out:
        inputs = [args.pattern] if args.pattern else []
        write_manifest("check", argv, {"suites": " ".join(suites), "full": args.full}, {}, inputs, [args.out])
    return 1 if failed else 0


# -- train ------------------------------------------------------------------

_BOOL = {"true": True, "false": False, "1": True, "0": False, "yes": True, "no": False}


def load_pattern_config(path, nodes: int) -> PatternConfig:
    """Parse a ``key=value`` pattern config.

    Keys: use_local, num_virtual, self_loops, expander_d (0 = none),
    expander_variant, expander_slack.
    """
    kv, _ = parse_report(Path(path).read_text())
    known = {"use_local", "num_virtual", "self_loops", "expander_d", "expander_variant", "expander_slack"}
    unknown = set(kv) - known
    if unknown:
        raise ValueError(f"{path}: unknown pattern-config keys {sorted(unknown)}")

    def flag(key, default):
        v = kv.get(key)
        if v is None:
            return default
        if v.lower() not in _BOOL:
            raise ValueError(f"{path}: {key} must be a boolean, got {v!r}")
        return _BOOL[v.lower()]

    d = int(kv.get("expander_d", 0))
    expander = None
    if d:
        slack = kv.get("expander_slack")
        expander = ExpanderConfig(nodes, d, Variant(kv.get("expander_variant", "standard")),
                                  slack=None if slack in (None, "none") else float(slack))
    return PatternConfig(use_local=flag("use_local", True), expander=expander,
                         num_virtual=int(kv.get("num_virtual", 1)), self_loops=flag("self_loops", True))


def cmd_train(args, argv) -> int:
    pcfg = load_pattern_config(args.pattern_config, args.nodes)
    cfg = TrainConfig(pattern=pcfg, steps=args.steps, seed=args.seed, lr=args.lr, layers=args.layers,
                      batch_size=args.batch_size)
    task = make_task(TaskKind(args.task), args.graphs, args.nodes, seed=args.seed)
    rep = train_loop(task, cfg)
    fields = {
        "task": args.task,
        "steps": args.steps,
        "seed": args.seed,
        "graphs": args.graphs,
        "nodes": args.nodes,
        "initial_train_accuracy": rep.initial_train_accuracy,
        "initial_test_accuracy": rep.initial_test_accuracy,
        "train_accuracy": rep.train_accuracy,
        "test_accuracy": rep.test_accuracy,
        "final_loss": rep.losses[-1] if rep.losses else None,
    }
    fields.update({f"budget.{k}": v for k, v in rep.edge_budget.items()})
    Path(args.report).write_text(render_report(fields, {"loss": (("step", "loss"), enumerate(rep.losses))}))
    # wall-clock lives in its own file so the report stays byte-reproducible
    timing = Path(str(args.report) + ".timing")
    timing.write_text(render_report({"mean_step_seconds": rep.mean_step_seconds},
                                    {"step_seconds": (("step", "seconds"), enumerate(rep.step_seconds))}))
    write_manifest("train", argv,
                   {"task": args.task, "steps": args.steps, "graphs": args.graphs, "nodes": args.nodes,
                    "lr": args.lr, "layers": args.layers, "batch_size": args.batch_size},
                   {"task": args.seed, "train": args.seed}, [args.pattern_config], [args.report])
    print(f"test_accuracy={rep.test_accuracy:.4f}")
    return 0


# -- replay -----------------------------------------------------------------

def cmd_replay(args, argv) -> int:
    mpath = Path(args.manifest).resolve()
    man = read_manifest(mpath)
    cwd = Path(man.get("cwd", mpath.parent))
    inputs = {k[6:]: v for k, v in man.items() if k.startswith("input.")}
    outputs = {k[7:]: v for k, v in man.items() if k.startswith("output.")}
    for name, digest in inputs.items():
        if sha256_file(cwd / name) != digest:
            raise ValueError(f"input {name} changed since the recorded run")
    here = os.getcwd()
    os.chdir(cwd)
    try:
        code = main(shlex.split(man["argv"]))
    finally:
        os.chdir(here)
    if code != 0:
        return code
    mismatched = [name for name, digest in outputs.items() if sha256_file(cwd / name) != digest]
    # the rerun rewrote the manifest; keep the recorded one
    mpath.write_text(render_report(man))
    if mismatched:
        print(f"error: replay produced different outputs: {', '.join(mismatched)}", file=sys.stderr)
        return 1
    print("replay identical")
    return 0


# -- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="expattn", description="Expander sparse attention toolkit")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="sample a certified expander")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--variant", choices=[v.value for v in Variant], default="standard")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--slack", type=float, default=None, help="additive slack (default 0.1*d)")
    p.add_argument("--max-retries", type=int, default=20)
    p.add_argument("--strip-self-loops", action="store_true",
                   help="drop self-loops after certification (output may be irregular)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("spectrum", help="spectral report for an edge list")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--eps", type=float)
    p.add_argument("--slack", type=float)
    p.add_argument("--pe", type=int, default=0, help="number of Laplacian PE columns")
    p.add_argument("--out")
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("pattern", help="assemble an attention pattern")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--virtual", type=int, default=1)
    p.add_argument("--expander-d", type=int, default=0)
    p.add_argument("--variant", choices=[v.value for v in Variant], default="standard")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--slack", type=float, default=None)
    p.add_argument("--no-local", action="store_true")
    p.add_argument("--no-self-loops", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pattern)

    p = sub.add_parser("mixing", help="empirical and bounded mixing time")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--delta", type=float, default=1e-3)
    p.add_argument("--start", type=int, default=0)
    p.add_argument("--max-steps", type=int, default=None)
    p.add_argument("--out")
    p.set_defaults(func=cmd_mixing)

    p = sub.add_parser("check", help="pattern report and property suites")
    p.add_argument("--pattern")
    p.add_argument("--cert", help="certificate (default: PATTERN.cert if present)")
    p.add_argument("--suite", action="append", choices=SUITES + ("all",))
    p.add_argument("--full", action="store_true", help="run suites at acceptance size")
    p.add_argument("--out")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("train", help="train on a synthetic task")
    p.add_argument("--task", choices=[t.value for t in TaskKind], required=True)
    p.add_argument("--pattern-config", required=True)
    p.add_argument("--steps", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--graphs", type=int, default=200)
    p.add_argument("--nodes", type=int, default=16)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("replay", help="re-run a manifest and compare outputs")
    p.add_argument("manifest")
    p.set_defaults(func=cmd_replay)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args, argv)
    except DOMAIN_ERRORS as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
