"""Command line: run, list-specs, validate, oracle."""

from __future__ import annotations

import argparse
import sys

from .harness import BUILTIN_SPECS, SpecError, load_spec, run_experiment
from .oracles import (
    coupon_expected_draws,
    gossip_advantage,
    gossip_projection,
    markov_cover_expectation,
    predicted_hier_messages,
)

NAMED_GRAPHS = {
    "path2": [[1], [0]],
    "cycle4": [[1, 3], [0, 2], [1, 3], [0, 2]],
    "clique4": [[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]],
    "grid4": [[1, 2], [0, 3], [0, 3], [1, 2]],
}


def _graph(arg: str) -> list[list[int]]:
    """A named graph or an edge list such as ``0-1,1-2,2-0``."""
    if arg in NAMED_GRAPHS:
        return NAMED_GRAPHS[arg]
    edges = [tuple(int(x) for x in e.split("-")) for e in arg.split(",") if e]
    n = max(max(e) for e in edges) + 1
    adj: list[set[int]] = [set() for _ in range(n)]
    for a, b in edges:
        adj[a].add(b)
        adj[b].add(a)
    return [sorted(s) for s in adj]


def _oracle(name: str, args: list[str]) -> str:
    if name == "coupon":
        return repr(coupon_expected_draws(int(args[0])))
    if name == "cover":
        start = int(args[1]) if len(args) > 1 else 0
        return repr(markov_cover_expectation(_graph(args[0]), start))
    if name == "hier-messages":
        return str(predicted_hier_messages(int(args[0]), int(args[1])))
    if name == "gossip":
        exponent = float(args[1]) if len(args) > 1 else 5.4
        n = int(args[0])
        return f"{gossip_projection(n, exponent)!r} advantage={gossip_advantage(n, exponent)!r}"
    raise SpecError(f"unknown oracle {name!r}; choose from coupon, cover, hier-messages, gossip")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ezag", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a built-in spec or a spec file")
    run.add_argument("spec", help="built-in spec name or path to an INI spec file")
    run.add_argument("--trials", type=int, help="override trials per configuration")
    run.add_argument("--workers", type=int, default=1, help="worker processes (default 1)")
    run.add_argument("--full", action="store_true", help="include the large network sizes")
    run.add_argument("--output", help="output directory (default $EZAG_OUTPUT_DIR/<spec name>)")

    sub.add_parser("list-specs", help="print the built-in specs")

    val = sub.add_parser("validate", help="check a spec without running it")
    val.add_argument("spec")

    orc = sub.add_parser("oracle", help="evaluate an analytic or brute-force oracle")
    orc.add_argument("name", choices=["coupon", "cover", "hier-messages", "gossip"])
    orc.add_argument("args", nargs="*")
    return p


def cli_main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "list-specs":
            for name, spec in BUILTIN_SPECS.items():
                sizes = ",".join(map(str, spec.n_values))
                print(f"{name:12s} {spec.kind:11s} N={sizes:24s} {spec.description}")
            return 0
        if args.command == "validate":
            spec = load_spec(args.spec)
            spec.validate()
            print(f"{spec.name}: ok")
            return 0
        if args.command == "oracle":
            print(_oracle(args.name, args.args))
            return 0
        spec = load_spec(args.spec)
        out = run_experiment(spec, args.output, full=args.full, workers=args.workers, trials=args.trials)
        print(f"wrote {out.trials_csv}, {out.summary_csv}, {out.manifest}")
        return 0
    except (SpecError, ValueError, IndexError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
