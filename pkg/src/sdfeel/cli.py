"""Command-line entry point: ``python -m sdfeel <subcommand>``."""
from __future__ import annotations

import argparse
import sys

import numpy as np
import yaml

from .data import assign_clusters, load_idx, partition, synth_dataset
from .exceptions import ConfigurationError, SDFEELError
from .harness import describe_topology, load_config, run_experiment
from .theory import BoundInputs, grid_to_csv, sync_grid
from .topology import TOPOLOGY_KINDS, make_graph, parse_edge_list


def _ints(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x]


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sdfeel", description="Semi-decentralized federated edge learning simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the experiments described by a YAML config")
    run.add_argument("config", help="path to the experiment config")
    run.add_argument("--output", help="output directory (overrides the config)")

    topo = sub.add_parser("topology", help="print the mixing matrix and spectral gap")
    topo.add_argument("--kind", choices=TOPOLOGY_KINDS, default="ring")
    topo.add_argument("--servers", type=int, default=6)
    topo.add_argument("--edges", help="explicit edge list such as 0-1,1-2 (kind 'edges')")
    topo.add_argument("--weights", type=_floats, help="comma-separated cluster weights")

    bounds = sub.add_parser("bounds", help="tabulate the synchronous bound over a grid")
    bounds.add_argument("config", nargs="?", help="YAML file with a 'bounds' block of BoundInputs fields")
    bounds.add_argument("--tau1", type=_ints, default=[1, 5, 10, 20])
    bounds.add_argument("--tau2", type=_ints, default=[1, 2, 5])
    bounds.add_argument("--alpha", type=_ints, default=[1, 2, 5])
    bounds.add_argument("--zeta", type=_floats, default=[0.0, 0.33, 0.6, 0.71])
    bounds.add_argument("--eta", type=_floats)
    bounds.add_argument("--output", help="CSV path (stdout if omitted)")

    part = sub.add_parser("partition", help="print per-client label histograms")
    part.add_argument("--scheme", choices=("label_skew", "dirichlet", "iid"), default="label_skew")
    part.add_argument("--clients", type=int, default=50)
    part.add_argument("--servers", type=int, default=10)
    part.add_argument("--classes", type=int, default=10)
    part.add_argument("--per-class", type=int, default=100)
    part.add_argument("--feature-dim", type=int, default=8)
    part.add_argument("--c", type=int, default=2)
    part.add_argument("--beta", type=float, default=0.5)
    part.add_argument("--gamma", type=int, default=0)
    part.add_argument("--seed", type=int, default=0)
    part.add_argument("--images", help="IDX image file (instead of synthetic data)")
    part.add_argument("--labels", help="IDX label file")

    oracle = sub.add_parser("oracle-check", help="compare the event engine with the matrix-form recursion")
    oracle.add_argument("--k", type=int, default=12)
    oracle.add_argument("--tau1", type=int, default=2)
    oracle.add_argument("--tau2", type=int, default=3)
    oracle.add_argument("--alpha", type=int, default=2)
    oracle.add_argument("--servers", type=int, default=3)
    oracle.add_argument("--clients", type=int, default=6)
    oracle.add_argument("--seed", type=int, default=0)
    oracle.add_argument("--tol", type=float, default=1e-9)
    return parser


def _cmd_run(args) -> int:
    result = run_experiment(load_config(args.config), args.output)
    for path in result["traces"]:
        print(path)
    print(result["summary"])
    return 0


def _cmd_topology(args) -> int:
    edges = parse_edge_list(args.edges) if args.edges else None
    print(describe_topology(args.kind, args.servers, edges, args.weights))
    return 0


def _cmd_bounds(args) -> int:
    base = BoundInputs()
    if args.config:
        with open(args.config) as fh:
            block = (yaml.safe_load(fh) or {}).get("bounds", {})
        unknown = sorted(set(block) - set(BoundInputs.__dataclass_fields__))
        if unknown:
            raise ConfigurationError(f"bounds.{unknown[0]}: unknown field")
        base = BoundInputs(**{k: (tuple(v) if k == "weights" else v) for k, v in block.items()})
    rows = sync_grid(base, args.tau1, args.tau2, args.alpha, args.zeta, args.eta)
    text = grid_to_csv(rows, args.output)
    if args.output is None:
        sys.stdout.write(text)
    return 0


def _cmd_partition(args) -> int:
    if args.images:
        ds = load_idx(args.images, args.labels)
    else:
        ds = synth_dataset(args.classes, args.per_class, args.feature_dim, args.seed)
    part = partition(ds, args.scheme, args.clients, args.seed, c=args.c, beta=args.beta)
    cmap = assign_clusters(args.clients, args.servers, args.gamma, args.seed)
    hist = part.label_histogram(ds.labels, ds.num_classes)
    print("client,cluster," + ",".join(f"class{k}" for k in range(ds.num_classes)))
    for i, row in enumerate(hist):
        print(f"{i},{cmap[i]}," + ",".join(str(int(v)) for v in row))
    return 0


def _cmd_oracle(args) -> int:
    from .sync import SyncConfig, matrix_oracle, max_oracle_gap, run_sdfeel

    ds = synth_dataset(4, 30, 5, args.seed)
    part = partition(ds, "label_skew", args.clients, args.seed, c=2)
    part = part.with_clusters(assign_clusters(args.clients, args.servers, 0, args.seed))
    kind = "ring" if args.servers >= 3 else "path"
    graph = make_graph(kind, args.servers, weights=part.m_tilde)
    cfg = SyncConfig(tau1=args.tau1, tau2=args.tau2, alpha=args.alpha, eta=0.05, K=args.k, seed=args.seed,
                     record_models=True)
    gap = max_oracle_gap(run_sdfeel(cfg, graph, part, ds), matrix_oracle(cfg, graph, part, ds))
    ok = bool(np.isfinite(gap) and gap < args.tol)
    print(f"max |difference| = {gap:.3e} ({'ok' if ok else 'MISMATCH'})")
    return 0 if ok else 1


COMMANDS = {
    "run": _cmd_run,
    "topology": _cmd_topology,
    "bounds": _cmd_bounds,
    "partition": _cmd_partition,
    "oracle-check": _cmd_oracle,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except SDFEELError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
