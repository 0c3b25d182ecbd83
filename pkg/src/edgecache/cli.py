"""Command-line interface.

Subcommands cover the whole pipeline: topo (build a network), gen
(random instances), dataset (solve + label a corpus), train, eval,
export-lp, and render (grayscale PGM).  A JSON config file can supply
defaults for any flag; explicit flags win.  Every run writes a manifest
recording the arguments, seeds and normalization constants it used.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .baselines import DEFAULT_RGC_EPOCHS
from .cost import DEFAULT_GAMMA
from .encoder import NormConfig, encode, to_grayscale, write_pgm
from .harness import (
    DATASET_RANGES,
    build_dataset,
    evaluate,
    generate_instances,
    load_corpus,
    load_models,
    train_models,
)
from .instance import ParameterRanges, load_instance
from .lpfile import export_milp
from .pel import DEFAULT_DELTA
from .solver import DEFAULT_NODE_BUDGET
from .topology import TopologyConfig, build_topology, load_topology, save_topology


def _write_manifest(out_dir, command: str, params: dict) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    payload = {"tool": "edgecache", "version": __version__, "command": command}
    payload.update(params)
    with open(out / "run_manifest.json", "w") as fh:
        json.dump(payload, fh, indent=2, default=str)
        fh.write("\n")


def _write_sidecar_manifest(out_file, command: str, params: dict) -> None:
    payload = {"tool": "edgecache", "version": __version__, "command": command}
    payload.update(params)
    with open(str(out_file) + ".manifest.json", "w") as fh:
        json.dump(payload, fh, indent=2, default=str)
        fh.write("\n")


def _ranges_from_args(args) -> ParameterRanges:
    base = DATASET_RANGES if getattr(args, "fixed_weights", False) else ParameterRanges()
    overrides = {}
    for name in ("content_size", "ec_space", "bandwidth", "link_capacity", "alpha", "beta"):
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = tuple(value)
    if not overrides:
        return base
    from dataclasses import replace

    return replace(base, **overrides)


def _add_range_flags(p: argparse.ArgumentParser) -> None:
    for name, help_text in (
        ("content_size", "content size range in MB"),
        ("ec_space", "EC cache space range in MB"),
        ("bandwidth", "flow bandwidth range in Mbps"),
        ("link_capacity", "link capacity range in Mbps"),
        ("alpha", "caching weight range"),
        ("beta", "transmission weight range"),
    ):
        p.add_argument(f"--{name.replace('_', '-')}", nargs=2, type=float, default=None,
                       metavar=("LO", "HI"), help=help_text)


def _cmd_topo(args) -> int:
    branching = args.branching[0] if len(args.branching) == 1 else tuple(args.branching)
    config = TopologyConfig(
        branching=branching,
        depth=args.depth,
        mesh_links=args.mesh_links,
        ec_rule=args.ec_rule,
        ec_count=args.ec_count,
        datacenter_hops=args.datacenter_hops,
        seed=args.seed,
    )
    topo = build_topology(config)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_topology(topo, out)
    _write_sidecar_manifest(out, "topo", {
        "branching": args.branching, "depth": args.depth,
        "mesh_links": args.mesh_links, "ec_rule": args.ec_rule,
        "ec_count": args.ec_count, "datacenter_hops": args.datacenter_hops,
        "seed": args.seed,
    })
    print(
        f"wrote {out}: {len(topo.nodes)} nodes, {topo.num_links} links, "
        f"{topo.num_access_routers} ARs, {topo.num_edge_clouds} ECs"
    )
    return 0


def _cmd_gen(args) -> int:
    topo = load_topology(args.topology)
    ranges = _ranges_from_args(args)
    files = generate_instances(topo, args.count, args.flows, args.seed, args.out, ranges=ranges)
    _write_manifest(args.out, "gen", {
        "topology": str(args.topology), "count": args.count, "flows": args.flows,
        "seed": args.seed, "ranges": ranges.__dict__,
    })
    print(f"wrote {len(files)} instances to {args.out}")
    return 0


def _cmd_dataset(args) -> int:
    topo = load_topology(args.topology)
    args.fixed_weights = not args.random_weights
    ranges = _ranges_from_args(args)
    corpus = build_dataset(
        topo,
        n=args.count,
        flows=args.flows,
        seed=args.seed,
        out_dir=args.out,
        ranges=ranges,
        train_fraction=args.train_fraction,
        budget=args.budget,
        require_proof=not args.allow_bounded,
    )
    _write_manifest(args.out, "dataset", {
        "topology": str(args.topology), "count": args.count, "flows": args.flows,
        "seed": args.seed, "train_fraction": args.train_fraction,
        "budget": args.budget, "ranges": ranges.__dict__,
        "norm": {"q_max": corpus.norm.q_max, "r_max": corpus.norm.r_max},
    })
    train_n = len(corpus.of_split("train"))
    test_n = len(corpus.of_split("test"))
    print(
        f"corpus at {args.out}: {train_n} train / {test_n} test samples"
        + (f", {corpus.excluded} excluded (budget)" if corpus.excluded else "")
    )
    return 0


def _cmd_train(args) -> int:
    corpus = load_corpus(args.corpus)
    models, traces = train_models(
        corpus,
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.learning_rate,
        seed=args.seed,
        workers=args.workers,
        out_dir=args.out,
    )
    _write_manifest(args.out, "train", {
        "corpus": str(args.corpus), "epochs": args.epochs,
        "batch_size": args.batch_size, "learning_rate": args.learning_rate,
        "seed": args.seed, "workers": args.workers,
        "norm": {"q_max": corpus.norm.q_max, "r_max": corpus.norm.r_max},
    })
    print(
        f"trained {len(models)} request models; final losses: "
        + ", ".join(f"{t[-1]:.4f}" for t in traces)
    )
    return 0


def _cmd_eval(args) -> int:
    corpus = load_corpus(args.corpus)
    methods = tuple(args.methods.split(","))
    models = None
    if "cnn" in methods:
        if args.models is None:
            print("error: --models is required for the cnn method", file=sys.stderr)
            return 2
        models = load_models(args.models, args.block or corpus.flows)
    report = evaluate(
        corpus,
        models=models,
        methods=methods,
        split=args.split,
        block=args.block,
        rgc_epochs=args.rgc_epochs,
        rgc_seed=args.seed,
        delta=args.delta,
        gamma=args.gamma,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "summary.csv").write_text(report.summary_csv())
    (out / "detail.csv").write_text(report.detail_csv())
    table = report.format_table()
    (out / "table.txt").write_text(table + "\n")
    _write_manifest(args.out, "eval", {
        "corpus": str(args.corpus), "models": str(args.models),
        "methods": list(methods), "split": args.split, "seed": args.seed,
        "rgc_epochs": args.rgc_epochs, "delta": args.delta, "gamma": args.gamma,
        "norm": {"q_max": corpus.norm.q_max, "r_max": corpus.norm.r_max},
    })
    print(table)
    return 0


def _cmd_export_lp(args) -> int:
    inst = load_instance(args.instance)
    text = export_milp(inst, big_m=args.big_m)
    Path(args.out).write_text(text)
    _write_sidecar_manifest(args.out, "export-lp", {
        "instance": str(args.instance), "big_m": args.big_m,
    })
    print(f"wrote {args.out}")
    return 0


def _cmd_render(args) -> int:
    inst = load_instance(args.instance)
    norm = NormConfig(q_max=args.q_max, r_max=args.r_max) if args.q_max else NormConfig.from_ranges()
    img = encode(inst, norm)
    write_pgm(args.out, to_grayscale(img))
    _write_sidecar_manifest(args.out, "render", {
        "instance": str(args.instance),
        "norm": {"q_max": norm.q_max, "r_max": norm.r_max},
    })
    print(f"wrote {args.out} ({img.matrix.shape[0]}x{img.matrix.shape[1]})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="edgecache",
        description="proactive edge caching: optimization, encoding, learning, benchmarks",
    )
    parser.add_argument("--config", default=None, help="JSON file with per-command flag defaults")
    parser.add_argument("--version", action="version", version=f"edgecache {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("topo", help="build and save a network topology")
    p.add_argument("--branching", nargs="+", type=int, default=[2])
    p.add_argument("--depth", type=int, default=3)
    p.add_argument("--mesh-links", type=int, default=0)
    p.add_argument("--ec-rule", choices=["internal", "all", "leaves", "random"], default="internal")
    p.add_argument("--ec-count", type=int, default=None)
    p.add_argument("--datacenter-hops", type=int, default=12)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_topo)

    p = sub.add_parser("gen", help="generate random instances")
    p.add_argument("--topology", required=True)
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--flows", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    _add_range_flags(p)
    p.set_defaults(func=_cmd_gen, fixed_weights=False)

    p = sub.add_parser("dataset", help="generate, solve and label a training corpus")
    p.add_argument("--topology", required=True)
    p.add_argument("--count", type=int, default=250)
    p.add_argument("--flows", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--train-fraction", type=float, default=0.9)
    p.add_argument("--budget", type=int, default=DEFAULT_NODE_BUDGET)
    p.add_argument("--allow-bounded", action="store_true",
                   help="keep budget-limited incumbents instead of excluding them")
    p.add_argument("--random-weights", action="store_true",
                   help="sample alpha/beta per instance instead of fixing them at 0.5")
    p.add_argument("--out", required=True)
    _add_range_flags(p)
    p.set_defaults(func=_cmd_dataset)

    p = sub.add_parser("train", help="train the per-request classifiers")
    p.add_argument("--corpus", required=True)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="score methods on a corpus split")
    p.add_argument("--corpus", required=True)
    p.add_argument("--models", default=None)
    p.add_argument("--methods", default="optimal,cnn,gca,rgc")
    p.add_argument("--split", default="test")
    p.add_argument("--block", type=int, default=None,
                   help="trained input height (enables recursive allocation)")
    p.add_argument("--rgc-epochs", type=int, default=DEFAULT_RGC_EPOCHS)
    p.add_argument("--delta", type=float, default=DEFAULT_DELTA)
    p.add_argument("--gamma", type=float, default=DEFAULT_GAMMA)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("export-lp", help="export one instance as an LP-format MILP")
    p.add_argument("--instance", required=True)
    p.add_argument("--big-m", type=float, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_export_lp)

    p = sub.add_parser("render", help="render an instance as a grayscale PGM")
    p.add_argument("--instance", required=True)
    p.add_argument("--q-max", type=float, default=None)
    p.add_argument("--r-max", type=float, default=0.2)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_render)

    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> list[str]:
    """Pull --config out of argv and fold its values into defaults."""
    if "--config" not in argv:
        return argv
    at = argv.index("--config")
    config_path = argv[at + 1]
    rest = argv[:at] + argv[at + 2 :]
    with open(config_path) as fh:
        config = json.load(fh)
    command = next((tok for tok in rest if not tok.startswith("-")), None)
    section = config.get(command, {}) if command else {}
    for action in parser._subparsers._group_actions:  # noqa: SLF001
        if command in getattr(action, "choices", {}):
            action.choices[command].set_defaults(
                **{k.replace("-", "_"): v for k, v in section.items()}
            )
    return rest


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    argv = _apply_config(parser, argv)
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
