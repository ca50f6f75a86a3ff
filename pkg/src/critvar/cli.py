"""Command-line entry point: ``critvar <command> [flags]``.

Set ``CRITVAR_LOG_LEVEL`` (e.g. ``INFO``) to see progress logs on stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

from . import __version__
from .cdp import CdpMeasurement, measure_cdp, write_measurements
from .config import SWEEPS, ConfigError, ModelConfig, read_config
from .dfg import EnhancedDFG, Vocab, build_dfg
from .slicing import dump_trees, trees_for_instance
from .trace import analyze_liveness, read_trace, write_trace

log = logging.getLogger("critvar")
LOG_ENV = "CRITVAR_LOG_LEVEL"


class CorpusEntry:
    __slots__ = ("name", "graph")

    def __init__(self, name, graph):
        self.name, self.graph = name, graph


def load_corpus(path) -> list:
    """Graphs ``*.graph.json`` in a directory (sorted by name), or one graph file."""
    path = Path(path)
    files = sorted(path.glob("*.graph.json")) if path.is_dir() else [path]
    if not files:
        raise FileNotFoundError(f"no *.graph.json files under {path}")
    out = []
    for f in files:
        g = EnhancedDFG.load(f)
        out.append(CorpusEntry(g.program or f.name.split(".")[0], g))
    return out


def _config(args) -> ModelConfig:
    base = ModelConfig()
    cfg = read_config(args.config, base) if args.config else base
    over = {}
    if getattr(args, "model", None):
        over["model"] = args.model
    if getattr(args, "seed", None) is not None:
        over["seed"] = args.seed
    if getattr(args, "epochs", None) is not None:
        over["epochs"] = args.epochs
    return cfg.with_(**over)


# ---------------------------------------------------------------------------
# commands

def cmd_gen_corpus(args):
    from .synth import build_program_data, generate
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    index = []
    for prog in generate(args.seed, args.programs, args.vars):
        data = build_program_data(prog, input_id=args.seed, mode=args.cdp_diff)
        (out / f"{prog.name}.program.json").write_text(prog.dumps())
        write_trace(data.trace, out / f"{prog.name}.trace")
        data.graph.program = prog.name
        data.graph.save(out / f"{prog.name}.graph.json")
        write_measurements(data.measurements, out / f"{prog.name}.cdp.csv")
        labels = list(data.graph.labels.values())
        index.append({"program": prog.name, "instances": len(labels), "critical": sum(labels),
                      "nodes": len(data.graph.nodes), "edges": len(data.graph.edges)})
        print(f"{prog.name}: {len(labels)} instances, {sum(labels)} critical, "
              f"{len(data.graph.nodes)} nodes")
    with open(out / "corpus.json", "w") as fh:
        json.dump({"seed": args.seed, "programs": index}, fh, indent=2)
    return 0


def cmd_build_graph(args):
    trace = read_trace(args.trace)
    g = build_dfg(trace, analyze_liveness(trace, args.frame_size))
    g.program = trace.program
    g.save(args.out)
    print(f"{len(g.nodes)} nodes, {len(g.edges)} edges, {len(g.instances)} instances")
    return 0


def cmd_measure_cdp(args):
    dry = read_trace(args.dry)
    flipped = [read_trace(f) for f in args.flipped]
    n = measure_cdp(dry, flipped, args.mode)
    print(n)
    if args.out:
        write_measurements([CdpMeasurement(args.instance, n, len(flipped))], args.out, args.theta)
    return 0


def cmd_slice(args):
    g = EnhancedDFG.load(args.graph)
    insts = [args.instance] if args.instance is not None else sorted(g.instances)
    sets = [trees_for_instance(g, i, args.k, args.follow_c) for i in insts if g.instances.get(i)]
    text = dump_trees(sets, g, Vocab.from_graphs([g]))
    if args.out:
        Path(args.out).write_text(text)
    else:
        print(text)
    return 0


def cmd_train(args):
    from .pipeline import SweepRow, aggregate, assemble, folds, train, write_manifest, write_results
    cfg = _config(args)
    sources = load_corpus(args.corpus)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    corpus = assemble(sources, cfg.model, cfg.k, cfg.use_mcd, cfg.slice_follow_c)
    results = []
    for fold in folds(corpus):
        est, res = train(fold, cfg)
        results.append(res)
    report = aggregate(results)
    row = SweepRow(cfg.model, "default", report, time.perf_counter() - t0, results)
    write_results([row], out / "results.csv")
    write_manifest(out / "manifest.json", cfg, command="train", corpus=str(args.corpus),
                   programs=corpus.counts, folds=[r.to_dict() for r in results],
                   metrics=report.to_dict())
    print(f"{cfg.model}: accuracy={report.accuracy:.4f} precision={report.precision:.4f} "
          f"recall={report.recall:.4f} f1={report.f1:.4f}")
    return 0


def cmd_sweep(args):
    from .pipeline import sweep, write_manifest, write_results
    cfg = _config(args)
    sources = load_corpus(args.corpus)
    rows = sweep(sources, cfg, args.axis)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_results(rows, out / f"sweep_{args.axis}.csv")
    write_manifest(out / f"sweep_{args.axis}.manifest.json", cfg, command="sweep", axis=args.axis,
                   corpus=str(args.corpus),
                   settings={r.setting: r.report.to_dict() for r in rows})
    for r in rows:
        print(f"{r.model} {r.setting}: accuracy={r.report.accuracy:.4f} f1={r.report.f1:.4f}")
    return 0


def cmd_paths(args):
    from .models.gnn import count_propagation_paths
    g = EnhancedDFG.load(args.graph)
    counts = count_propagation_paths(g, args.target, args.layers)
    shown = counts
    if args.sources:
        wanted = [int(s) for s in args.sources.split(",") if s.strip()]
        shown = {s: counts.get(s, 0) for s in wanted}
    parts = [f"{s}:{c}" for s, c in shown.items()]
    parts.append(f"total:{sum(counts.values())}")
    print(" ".join(parts))
    return 0


def cmd_report(args):
    from .pipeline import read_results
    rows = []
    for path in args.results:
        rows += read_results(path)
    if not rows:
        print("no results")
        return 0
    cols = ("model", "setting", "accuracy", "precision", "recall", "f1", "seconds")
    width = {c: max(len(c), *(len(r[c]) for r in rows)) for c in cols}
    print("  ".join(c.ljust(width[c]) for c in cols))
    for r in rows:
        print("  ".join(r[c].ljust(width[c]) for c in cols))
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="critvar", description="Critical variable identification pipeline.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen-corpus", help="generate synthetic programs, traces and graphs")
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--programs", type=int, default=6)
    s.add_argument("--vars", type=int, default=31)
    s.add_argument("--cdp-diff", choices=("symmetric", "oneway"), default="symmetric")
    s.set_defaults(func=cmd_gen_corpus)

    s = sub.add_parser("build-graph", help="trace -> enhanced data-flow graph JSON")
    s.add_argument("--trace", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--frame-size", type=lambda x: int(x, 0), default=0x1000)
    s.set_defaults(func=cmd_build_graph)

    s = sub.add_parser("measure-cdp", help="count differing basic blocks between dry and flipped runs")
    s.add_argument("--dry", required=True)
    s.add_argument("--flipped", nargs="+", required=True)
    s.add_argument("--cdp-diff", "--mode", dest="mode", choices=("symmetric", "oneway"), default="symmetric")
    s.add_argument("--out")
    s.add_argument("--instance", type=int, default=0)
    s.add_argument("--theta", type=int, default=0)
    s.set_defaults(func=cmd_measure_cdp)

    s = sub.add_parser("slice", help="build data-flow trees for labeled instances")
    s.add_argument("--graph", required=True)
    s.add_argument("--k", type=int, default=15)
    s.add_argument("--out")
    s.add_argument("--instance", type=int)
    s.add_argument("--no-follow-c", dest="follow_c", action="store_false",
                   help="do not walk C edges backward during define-flow slicing")
    s.set_defaults(func=cmd_slice)

    for name, func, help_ in (("train", cmd_train, "leave-one-program-out training and evaluation"),
                              ("sweep", cmd_sweep, "re-run evaluation over one configuration axis")):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--corpus", required=True)
        s.add_argument("--model", choices=("treelstm", "brgcn", "convgnn", "mlp"))
        s.add_argument("--config")
        s.add_argument("--out", default=".")
        s.add_argument("--seed", type=int)
        s.add_argument("--epochs", type=int)
        if name == "sweep":
            s.add_argument("--axis", choices=tuple(SWEEPS), required=True)
        s.set_defaults(func=func)

    s = sub.add_parser("paths", help="count propagation walks into a target node")
    s.add_argument("--graph", required=True)
    s.add_argument("--target", type=int, required=True)
    s.add_argument("--layers", type=int, required=True)
    s.add_argument("--sources", help="comma-separated node ids to show (default: all non-zero)")
    s.set_defaults(func=cmd_paths)

    s = sub.add_parser("report", help="print metrics tables from results CSVs")
    s.add_argument("--results", nargs="+", required=True)
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    level = os.environ.get(LOG_ENV, "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError, KeyError, ConfigError) as exc:
        print(f"critvar {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
