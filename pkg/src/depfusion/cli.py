"""Command-line entry point: ``depfusion {fuse,simulate,bench}``.

All outputs are written under ``--out-dir``; a ``manifest.json`` records the
options, seed and input digests. Nothing time-dependent is written, so the
same command on the same inputs reproduces every file byte for byte.
"""
from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import io, synth
from .bench import FIGURES, BenchConfig, run_sweep, sweep_table
from .core import FusionError, NumericalError, SequencePartition
from .iid import fuse_iid
from .networked import MrfConfig, fuse_networked
from .optim import MomentFitConfig
from .sequential import fuse_sequential

EXIT_INPUT = 2
EXIT_NUMERIC = 3


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _delta_arg(text: str):
    if text in ("auto", "file", "M"):
        return text
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"--delta must be auto, file, M or a positive number, got {text!r}") from None
    if not value > 0:
        raise argparse.ArgumentTypeError(f"--delta must be positive, got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="depfusion", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    fuse = sub.add_parser("fuse", help="fuse learner responses into labels")
    fuse.add_argument("mode", choices=["iid", "seq", "net"])
    fuse.add_argument("responses", help="CSV: one row per item, one column per learner, 0 = missing")
    fuse.add_argument("--partition", help="segment lengths, one per line (seq mode)")
    fuse.add_argument("--graph", help="edge list 'n n2 [delta]', 1-based (net mode)")
    fuse.add_argument("--classes", type=int, help="number of classes K (default: largest response)")
    fuse.add_argument("--init", choices=["mm", "mv"], default="mm")
    fuse.add_argument("--refine", choices=["none", "em"], default="em")
    fuse.add_argument("--delta", type=_delta_arg, default="M",
                      help="auto (M_n/2 per item), file (per-edge column), M (number of learners) or a number")
    fuse.add_argument("--tmax", type=int, default=20, help="ICM sweep cap")
    fuse.add_argument("--em-iters", type=int, default=None, help="EM iteration cap (100 iid/seq, 50 net)")
    fuse.add_argument("--tol", type=float, default=1e-6)
    fuse.add_argument("--seed", type=int, default=0, help="seed for moment-fit restarts")
    fuse.add_argument("--out-dir", default=".")

    sim = sub.add_parser("simulate", help="write a synthetic dataset")
    sim.add_argument("world", choices=["seq", "net"])
    sim.add_argument("--classes", type=int, default=4)
    sim.add_argument("--learners", type=int, default=10)
    sim.add_argument("--segments", type=int, default=25, help="number of sequences (seq)")
    sim.add_argument("--seg-len", type=int, default=40, help="items per sequence (seq)")
    sim.add_argument("--items", type=int, default=1000, help="number of nodes (net)")
    sim.add_argument("--mean-degree", type=float, default=5.0, help="target average degree (net)")
    sim.add_argument("--missing-rate", type=float, default=0.0)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--out-dir", default=".")

    bench = sub.add_parser("bench", help="run a synthetic Monte Carlo sweep")
    bench.add_argument("figure", choices=list(FIGURES))
    bench.add_argument("--sizes", type=_int_list, default=None,
                       help="sweep values (N for seq-N/net-N, M for seq-M)")
    bench.add_argument("--seeds", type=int, default=10, help="number of seeds per point")
    bench.add_argument("--seed", type=int, default=0, help="first seed")
    bench.add_argument("--classes", type=int, default=4)
    bench.add_argument("--learners", type=int, default=10)
    bench.add_argument("--items", type=int, default=1000, help="N for the seq-M sweep")
    bench.add_argument("--seg-len", type=int, default=40)
    bench.add_argument("--mean-degree", type=float, default=5.0)
    bench.add_argument("--missing-rate", type=float, default=0.0)
    bench.add_argument("--em-iters", type=int, default=100)
    bench.add_argument("--tol", type=float, default=1e-6)
    bench.add_argument("--out-dir", default=".")
    return parser


def _options(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("out_dir", "func")}


def _manifest(out: Path, args, inputs: dict, outputs: list[str]) -> None:
    io.dump_json(out / "manifest.json", {
        "format_version": io.FORMAT_VERSION,
        "command": args.command,
        "options": _options(args),
        "seed": args.seed,
        "inputs": {role: {"file": Path(p).name, "sha256": io.file_digest(p)} for role, p in sorted(inputs.items())},
        "outputs": sorted(outputs),
    })


def cmd_fuse(args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    responses = io.read_responses(args.responses, args.classes)
    inputs = {"responses": args.responses}
    mm_config = MomentFitConfig(seed=args.seed)
    if args.mode == "iid":
        result = fuse_iid(responses, init=args.init, refine=args.refine, config=mm_config,
                          max_iters=args.em_iters or 100, tol=args.tol)
    elif args.mode == "seq":
        if args.partition:
            partition = io.read_partition(args.partition)
            inputs["partition"] = args.partition
        else:
            partition = SequencePartition.single(responses.n_items)
        result = fuse_sequential(responses, partition, init=args.init, refine=args.refine, config=mm_config,
                                 max_iters=args.em_iters or 100, tol=args.tol)
    else:
        if not args.graph:
            raise FusionError("net mode needs --graph")
        inputs["graph"] = args.graph
        m = responses.m_learners
        if args.delta == "file":
            graph, delta = io.read_graph(args.graph, responses.n_items, default_delta=float(m)), "edge"
        else:
            graph = io.read_graph(args.graph, responses.n_items)
            delta = float(m) if args.delta == "M" else args.delta
        config = MrfConfig(delta=delta, t_max=args.tmax, em_max_iters=args.em_iters or 50, em_tol=args.tol)
        result = fuse_networked(responses, graph, init=args.init, config=config, mm_config=mm_config)

    io.write_labels(out / "labels.txt", result.labels)
    io.write_matrix_csv(out / "posteriors.csv", result.posteriors)
    params = {
        "format_version": io.FORMAT_VERSION,
        "confusions": io.matrix_to_json(result.confusions),
        "prior": io.matrix_to_json(result.prior),
    }
    if result.transition is not None:
        params["transition"] = io.matrix_to_json(result.transition)
    io.dump_json(out / "params.json", params)
    io.dump_json(out / "diagnostics.json", {
        **result.diagnostics,
        "loglik_trace": [float(v) for v in result.loglik_trace],
        "iterations": int(result.iterations),
        "warnings": list(result.warnings),
    })
    _manifest(out, args, inputs, ["labels.txt", "posteriors.csv", "params.json", "diagnostics.json"])
    return 0


def cmd_simulate(args) -> int:
    if args.classes < 2 or args.learners < 1:
        raise FusionError("need --classes >= 2 and --learners >= 1")
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    k, m = args.classes, args.learners
    params = {"format_version": io.FORMAT_VERSION}
    files = ["responses.csv", "truth.txt", "params.json"]
    if args.world == "seq":
        if args.segments < 1 or args.seg_len < 1:
            raise FusionError("need --segments >= 1 and --seg-len >= 1")
        while True:
            trans = synth.gen_transition(k, rng)
            if synth.is_irreducible(trans):
                break
        gam = synth.gen_confusions(m, k, rng)
        labels, partition = synth.gen_markov_labels(trans, [args.seg_len] * args.segments, rng)
        io.write_partition(out / "partition.txt", partition)
        params["transition"] = io.matrix_to_json(trans)
        params["stationary"] = io.matrix_to_json(synth.stationary_distribution(trans))
        files.append("partition.txt")
    else:
        gam = synth.gen_confusions(m, k, rng)
        try:
            p_in, p_out = synth.sbm_probabilities(args.items, k, args.mean_degree)
        except ValueError as exc:
            raise FusionError(str(exc)) from None
        graph, labels = synth.gen_sbm_graph(args.items, k, p_in, p_out, rng)
        io.write_graph(out / "graph.txt", graph, with_delta=False)
        params["p_in"], params["p_out"] = p_in, p_out
        params["mean_degree"] = graph.mean_degree()
        files.append("graph.txt")
    responses = synth.gen_responses(labels, gam, args.missing_rate, rng)
    params["confusions"] = io.matrix_to_json(gam)
    io.write_responses(out / "responses.csv", responses)
    io.write_labels(out / "truth.txt", labels)
    io.dump_json(out / "params.json", params)
    _manifest(out, args, {}, files)
    return 0


def cmd_bench(args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sizes = args.sizes or ([3, 6, 10] if args.figure == "seq-M" else [500, 2000, 8000])
    cfg = BenchConfig(k=args.classes, m=args.learners, n=args.items, seg_len=args.seg_len,
                      mean_degree=args.mean_degree, missing_rate=args.missing_rate,
                      em_iters=args.em_iters, tol=args.tol)
    seeds = list(range(args.seed, args.seed + args.seeds))
    result = run_sweep(args.figure, sizes, seeds, cfg)
    io.dump_json(out / "bench.json", result)
    rows = sweep_table(result)
    header = [result["axis"], "method", "metric", "median", "std"]
    with open(out / "bench.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows([[("" if v is None else repr(v) if isinstance(v, float) else v) for v in r] for r in rows])
    for r in rows:
        if r[2] == "fscore":
            print(f"{r[0]:>6} {r[1]:<7} F={r[3]:.4f} (sd {r[4]:.4f})")
    _manifest(out, args, {}, ["bench.json", "bench.csv"])
    return 0


COMMANDS = {"fuse": cmd_fuse, "simulate": cmd_simulate, "bench": cmd_bench}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except NumericalError as exc:
        print(f"depfusion: numerical failure: {exc}", file=sys.stderr)
        out = Path(getattr(args, "out_dir", "."))
        out.mkdir(parents=True, exist_ok=True)
        io.dump_json(out / "diagnostics.json", {"error": str(exc), "options": _options(args)})
        return EXIT_NUMERIC
    except (FusionError, ValueError, OSError) as exc:
        print(f"depfusion: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
