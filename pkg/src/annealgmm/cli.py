"""Command-line interface: ``annealgmm {gen,anneal,tc,extract,graph,overlap}``.

Every command that writes files also writes ``<output stem>.manifest.json``
with the resolved configuration, seed, paths, version and wall time.
``ANNEALGMM_NUM_THREADS`` caps the BLAS/OpenMP thread pools.
"""

import os

_threads = os.environ.get("ANNEALGMM_NUM_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                 "NUMBA_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

import argparse  # noqa: E402
import csv  # noqa: E402
import json  # noqa: E402
import logging  # noqa: E402
import sys  # noqa: E402
import time  # noqa: E402
from dataclasses import asdict, dataclass, field  # noqa: E402
from pathlib import Path  # noqa: E402

import numpy as np  # noqa: E402

from . import __version__, datagen, metrics, stability, transitions  # noqa: E402
from .annealing import (AnnealConfig, AnnealTrace, dumps_exact, freeze_variances,  # noqa: E402
                        hard_anneal, soft_anneal)
from .core_em import Dataset  # noqa: E402
from .graph import minimum_spanning_tree, principal_graph_anneal  # noqa: E402

log = logging.getLogger("annealgmm")


class CLIError(Exception):
    pass


@dataclass
class RunManifest:
    command: str
    config: dict
    seed: object
    inputs: dict
    outputs: dict
    version: str = __version__
    duration_s: float = 0.0
    extra: dict = field(default_factory=dict)

    def write(self, path):
        _atomic_write(path, dumps_exact(asdict(self)) + "\n")


def _atomic_write(path, text):
    path = Path(path)
    tmp = path.with_name(path.name + ".part")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _manifest_path(out):
    out = Path(out)
    return out.with_name(out.stem + ".manifest.json")


# ------------------------------------------------------------------- I/O

def write_dataset_csv(ds: Dataset, path):
    cols = [f"x{d}" for d in range(ds.dim)]
    lines = [",".join(cols + (["label"] if ds.labels is not None else []))]
    for i in range(ds.n):
        row = [format(v, ".17g") for v in ds.points[i]]
        if ds.labels is not None:
            row.append(str(int(ds.labels[i])))
        lines.append(",".join(row))
    _atomic_write(path, "\n".join(lines) + "\n")


def read_dataset_csv(path) -> Dataset:
    path = Path(path)
    if not path.is_file():
        raise CLIError(f"data file not found: {path}")
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise CLIError(f"empty data file: {path}")
    header, body = rows[0], [r for r in rows[1:] if r]
    try:
        [float(h) for h in header]
        body, header = rows, [f"x{d}" for d in range(len(rows[0]))]
    except ValueError:
        pass
    try:
        values = np.array(body, dtype=float)
    except ValueError as exc:
        raise CLIError(f"non-numeric entry in {path}: {exc}") from exc
    if values.ndim != 2 or values.shape[0] == 0:
        raise CLIError(f"no data rows in {path}")
    if header[-1].strip().lower() == "label":
        labels = values[:, -1].astype(int)
        return Dataset(values[:, :-1], labels, int(labels.max()) + 1)
    return Dataset(values)


def read_label_column(path, column=None) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise CLIError(f"label file not found: {path}")
    with open(path, encoding="utf-8", newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise CLIError(f"empty label file: {path}")
    header = rows[0]
    try:
        float(header[-1])
        idx, body = (-1 if column is None else int(column)), rows
    except ValueError:
        body = rows[1:]
        if column is None:
            idx = header.index("label") if "label" in header else len(header) - 1
        elif column in header:
            idx = header.index(column)
        else:
            raise CLIError(f"column {column!r} not in {path}")
    try:
        return np.array([float(r[idx]) for r in body]).astype(int)
    except (ValueError, IndexError) as exc:
        raise CLIError(f"bad label column in {path}: {exc}") from exc


# -------------------------------------------------------------- commands

def cmd_gen(args):
    if args.preset not in datagen.PRESETS:
        raise CLIError(f"unknown preset {args.preset!r}; valid presets: "
                       + ", ".join(datagen.PRESETS))
    ds = datagen.preset(args.preset, seed=args.seed, contrast=args.contrast)
    out = Path(args.out)
    truth = out.with_name(out.stem + ".truth.json")
    write_dataset_csv(ds, out)
    _atomic_write(truth, dumps_exact({"preset": args.preset, "seed": args.seed, "q": ds.q,
                                      **ds.info}) + "\n")
    return {"data": str(out), "truth": str(truth)}, {}, {}


def _anneal_config(args) -> AnnealConfig:
    t_start = args.t_start if args.t_start == "auto" else float(args.t_start)
    cfg = AnnealConfig(mode=args.mode, K=args.k, t_start=t_start, t_end=args.t_end,
                       cool_factor=args.cool_factor, inner_max_iter=args.inner_max_iter,
                       inner_tol=args.inner_tol, lambda_sigma=args.lambda_sigma,
                       jitter=args.jitter, seed=args.seed)
    cfg.validate()
    return cfg


def cmd_anneal(args):
    ds = read_dataset_csv(args.data)
    cfg = _anneal_config(args)
    run = hard_anneal if cfg.mode == "hard" else soft_anneal
    trace = run(ds, cfg)
    trace.to_jsonl(args.trace)
    extra = {"t_c": trace.t_c, "t_start_resolved": trace[0].sigma2,
             "t_end_resolved": trace[-1].sigma2, "n_steps": len(trace)}
    return {"trace": args.trace}, asdict(cfg), extra


def cmd_tc(args):
    ds = read_dataset_csv(args.data)
    if args.mode == "hard":
        report = stability.tc_hard(ds)
    elif args.mode == "soft":
        report = stability.tc_soft(ds, args.k, args.lambda_sigma)
    else:
        if args.adjacency:
            adj = np.loadtxt(args.adjacency, delimiter=",", ndmin=2)
        else:
            adj = default_graph_adjacency(ds, args.k)
        report = stability.tc_graph(ds, adj, args.lambda_mu)
    print(dumps_exact(report.to_dict()))
    return {}, {}, {}


def default_graph_adjacency(ds, K):
    """MST of K points spread along the first principal axis (a chain)."""
    C = stability.data_covariance(ds)
    _, vecs = np.linalg.eigh(C)
    pts = np.outer(np.linspace(-1.0, 1.0, K), vecs[:, -1])
    return minimum_spanning_tree(pts)


def extract_summary(trace: AnnealTrace, ds=None):
    out = {"mode": trace.mode}
    if len(trace) >= 2:
        out["hierarchy"] = transitions.build_hierarchy(trace).to_dict()
        out["events"] = [e.to_dict() for e in transitions.classify_events(trace)]
    if trace.mode == "soft":
        out["clusters"] = [c.to_dict() for c in transitions.extract_clusters_soft(trace)]
    elif ds is not None and len(trace) >= 2:
        out["clusters"] = freeze_variances(ds, trace).to_dict()["clusters"]
    return out


def cmd_extract(args):
    path = Path(args.trace)
    if not path.is_file():
        raise CLIError(f"trace file not found: {path}")
    trace = AnnealTrace.from_jsonl(path, mode=args.mode)
    if len(trace) == 0:
        raise CLIError(f"trace {path} has no steps")
    ds = read_dataset_csv(args.data) if args.data else None
    summary = extract_summary(trace, ds)
    _atomic_write(args.out, dumps_exact(summary) + "\n")
    outputs = {"summary": args.out}
    if args.events and "events" in summary:
        transitions.events_to_csv(transitions.classify_events(trace), args.events)
        outputs["events"] = args.events
    return outputs, {"mode": trace.mode}, {}


def cmd_graph(args):
    ds = read_dataset_csv(args.data)
    cfg = AnnealConfig(mode="hard", K=args.k, t_start=args.t_start if args.t_start == "auto"
                       else float(args.t_start), t_end=args.t_end,
                       cool_factor=args.cool_factor, seed=args.seed)
    graph, trace = principal_graph_anneal(ds, args.k, args.lambda_mu, cfg)
    graph.to_json(args.out)
    outputs = {"graph": args.out}
    if args.edges_csv:
        graph.edges_to_csv(args.edges_csv)
        outputs["edges_csv"] = args.edges_csv
    if args.trace:
        trace.to_jsonl(args.trace)
        outputs["trace"] = args.trace
    return outputs, {**asdict(cfg), "lambda_mu": args.lambda_mu}, {"t_c": trace.t_c}


def cmd_overlap(args):
    pred = read_label_column(args.pred, args.pred_column)
    truth = read_label_column(args.truth, args.truth_column)
    if pred.shape != truth.shape:
        raise CLIError(f"label columns differ in length ({pred.size} vs {truth.size})")
    q = args.q if args.q else int(truth.max()) + 1
    res = metrics.overlap(pred, truth, q)
    if not res.applicable:
        raise CLIError(f"overlap undefined: {np.unique(pred).size} estimated labels > q = {q}")
    print(format(res.q_value, ".17g"))
    return {}, {}, {}


# ---------------------------------------------------------------- parser

def _add_schedule(p):
    p.add_argument("--t-start", default="auto", help='starting sigma^2 or "auto" (1.5 T_c)')
    p.add_argument("--t-end", type=float, default=None, help="final sigma^2 (default 1e-3 T_c)")
    p.add_argument("--cool-factor", type=float, default=0.99)
    p.add_argument("--seed", type=int, default=0)


def build_parser():
    parser = argparse.ArgumentParser(prog="annealgmm", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="write a preset dataset as CSV plus ground truth JSON")
    p.add_argument("--preset", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--contrast", type=float, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen, out_key="out")

    p = sub.add_parser("anneal", help="run hard or soft annealing and write a JSONL trace")
    p.add_argument("--mode", choices=("hard", "soft"), default="hard")
    p.add_argument("--data", required=True)
    p.add_argument("--k", type=int, default=25)
    p.add_argument("--lambda-sigma", type=float, default=2.0)
    p.add_argument("--inner-max-iter", type=int, default=500)
    p.add_argument("--inner-tol", type=float, default=1e-8)
    p.add_argument("--jitter", type=float, default=1e-4)
    p.add_argument("--trace", required=True)
    _add_schedule(p)
    p.set_defaults(func=cmd_anneal, out_key="trace")

    p = sub.add_parser("tc", help="print the critical temperature as JSON")
    p.add_argument("--mode", choices=("hard", "soft", "graph"), default="hard")
    p.add_argument("--data", required=True)
    p.add_argument("--k", type=int, default=25)
    p.add_argument("--lambda-sigma", type=float, default=2.0)
    p.add_argument("--lambda-mu", type=float, default=0.0)
    p.add_argument("--adjacency", default=None, help="K x K adjacency CSV (graph mode)")
    p.set_defaults(func=cmd_tc, out_key=None)

    p = sub.add_parser("extract", help="hierarchy, events and frozen clusters from a trace")
    p.add_argument("--trace", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--data", default=None, help="dataset CSV (hard traces: refit variances)")
    p.add_argument("--mode", choices=("hard", "soft"), default=None)
    p.add_argument("--events", default=None, help="optional events CSV")
    p.set_defaults(func=cmd_extract, out_key="out")

    p = sub.add_parser("graph", help="learn a multi-scale principal graph")
    p.add_argument("--data", required=True)
    p.add_argument("--k", type=int, default=100)
    p.add_argument("--lambda-mu", type=float, default=300.0)
    p.add_argument("--out", required=True)
    p.add_argument("--edges-csv", default=None)
    p.add_argument("--trace", default=None)
    _add_schedule(p)
    p.set_defaults(func=cmd_graph, out_key="out")

    p = sub.add_parser("overlap", help="print the overlap Q between two label columns")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--pred-column", default=None)
    p.add_argument("--truth-column", default=None)
    p.add_argument("--q", type=int, default=None)
    p.set_defaults(func=cmd_overlap, out_key=None)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    start = time.perf_counter()
    try:
        outputs, config, extra = args.func(args)
    except (CLIError, ValueError, OSError, ArithmeticError, RuntimeError) as exc:
        print(f"annealgmm {args.command}: error: {exc}", file=sys.stderr)
        return 1
    if args.out_key:
        inputs = {k: getattr(args, k) for k in ("data", "trace", "pred", "truth")
                  if getattr(args, k, None) and k != args.out_key}
        manifest = RunManifest(
            command=" ".join(["annealgmm"] + list(sys.argv[1:] if argv is None else argv)),
            config=config or {k: v for k, v in vars(args).items()
                              if k not in ("func", "out_key")},
            seed=getattr(args, "seed", None), inputs=inputs, outputs=outputs,
            duration_s=time.perf_counter() - start, extra=extra)
        manifest.write(_manifest_path(getattr(args, args.out_key)))
    return 0


if __name__ == "__main__":
    sys.exit(main())
