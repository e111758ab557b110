# src/mpca_retrieval/cli/app.py
# Single entry for the file-based workflow:
#   gen -> fit -> project -> hash-fit -> encode -> index -> query / eval
# plus pipeline / sweep / runs. Exit codes: 0 ok, 1 usage, 2 format/numeric/other failure.
from __future__ import annotations

import argparse
import logging
import sys
import time
from fractions import Fraction
from typing import Any, Callable, List, Optional, Sequence

import numpy as np

from mpca_retrieval.config import Settings, load_settings
from mpca_retrieval.errors import ArgumentError, MpcaRetrievalError, ShapeError
from mpca_retrieval.hashing.lsh import BinaryCode, HashModel, encode_batch, fit_hash
from mpca_retrieval.hashing.rng import MASK64
from mpca_retrieval.logging_setup import setup_logging
from mpca_retrieval.ml import mpca
from mpca_retrieval.ml.eval import (PipelineConfig, comparison_kv, compare_methods, pca_target_ccr,
                                    render_kv, run_pipeline, sweep)
from mpca_retrieval.ml.mpca import MpcaModel
from mpca_retrieval.ml.pca_baseline import PcaModel, fit_pca, project_pca
from mpca_retrieval.ml.tensor_ops import vectorize_batch
from mpca_retrieval.retrieval.index import build_index_arrays, query
from mpca_retrieval.retrieval.metrics import evaluate_map
from mpca_retrieval.storage import run_store
from mpca_retrieval.storage.formats import (FeatureDataset, atomic_write, read_features, read_index,
                                            read_model, write_features, write_index, write_model)
from mpca_retrieval.utils.synthetic import gen_synthetic

logger = logging.getLogger("mpca_retrieval.cli")

EXIT_OK, EXIT_USAGE, EXIT_FAILURE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -------------------------- argument types --------------------------

def _fraction(raw: str) -> float:
    try:
        return float(Fraction(raw.strip()))
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"not a number or fraction: {raw!r}")


def _int_list(raw: str) -> List[int]:
    try:
        return [int(p) for p in raw.split(",") if p.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers: {raw!r}")


def _dims(raw: str) -> tuple:
    parts = _int_list(raw)
    if len(parts) != 3 or min(parts) < 1:
        raise argparse.ArgumentTypeError(f"expected d1,d2,d3 with positive entries: {raw!r}")
    return tuple(parts)


def _fraction_list(raw: str) -> List[float]:
    return [_fraction(p) for p in raw.split(",") if p.strip()]


def _positive(raw: str) -> int:
    try:
        v = int(raw)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {raw!r}")
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1: {raw!r}")
    return v


def _u64(raw: str) -> int:
    try:
        v = int(raw)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {raw!r}")
    if not 0 <= v <= MASK64:
        raise argparse.ArgumentTypeError(f"must be an unsigned 64-bit integer: {raw!r}")
    return v


def _add_reduction_args(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--method", choices=("mpca", "pca"), default="mpca")
    g = sp.add_mutually_exclusive_group()
    g.add_argument("--cr", type=_fraction, help="compression rate per mode, e.g. 0.5 or 2/3")
    g.add_argument("--dims", type=_dims, help="explicit reduced dims d1,d2,d3")
    g.add_argument("--target-ccr", type=_fraction, help="pca: smallest dimension reaching this CCR")
    g.add_argument("--pca-dim", type=_positive, help="pca: explicit output dimension")
    sp.add_argument("--solver", choices=("jacobi", "lapack"))
    sp.add_argument("--workers", type=_positive)


def _config(args: argparse.Namespace, settings: Settings, **extra: Any) -> PipelineConfig:
    try:
        return PipelineConfig(
            method=args.method, cr=args.cr, dims=args.dims, target_ccr=args.target_ccr,
            pca_dim=args.pca_dim, workers=args.workers or settings.workers,
            chunk_size=settings.chunk_size, solver=args.solver or settings.eig_solver, **extra)
    except ArgumentError as e:
        args.parser.error(str(e))
        raise  # unreachable; error() exits


def _emit(text: str, path: Optional[str]) -> None:
    sys.stdout.write(text if text.endswith("\n") else text + "\n")
    if path:
        atomic_write(path, text.encode("utf-8"))
        logger.info("[cli] wrote %s", path)


# -------------------------- commands --------------------------

def cmd_gen(args: argparse.Namespace, settings: Settings) -> int:
    ds = gen_synthetic(args.classes, args.per_class, args.shape, args.noise, args.seed)
    write_features(ds, args.out)
    print(f"wrote {len(ds)} items, dims {ds.dims}, to {args.out}")
    return EXIT_OK


def cmd_fit(args: argparse.Namespace, settings: Settings) -> int:
    cfg = _config(args, settings)
    ds = read_features(args.features)
    t0 = time.perf_counter()
    if cfg.method == "mpca":
        out_dims = mpca.resolve_out_dims(ds.dims, cr=cfg.cr, dims=cfg.dims)
        model: Any = mpca.fit(ds.tensors, out_dims, workers=cfg.workers,
                              chunk_size=cfg.chunk_size, solver=cfg.solver)
        ccrs = mpca.mode_ccrs(model)
        summary = (f"mpca dims {model.out_dims}, CCR per mode "
                   f"{', '.join(f'{c:.4f}' for c in ccrs)}, weighted {mpca.weighted_ccr(ccrs, ds.dims):.4f}")
    else:
        target = pca_target_ccr(cfg, ds.tensors)
        model = fit_pca(vectorize_batch(ds.tensors), out_dim=cfg.pca_dim, target_ccr=target, solver=cfg.solver)
        summary = f"pca dim {model.out_dim} of {model.in_dim}, CCR {model.ccr:.4f}"
    write_model(model, args.out)
    print(f"{summary} ({int((time.perf_counter() - t0) * 1000)} ms) -> {args.out}")
    return EXIT_OK


def cmd_project(args: argparse.Namespace, settings: Settings) -> int:
    model = read_model(args.model)
    ds = read_features(args.features)
    if isinstance(model, MpcaModel):
        tensors = mpca.project_batch(model, ds.tensors)
        dims = model.out_dims
    elif isinstance(model, PcaModel):
        z = project_pca(model, vectorize_batch(ds.tensors))
        dims = (1, 1, model.out_dim)
        tensors = z.reshape((len(ds),) + dims)
    else:
        raise ArgumentError(f"{args.model} holds a hash model, not a reduction model")
    out = FeatureDataset(dims=dims, ids=ds.ids, labels=ds.labels, tensors=tensors)
    write_features(out, args.out)
    print(f"projected {len(out)} items to dims {dims} -> {args.out}")
    return EXIT_OK


def cmd_hash_fit(args: argparse.Namespace, settings: Settings) -> int:
    if args.dim is not None:
        dim = args.dim
    else:
        d = read_features(args.features).dims
        dim = d[0] * d[1] * d[2]
    model = fit_hash(dim, args.bits, args.seed)
    write_model(model, args.out)
    print(f"hash dim {dim}, {args.bits} bits, seed {args.seed}, checksum {model.checksum:016x} -> {args.out}")
    return EXIT_OK


def cmd_encode(args: argparse.Namespace, settings: Settings) -> int:
    model = read_model(args.hash)
    if not isinstance(model, HashModel):
        raise ArgumentError(f"{args.hash} is not a hash model")
    ds = read_features(args.features)
    codes = encode_batch(model, vectorize_batch(ds.tensors))
    index = build_index_arrays(ds.ids, ds.labels, codes, model.bits)
    write_index(index, args.out)
    print(f"encoded {len(index)} items as {model.bits}-bit codes -> {args.out}")
    return EXIT_OK


def cmd_index(args: argparse.Namespace, settings: Settings) -> int:
    parts = [read_index(p) for p in args.codes]
    bits = {p.bits for p in parts}
    if len(bits) != 1:
        raise ShapeError(f"code files mix bit lengths {sorted(bits)}")
    index = build_index_arrays(np.concatenate([p.ids for p in parts]),
                               np.concatenate([p.labels for p in parts]),
                               np.concatenate([p.words for p in parts]), bits.pop())
    write_index(index, args.out)
    print(f"index of {len(index)} codes, {index.bits} bits -> {args.out}")
    return EXIT_OK


def cmd_query(args: argparse.Namespace, settings: Settings) -> int:
    index = read_index(args.index)
    source = read_index(args.queries) if args.queries else index
    hit = np.flatnonzero(source.ids == np.uint64(args.id))
    if hit.size == 0:
        raise ArgumentError(f"id {args.id} not found in {args.queries or args.index}")
    code = BinaryCode(source.bits, source.words[int(hit[0])])
    result = query(index, code, k=args.topk, shards=args.shards or settings.scan_shards)
    print("rank\tid\tlabel\tdistance")
    for rank, (i, lb, d) in enumerate(result, start=1):
        print(f"{rank}\t{i}\t{lb}\t{d}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace, settings: Settings) -> int:
    index = read_index(args.index)
    queries = read_index(args.queries) if args.queries else index
    t0 = time.perf_counter()
    result = evaluate_map(index, queries.ids, queries.labels, queries.words,
                          topk=args.topk, shards=args.shards or settings.scan_shards, bits=queries.bits)
    kv = {
        "bits": str(index.bits),
        "map": f"{result.map:.12g}",
        "n_queries": str(result.n_queries),
        "n_items": str(len(index)),
        "topk": "na" if args.topk is None else str(args.topk),
        "no_relevant": str(result.n_without_relevant),
        "query_ms": str(int((time.perf_counter() - t0) * 1000)),
    }
    _emit(render_kv(kv), args.report)
    return EXIT_OK


def cmd_pipeline(args: argparse.Namespace, settings: Settings) -> int:
    cfg = _config(args, settings, bits=args.bits, seed=args.seed, topk=args.topk,
                  shards=args.shards or settings.scan_shards)
    ds = read_features(args.features)
    if args.compare:
        reports = list(compare_methods(cfg, ds))
        for r in reports:
            print(r.to_text() + "\n")
        kv = comparison_kv(reports)
    else:
        reports = [run_pipeline(cfg, ds)]
        print(reports[0].to_text())
        kv = reports[0].to_kv()
    if args.report:
        atomic_write(args.report, render_kv(kv).encode("utf-8"))
        logger.info("[cli] wrote %s", args.report)
    if args.record:
        for r in reports:
            row = run_store.record_run(r.to_kv(), dataset=args.features)
            logger.info("[cli] recorded run id=%d", row)
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace, settings: Settings) -> int:
    ds = read_features(args.features)
    df = sweep(ds, crs=args.crs, bits=args.bits, methods=args.methods, seed=args.seed,
               topk=args.topk, workers=args.workers or settings.workers,
               solver=args.solver or settings.eig_solver)
    print(df.to_string(index=False))
    if args.out:
        atomic_write(args.out, df.to_csv(index=False).encode("utf-8"))
        logger.info("[cli] wrote %s", args.out)
    return EXIT_OK


def cmd_runs(args: argparse.Namespace, settings: Settings) -> int:
    rows = run_store.list_runs(limit=args.limit)
    if not rows:
        print("no recorded runs")
        return EXIT_OK
    print("id\tts\tmethod\tdims\tbits\tccr_w\tmap\tdataset")
    for r in rows:
        ccr_w = "na" if r["ccr_w"] is None else f"{r['ccr_w']:.4f}"
        mp = "na" if r["map"] is None else f"{r['map']:.4f}"
        print(f"{r['id']}\t{r['ts']}\t{r['method']}\t{r['dims']}\t{r['bits']}\t{ccr_w}\t{mp}\t{r['dataset']}")
    return EXIT_OK


# -------------------------- parser --------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mpca-retrieval", description="MPCA + LSH image retrieval over feature tensors")
    p.add_argument("--log-level", help="overrides MPCA_LOG_LEVEL")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name: str, fn: Callable[[argparse.Namespace, Settings], int], help_: str) -> argparse.ArgumentParser:
        sp = sub.add_parser(name, help=help_)
        sp.set_defaults(func=fn, parser=sp)
        return sp

    sp = add("gen", cmd_gen, "write a clustered synthetic feature file")
    sp.add_argument("--classes", type=int, default=5)
    sp.add_argument("--per-class", type=int, default=200)
    sp.add_argument("--shape", type=_dims, default=(6, 6, 16), help="tensor dims I1,I2,I3")
    sp.add_argument("--noise", type=float, default=0.3)
    sp.add_argument("--seed", type=_u64, default=1)
    sp.add_argument("-o", "--out", required=True)

    sp = add("fit", cmd_fit, "fit an MPCA or PCA model")
    sp.add_argument("features")
    _add_reduction_args(sp)
    sp.add_argument("-o", "--out", required=True)

    sp = add("project", cmd_project, "project features with a fitted model")
    sp.add_argument("model")
    sp.add_argument("features")
    sp.add_argument("-o", "--out", required=True)

    sp = add("hash-fit", cmd_hash_fit, "draw random hyperplanes")
    src = sp.add_mutually_exclusive_group(required=True)
    src.add_argument("--dim", type=_positive)
    src.add_argument("--features", help="projected feature file giving the input width")
    sp.add_argument("--bits", type=_positive, default=128)
    sp.add_argument("--seed", type=_u64, default=0)
    sp.add_argument("-o", "--out", required=True)

    sp = add("encode", cmd_encode, "encode projected features as binary codes")
    sp.add_argument("hash")
    sp.add_argument("features")
    sp.add_argument("-o", "--out", required=True)

    sp = add("index", cmd_index, "merge code files into one index")
    sp.add_argument("codes", nargs="+")
    sp.add_argument("-o", "--out", required=True)

    sp = add("query", cmd_query, "rank the index against one code")
    sp.add_argument("index")
    sp.add_argument("--id", type=_u64, required=True)
    sp.add_argument("--queries", help="code file holding the query (default: the index)")
    sp.add_argument("--topk", type=_positive)
    sp.add_argument("--shards", type=_positive)

    sp = add("eval", cmd_eval, "MAP with every query against the index, self excluded")
    sp.add_argument("index")
    sp.add_argument("--queries")
    sp.add_argument("--topk", type=_positive)
    sp.add_argument("--shards", type=_positive)
    sp.add_argument("--report")

    sp = add("pipeline", cmd_pipeline, "reduce, hash, index and evaluate in one run")
    sp.add_argument("features")
    _add_reduction_args(sp)
    sp.add_argument("--bits", type=_positive, default=128)
    sp.add_argument("--seed", type=_u64, default=0)
    sp.add_argument("--topk", type=_positive)
    sp.add_argument("--shards", type=_positive)
    sp.add_argument("--compare", action="store_true", help="also run pca at mpca's weighted CCR")
    sp.add_argument("--report")
    sp.add_argument("--record", action="store_true", help="append the report to the run log")

    sp = add("sweep", cmd_sweep, "MAP over compression rates and code lengths")
    sp.add_argument("features")
    sp.add_argument("--crs", type=_fraction_list, default=[1 / 3, 1 / 2, 2 / 3])
    sp.add_argument("--bits", type=_int_list, default=[64, 128])
    sp.add_argument("--methods", type=lambda s: [m.strip() for m in s.split(",") if m.strip()],
                    default=["mpca", "pca"])
    sp.add_argument("--seed", type=_u64, default=0)
    sp.add_argument("--topk", type=_positive)
    sp.add_argument("--workers", type=_positive)
    sp.add_argument("--solver", choices=("jacobi", "lapack"))
    sp.add_argument("-o", "--out", help="CSV destination")

    sp = add("runs", cmd_runs, "list recorded pipeline runs")
    sp.add_argument("--limit", type=int, default=20)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    settings = load_settings()
    setup_logging(args.log_level or settings.log_level)
    try:
        return int(args.func(args, settings))
    except (MpcaRetrievalError, OSError) as e:
        logger.error("[cli] %s failed: %s", args.command, e)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAILURE
