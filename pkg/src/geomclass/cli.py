"""Command-line entry point: ``geomclass <subcommand> [options]``.

Exit status is 0 on success, 1 on a usage error and 2 on a data error.
Every invocation writes ``run.json`` next to its outputs with the argument
vector and every effective parameter, enough to replay the command.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import __version__, kernels
from .datagen import DEFAULT_CLASSES, SHAPES, generate_dataset, generate_hard_pair
from .dataset import Dataset
from .efd import EfdError, efd, feature_layout, feature_matrix, reconstruct_array, contour_ring
from .encoding import (
    DEFAULT_MAX_POINTS, EncodingError, ScaleFactor, compute_scale_factor, encode_dataset,
)
from .geometry import GeometryError, parse_wkt
from .harness import (
    HYPER_NAMES, PRESETS, GridSpec, HarnessError, accuracy, confusion, grid_search, majority_baseline,
    report, split, worker_count,
)
from .io import DataError, load_benchmark, read_json, write_dataset, write_encoded, write_json
from .models import (
    BUILDERS, TrainConfig, build_cnn, build_rnn, evaluate_batches, exact_length_batches, format_mean_std,
    make_batches,
    model_from_state, repeated_runs, train,
)
from .neural import NeuralError
from .shallow import FittedShallow, ShallowError, Standardizer, fit_model

log = logging.getLogger("geomclass")

SHALLOW_KINDS = ("knn", "logreg", "dtree", "svm_rbf")
DATA_ERRORS = (DataError, GeometryError, EncodingError, EfdError, OSError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# --------------------------------------------------------------------------
# argument helpers
# --------------------------------------------------------------------------

def parse_int_range(text: str) -> List[int]:
    """``"4:9"`` (inclusive) or ``"0,1,2"`` to a list of ints."""
    try:
        if ":" in text:
            lo, hi = text.split(":")
            return list(range(int(lo), int(hi) + 1))
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer list or lo:hi range: {text!r}") from None


def parse_float_list(text: str) -> List[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated float list: {text!r}") from None


def _common(p):
    p.add_argument("--seed", type=int, default=0, help="seed for every random choice (default 0)")
    p.add_argument("--out-dir", default="runs", help="output directory (default ./runs)")
    p.add_argument("-v", "--verbose", action="store_true")


def _data_arg(p):
    p.add_argument("--data", required=True, help="dataset directory (native or CSV/GeoJSON files)")
    p.add_argument("--label-key", default=None, help="label column/property of foreign files")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="geomclass", description="Polygon classification with shallow and deep models.")
    parser.add_argument("--version", action="version", version=f"geomclass {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    _common(p)
    p.add_argument("--kind", choices=("shapes", "hard-pair"), default="shapes")
    p.add_argument("--classes", default="5", help="number of shape classes or comma-separated names")
    p.add_argument("--per-class", type=int, default=500)
    p.add_argument("--jitter", type=float, default=None)
    p.add_argument("--overlap", type=float, default=0.3, help="hard-pair aspect-ratio overlap")

    p = sub.add_parser("encode", help="encode a dataset as normalized vertex sequences")
    _common(p)
    _data_arg(p)
    p.add_argument("--max-points", type=int, default=DEFAULT_MAX_POINTS)

    p = sub.add_parser("features", help="write Fourier-descriptor feature CSVs")
    _common(p)
    _data_arg(p)
    p.add_argument("--order", type=int, default=8)

    p = sub.add_parser("reconstruct", help="sample the contour implied by truncated descriptors")
    _common(p)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--wkt", help="polygon as WKT text")
    src.add_argument("--data", help="dataset directory; pick the geometry with --id")
    p.add_argument("--id", default=None)
    p.add_argument("--orders", type=parse_int_range, default=[1, 2, 3, 4])
    p.add_argument("--samples", type=int, default=100)

    for name, hlp in (("train-shallow", "fit one shallow model"), ("grid-search", "cross-validated search")):
        p = sub.add_parser(name, help=hlp)
        _common(p)
        _data_arg(p)
        p.add_argument("--model", choices=SHALLOW_KINDS, required=True)
        if name == "train-shallow":
            p.add_argument("--order", type=int, default=8)
            p.add_argument("--k", type=int, default=25)
            p.add_argument("--C", type=float, default=1.0)
            p.add_argument("--gamma", type=float, default=0.1)
            p.add_argument("--depth", type=int, default=6)
        else:
            p.add_argument("--orders", type=parse_int_range, default=None, help="e.g. 0,1,2,3,4 or 0:4")
            p.add_argument("--depths", type=parse_int_range, default=None, help="e.g. 4:9")
            p.add_argument("--ks", type=parse_int_range, default=None, help="e.g. 21:30")
            p.add_argument("--Cs", type=parse_float_list, default=None, help="e.g. 0.01,0.1,1")
            p.add_argument("--gammas", type=parse_float_list, default=None)
            p.add_argument("--preset", choices=sorted(PRESETS), default="neighbourhoods",
                           help="ranges for unspecified hyperparameters")
            p.add_argument("--folds", type=int, default=5)
            p.add_argument("--subset-cap", type=int, default=10_000)
            p.add_argument("--svm-max-iter", type=int, default=10_000_000)

    p = sub.add_parser("train-deep", help="train the CNN or bi-LSTM, optionally repeated")
    _common(p)
    _data_arg(p)
    p.add_argument("--arch", choices=sorted(BUILDERS), required=True)
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--patience", type=int, default=8)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--n-bin", type=int, default=None)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--max-points", type=int, default=DEFAULT_MAX_POINTS)
    p.add_argument("--exclude-padding", action="store_true", help="CNN: average over real steps only")
    p.add_argument("--mask-padding", action="store_true", help="RNN: skip padded steps")

    p = sub.add_parser("evaluate", help="score a saved model on a dataset split")
    _common(p)
    _data_arg(p)
    p.add_argument("--model", required=True, help="model.json written by a training command")
    p.add_argument("--split", default="test", choices=("train", "val", "test", "all"))

    p = sub.add_parser("report", help="collect run directories into the comparison table")
    _common(p)
    p.add_argument("runs", nargs="+", help="run directories containing metrics.json")
    p.add_argument("--data", default=None, help="dataset for the majority-class row")
    p.add_argument("--label-key", default=None)
    p.add_argument("--task", default="accuracy", help="column title")
    return parser


# --------------------------------------------------------------------------
# shared plumbing
# --------------------------------------------------------------------------

def run_directory(out_dir, seed: int) -> Path:
    """A fresh ``<timestamp>-seed<seed>`` directory under ``out_dir``."""
    stamp = _dt.datetime.now().strftime("%Y%m%dT%H%M%S")
    base = Path(out_dir) / f"{stamp}-seed{seed}"
    d, k = base, 1
    while d.exists():
        d = Path(f"{base}-{k}")
        k += 1
    d.mkdir(parents=True)
    return d


def write_run_manifest(directory, args, argv, outputs: Dict, extra: Optional[Dict] = None):
    params = {k: v for k, v in vars(args).items() if k != "verbose"}
    doc = {
        "command": args.command,
        "argv": list(argv),
        "params": params,
        "seed": args.seed,
        "version": __version__,
        "kernel_backend": kernels.BACKEND,
        "threads": worker_count(),
        "outputs": outputs,
    }
    if extra:
        doc.update(extra)
    write_json(Path(directory) / "run.json", doc)


def load_split_dataset(args) -> Dataset:
    """The dataset with train/val/test splits; unsplit data gets a stratified seeded split."""
    ds = load_benchmark(args.data, label_key=args.label_key)
    if not all(k in ds.splits for k in ("train", "val", "test")):
        sp = split(ds.labels, seed=args.seed, stratify=True)
        ds.splits = sp.as_dict()
        ds.meta = {**ds.meta, "split_seed": args.seed, "split_policy": sp.policy}
    return ds


def _save_confusion(directory, name, pred, truth, class_names):
    cm = confusion(pred, truth, len(class_names))
    (Path(directory) / f"confusion_{name}.csv").write_text(cm.to_csv(class_names))
    return cm


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def cmd_synth(args, argv):
    out = Path(args.out_dir)
    if args.kind == "hard-pair":
        ds = generate_hard_pair(args.per_class, args.seed, args.overlap,
                                jitter=0.0 if args.jitter is None else args.jitter)
    else:
        if args.classes.isdigit():
            n = int(args.classes)
            if not 2 <= n <= len(DEFAULT_CLASSES):
                raise UsageError(f"--classes must be between 2 and {len(DEFAULT_CLASSES)}")
            names = DEFAULT_CLASSES[:n]
        else:
            names = tuple(c.strip() for c in args.classes.split(","))
            unknown = [c for c in names if c not in SHAPES]
            if unknown:
                raise UsageError(f"unknown shape classes {unknown}; available: {sorted(SHAPES)}")
        kw = {} if args.jitter is None else {"jitter": args.jitter}
        ds = generate_dataset(names, args.per_class, args.seed, **kw)
    ds.splits = split(ds.labels, seed=args.seed, stratify=True).as_dict()
    write_dataset(ds, out, {"seeds": {"generator": args.seed, "split": args.seed}})
    write_run_manifest(out, args, argv, {"dataset": "manifest.json"})
    print(f"wrote {len(ds)} geometries in {ds.num_classes} classes to {out}")
    return 0


def cmd_encode(args, argv):
    ds = load_split_dataset(args)
    train = ds.part("train")
    s = compute_scale_factor(train.geometries)
    parts = {}
    for name in ("train", "val", "test"):
        d = ds.part(name)
        parts[name] = encode_dataset(d.geometries, d.labels, s, args.max_points)
    out = Path(args.out_dir)
    write_encoded(out, parts, ds.class_names, s, args.max_points, {"seeds": {"split": args.seed}})
    write_run_manifest(out, args, argv, {"dataset": "manifest.json"}, {"scale_factor": s.s})
    print(f"scale factor {s.s:.6g} ({s.convention}); encoded {len(ds)} geometries to {out}")
    return 0


def cmd_features(args, argv):
    ds = load_split_dataset(args)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    header = ",".join(list(feature_layout(args.order)) + ["label"])
    written = {}
    for name in ("train", "val", "test"):
        d = ds.part(name)
        X = feature_matrix(d.geometries, args.order)
        rows = [",".join([repr(float(v)) for v in x] + [str(int(lab))]) for x, lab in zip(X, d.labels)]
        path = out / f"features_o{args.order}_{name}.csv"
        path.write_text(header + "\n" + "".join(r + "\n" for r in rows))
        written[name] = path.name
    write_run_manifest(out, args, argv, written, {"class_names": ds.class_names})
    print(f"wrote order-{args.order} features for {len(ds)} geometries to {out}")
    return 0


def cmd_reconstruct(args, argv):
    if args.wkt is not None:
        g = parse_wkt(args.wkt, args.id or "input")
    else:
        ds = load_benchmark(args.data)
        if args.id is None:
            raise UsageError("--data needs --id")
        found = [g for g in ds.geometries if g.id == args.id]
        if not found:
            raise DataError(f"no geometry with id {args.id!r} in {args.data}")
        g = found[0]
    if any(o < 1 for o in args.orders):
        raise UsageError("reconstruction orders must be >= 1")
    ring = contour_ring(g)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["order,x,y"]
    for o in args.orders:
        pts = reconstruct_array(efd(ring, o), args.samples)
        lines += [f"{o},{float(x)!r},{float(y)!r}" for x, y in pts]
    (out / "reconstruction.csv").write_text("\n".join(lines) + "\n")
    write_run_manifest(out, args, argv, {"reconstruction": "reconstruction.csv"})
    print(f"wrote {len(args.orders)} reconstructions of {g.id} to {out / 'reconstruction.csv'}")
    return 0


def _finish_shallow(args, argv, ds, fitted: FittedShallow, extra_outputs=None, extra=None):
    run = run_directory(args.out_dir, args.seed)
    test = ds.part("test")
    pred = fitted.predict_features(feature_matrix(test.geometries, fitted.order))
    acc = accuracy(pred, test.labels)
    _save_confusion(run, args.model, pred, test.labels, ds.class_names)
    write_json(run / "model.json", {**fitted.to_dict(), "class_names": ds.class_names})
    write_json(run / "metrics.json", {"model": args.model, "accuracy": acc,
                                      "majority": majority_baseline(ds.part("train").labels, test.labels)})
    outputs = {"model": "model.json", "metrics": "metrics.json", "confusion": f"confusion_{args.model}.csv"}
    outputs.update(extra_outputs or {})
    write_run_manifest(run, args, argv, outputs, extra)
    print(f"{args.model} order {fitted.order}: test accuracy {acc:.3f} ({run})")
    return run


def cmd_train_shallow(args, argv):
    ds = load_split_dataset(args)
    train = ds.part("train")
    hyper = {"knn": {"k": args.k}, "logreg": {"C": args.C}, "dtree": {"max_depth": args.depth},
             "svm_rbf": {"C": args.C, "gamma": args.gamma}}[args.model]
    X = feature_matrix(train.geometries, args.order)
    std = Standardizer.fit(X)
    model = fit_model(args.model, std.transform(X), train.labels, **hyper)
    _finish_shallow(args, argv, ds, FittedShallow(model, std, args.order), extra={"hyper": hyper})
    return 0


def cmd_grid_search(args, argv):
    ds = load_split_dataset(args)
    train = ds.part("train")
    ranges = {k: list(v) for k, v in PRESETS[args.preset][args.model].items()}
    given = {"max_depth": args.depths, "k": args.ks, "C": args.Cs, "gamma": args.gammas}
    for name in HYPER_NAMES[args.model]:
        if given[name] is not None:
            ranges[name] = given[name]
    stray = [n for n, v in given.items() if v is not None and n not in HYPER_NAMES[args.model]]
    if stray:
        raise UsageError(f"{args.model} has no hyperparameter {stray[0]!r}")
    try:
        grid = GridSpec(args.model, ranges, *([args.orders] if args.orders is not None else []))
    except HarnessError as exc:
        raise UsageError(str(exc)) from None
    res = grid_search(args.model, train.geometries, train.labels, grid, folds=args.folds,
                      subset_cap=args.subset_cap, seed=args.seed, svm_max_iter=args.svm_max_iter)
    print(f"grid of {grid.size()} combinations, best order {res.best_order} {res.best_params} "
          f"cv accuracy {res.best_score:.3f}")
    run = _finish_shallow(args, argv, ds, res.model, {"cv_table": "cv_table.csv"},
                          {"grid": grid.to_dict(), "best": {"order": res.best_order, "params": res.best_params,
                                                            "cv_accuracy": res.best_score}})
    (run / "cv_table.csv").write_text(res.table_csv())
    return 0


def cmd_train_deep(args, argv):
    if args.repeats < 1:
        raise UsageError("--repeats must be >= 1")
    try:
        cfg = TrainConfig(args.batch_size, args.epochs, args.patience, args.seed, args.lr, args.n_bin)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    ds = load_split_dataset(args)
    s = compute_scale_factor(ds.part("train").geometries)
    seqs = [encode_dataset(ds.part(n).geometries, ds.part(n).labels, s, args.max_points)
            for n in ("train", "val", "test")]
    data = make_batches(*seqs, cfg)
    k = ds.num_classes
    if args.arch == "cnn":
        builder = lambda seed: build_cnn(k, seed, exclude_padding=args.exclude_padding)  # noqa: E731
    else:
        builder = lambda seed: build_rnn(k, seed, mask_padding=args.mask_padding)  # noqa: E731
    seeds = [args.seed + r for r in range(args.repeats)]
    if args.repeats == 1:
        model, hist = train(builder(args.seed), data[0], data[1], cfg)
        pred, lab, _ = evaluate_batches(model, data[2])
        accs, models, hists, preds = [float((pred == lab).mean())], [model], [hist], [(pred, lab)]
    else:
        _, _, runs = repeated_runs(builder, data, cfg, args.repeats, seeds)
        accs = [r.test_accuracy for r in runs]
        models, hists = [r.model for r in runs], [r.history for r in runs]
        preds = [(r.predictions, r.labels) for r in runs]

    run = run_directory(args.out_dir, args.seed)
    for i, (pred, lab) in enumerate(preds):
        cm = _save_confusion(run, f"{args.arch}_run{i}", pred, lab, ds.class_names)
        assert abs(cm.accuracy - accs[i]) < 1e-12
    best = int(np.argmax(accs))
    write_json(run / "model.json", {**models[best].state_dict(), "scale_factor": s.s,
                                    "max_points": args.max_points, "class_names": ds.class_names,
                                    "batch_size": cfg.batch_size})
    write_json(run / "metrics.json", {"model": args.arch, "accuracy": accs, "seeds": seeds,
                                      "majority": majority_baseline(ds.part("train").labels,
                                                                    ds.part("test").labels)})
    write_json(run / "history.json", [h.to_dict() for h in hists])
    write_run_manifest(run, args, argv, {"model": "model.json", "metrics": "metrics.json",
                                         "history": "history.json"},
                       {"train_config": cfg.to_dict(), "scale_factor": s.s})
    line = format_mean_std(accs) if len(accs) > 1 else f"{accs[0]:.3f}"
    print(f"{args.arch}: {line}  (test accuracy over {len(accs)} run{'s' if len(accs) > 1 else ''}; {run})")
    return 0


def cmd_evaluate(args, argv):
    doc = read_json(args.model)
    ds = load_split_dataset(args)
    part = ds if args.split == "all" else ds.part(args.split)
    if "arch" in doc:
        model = model_from_state(doc)
        s = ScaleFactor(doc["scale_factor"])
        seqs = encode_dataset(part.geometries, part.labels, s, doc.get("max_points", DEFAULT_MAX_POINTS))
        bs = int(doc.get("batch_size", 64))
        pred, lab, _ = evaluate_batches(model, exact_length_batches(seqs, bs))
        kind = doc["arch"]
    else:
        fitted = FittedShallow.from_dict(doc)
        pred = fitted.predict_features(feature_matrix(part.geometries, fitted.order))
        lab = part.labels
        kind = doc["model"]["kind"]
    if doc.get("class_names") not in (None, ds.class_names):
        raise DataError(f"model classes {doc['class_names']} differ from dataset classes {ds.class_names}")
    run = run_directory(args.out_dir, args.seed)
    cm = _save_confusion(run, kind, pred, lab, ds.class_names)
    write_json(run / "metrics.json", {"model": kind, "accuracy": cm.accuracy, "split": args.split})
    write_run_manifest(run, args, argv, {"metrics": "metrics.json", "confusion": f"confusion_{kind}.csv"})
    print(f"{kind} on {args.split}: accuracy {cm.accuracy:.3f} ({cm.total} samples)")
    return 0


def cmd_report(args, argv):
    results: Dict[str, object] = {}
    majority = None
    for d in args.runs:
        m = read_json(Path(d) / "metrics.json")
        results[m["model"]] = m["accuracy"]
        majority = m.get("majority", majority)
    if args.data is not None:
        ds = load_split_dataset(args)
        majority = majority_baseline(ds.part("train").labels, ds.part("test").labels)
    if majority is not None:
        results["majority"] = majority
    try:
        table = report(results, args.task)
    except HarnessError as exc:
        raise DataError(str(exc)) from None
    run = run_directory(args.out_dir, args.seed)
    (run / "table.csv").write_text(table.to_csv())
    (run / "table.txt").write_text(table.to_text())
    write_run_manifest(run, args, argv, {"table": "table.csv", "text": "table.txt"})
    sys.stdout.write(table.to_text())
    return 0


COMMANDS = {
    "synth": cmd_synth, "encode": cmd_encode, "features": cmd_features, "reconstruct": cmd_reconstruct,
    "train-shallow": cmd_train_shallow, "grid-search": cmd_grid_search, "train-deep": cmd_train_deep,
    "evaluate": cmd_evaluate, "report": cmd_report,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args, argv)
    except UsageError as exc:
        print(f"geomclass {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except DATA_ERRORS as exc:
        print(f"geomclass {args.command}: data error: {exc}", file=sys.stderr)
        return 2
    except (ShallowError, NeuralError, HarnessError) as exc:
        print(f"geomclass {args.command}: data error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
