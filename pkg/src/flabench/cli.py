"""Command-line entry point: ``python -m flabench <command>``.

Commands::

    train --config F [--set k=v]... --out DIR
    evaluate --ckpt F --data DIR --out DIR [--seeds A..B]
    sweep-report --in DIR --out DIR
    gen-data --spec F --out DIR
    grad-check [--f64]

Exit codes: 0 success, 2 usage / config / missing-file errors, 3 numeric
failure (diverged training, failed gradient check).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict

from . import config as cfgmod
from .data import load_dir, save_dir, synth_shapes
from .errors import ConfigError, DataError, FormatError, NumericError
from .evaluation import OPS, StabilityReport, aggregate_csv, comparison_csv, evaluate, \
    histogram_csv, reports_csv
from .model import CKPT_MAGIC, MiniCNN
from .tensor import MAGIC
from .train import event_dict, init_model, train

log = logging.getLogger("flabench")

CKPT_NAME = "model.ckpt"
LOG_NAME = "log.jsonl"
MANIFEST_NAME = "manifest.json"
FORMATS = {"checkpoint": CKPT_MAGIC.decode(), "tensor": MAGIC.decode(), "log": "jsonl-1", "manifest": 1}
GRAD_TOL = {True: 1e-5, False: 1e-2}


def _write(path, text):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _dataset(cfg):
    if cfg["data.dir"]:
        return load_dir(cfg["data.dir"])
    return synth_shapes(cfgmod.synth_spec(cfg))


def cmd_train(cfg, out_dir):
    """Train one model; writes checkpoint, JSON-lines log and manifest."""
    os.makedirs(out_dir, exist_ok=True)
    ds = _dataset(cfg)
    spec = cfgmod.model_spec(cfg, ds.num_classes, ds.images.shape[1:])
    tc = cfgmod.train_config(cfg)
    model = init_model(spec, tc.seed)
    with open(os.path.join(out_dir, LOG_NAME), "w", encoding="utf-8") as fh:
        def on_epoch(record, events):
            for ev in events:
                fh.write(json.dumps(event_dict(ev)) + "\n")
            fh.write(json.dumps({"type": "epoch", **record}) + "\n")
            fh.flush()
        model, history = train(model, ds, tc, on_epoch=on_epoch)
    model.save(os.path.join(out_dir, CKPT_NAME))
    manifest = {
        "command": "train",
        "formats": FORMATS,
        "seed": tc.seed,
        "config": cfg,
        "resolved": {"model": asdict(spec), "train": asdict(tc)},
        "data_sha256": hashlib.sha256(ds.images.tobytes() + ds.labels.tobytes()).hexdigest(),
        "best_epoch": history.best_epoch,
        "epochs_run": len(history.epochs),
        "stopped_early": history.stopped_early,
    }
    _write(os.path.join(out_dir, MANIFEST_NAME), json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return model, history


def parse_seeds(text):
    """``"0..4"`` -> ``[0, 1, 2, 3, 4]``; a single integer is accepted too."""
    try:
        if ".." in text:
            a, b = (int(s) for s in text.split(".."))
        else:
            a = b = int(text)
    except ValueError:
        raise ConfigError(f"--seeds must look like A..B, got {text!r}") from None
    if b < a:
        raise ConfigError(f"--seeds range {text!r} is empty")
    return list(range(a, b + 1))


def _run_meta(ckpt):
    """(model id, seed) from the manifest next to a checkpoint, if any."""
    path = os.path.join(os.path.dirname(os.path.abspath(ckpt)), MANIFEST_NAME)
    if os.path.exists(path):
        with open(path, encoding="utf-8") as fh:
            m = json.load(fh)
        return m["config"]["train.method"], m.get("seed")
    return os.path.splitext(os.path.basename(ckpt))[0], None


def _check_compatible(model, ds, ckpt):
    if len(ds.splits.get("test", ())) == 0:
        raise DataError("dataset has no test split")
    if tuple(ds.images.shape[1:]) != model.spec.input_size:
        raise ConfigError(f"{ckpt}: model expects input {model.spec.input_size}, "
                          f"data has {tuple(ds.images.shape[1:])}")
    if ds.num_classes > model.spec.num_classes:
        raise ConfigError(f"{ckpt}: model has {model.spec.num_classes} classes, "
                          f"data has labels up to {ds.num_classes - 1}")


def cmd_evaluate(ckpt, data_dir, out_dir, seeds=None, model_id=None):
    """Stability reports for one checkpoint, or one per seed via ``{seed}`` in ``ckpt``."""
    if seeds is not None and "{seed}" not in ckpt:
        raise ConfigError(f"--seeds needs a {{seed}} placeholder in the checkpoint path, got {ckpt}")
    ds = load_dir(data_dir)
    os.makedirs(out_dir, exist_ok=True)
    reports = []
    for seed in (seeds if seeds is not None else [None]):
        path = ckpt.format(seed=seed) if seed is not None else ckpt
        model = MiniCNN.load(path)
        _check_compatible(model, ds, path)
        name, run_seed = _run_meta(path)
        name = model_id or name
        seed = seed if seed is not None else run_seed
        r = evaluate(model, ds, model_id=name, seed=seed)
        stem = f"report_{name}" + ("" if seed is None else f"_seed{seed}")
        _write(os.path.join(out_dir, stem + ".json"), r.to_json())
        _write(os.path.join(out_dir, stem + ".csv"), reports_csv([r]))
        log.info("%s: acc %.2f T %.2f", stem, r.accuracy, r.trade_off)
        reports.append(r)
    if seeds is not None:
        _write(os.path.join(out_dir, "reports.csv"), reports_csv(reports))
        _write(os.path.join(out_dir, "aggregate.csv"), aggregate_csv(reports))
    return reports


def load_reports(in_dir):
    """Every report JSON under ``in_dir`` (recursively, sorted by path)."""
    if not os.path.isdir(in_dir):
        raise ConfigError(f"not a directory: {in_dir}")
    out = []
    for root, dirs, files in os.walk(in_dir):
        dirs.sort()
        for name in sorted(files):
            if not name.endswith(".json"):
                continue
            with open(os.path.join(root, name), encoding="utf-8") as fh:
                try:
                    d = json.load(fh)
                except ValueError:
                    continue
            if isinstance(d, dict) and "mfr" in d and "histograms" in d:
                out.append(StabilityReport.from_dict(d))
    return out


def cmd_sweep_report(in_dir, out_dir):
    reports = load_reports(in_dir)
    if not reports:
        raise ConfigError(f"no reports found in {in_dir}")
    os.makedirs(out_dir, exist_ok=True)
    _write(os.path.join(out_dir, "comparison.csv"), comparison_csv(reports))
    for op in OPS:
        _write(os.path.join(out_dir, f"histogram_{op}.csv"), histogram_csv(reports, op))
    return reports


def cmd_gen_data(spec_path, out_dir):
    """Render synth_shapes from a file of ``synth.*`` keys and save it as IDX."""
    try:
        with open(spec_path, encoding="utf-8") as fh:
            pairs = cfgmod.parse_lines(fh.read(), spec_path)
    except FileNotFoundError:
        raise ConfigError(f"spec file not found: {spec_path}") from None
    extra = sorted(k for k in pairs if not k.startswith("synth."))
    if extra:
        raise ConfigError(f"{spec_path}: only synth.* keys are allowed, got {', '.join(extra)}")
    cfg = cfgmod.resolve(pairs)
    ds = synth_shapes(cfgmod.synth_spec(cfg))
    save_dir(ds, out_dir)
    _write(os.path.join(out_dir, "synth.cfg"),
           cfgmod.dumps({k: v for k, v in cfg.items() if k.startswith("synth.")}))
    return ds


def cmd_grad_check(f64, out=None):
    from .gradcheck import run_suite

    out = out or sys.stdout
    tol = GRAD_TOL[f64]
    errs = run_suite(f64=f64)
    ok = True
    for name, err in errs.items():
        passed = err < tol
        ok &= passed
        print(f"{name:16s} {err:.3e}  {'PASS' if passed else 'FAIL'}", file=out)
    print(f"{'f64' if f64 else 'f32'} tolerance {tol:g}: {'all passed' if ok else 'FAILED'}", file=out)
    return ok


def _threads(text):
    try:
        n = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if n < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return n


def build_parser():
    p = argparse.ArgumentParser(prog="flabench", description=__doc__.split("\n")[0])
    p.add_argument("--threads", type=_threads, default=None,
                   help="BLAS threads (default: $FLABENCH_THREADS or 1)")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one model")
    t.add_argument("--config", required=True)
    t.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    t.add_argument("--out", required=True)

    e = sub.add_parser("evaluate", help="write stability reports for a checkpoint")
    e.add_argument("--ckpt", required=True, help="checkpoint path; may contain {seed}")
    e.add_argument("--data", required=True, help="IDX dataset directory")
    e.add_argument("--out", required=True)
    e.add_argument("--seeds", default=None, metavar="A..B")
    e.add_argument("--model-id", default=None)

    s = sub.add_parser("sweep-report", help="merge reports into comparison and histogram CSVs")
    s.add_argument("--in", dest="in_dir", required=True)
    s.add_argument("--out", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic shapes dataset as IDX")
    g.add_argument("--spec", required=True)
    g.add_argument("--out", required=True)

    c = sub.add_parser("grad-check", help="finite-difference check of every backward pass")
    c.add_argument("--f64", action="store_true")
    return p


def _dispatch(args):
    if args.command == "train":
        cmd_train(cfgmod.load(args.config, args.set), args.out)
    elif args.command == "evaluate":
        seeds = parse_seeds(args.seeds) if args.seeds is not None else None
        cmd_evaluate(args.ckpt, args.data, args.out, seeds, args.model_id)
    elif args.command == "sweep-report":
        cmd_sweep_report(args.in_dir, args.out)
    elif args.command == "gen-data":
        cmd_gen_data(args.spec, args.out)
    elif args.command == "grad-check":
        if not cmd_grad_check(args.f64):
            return 3
    return 0


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    threads = args.threads
    if threads is None:
        env = os.environ.get("FLABENCH_THREADS", "1")
        try:
            threads = _threads(env)
        except argparse.ArgumentTypeError as exc:
            print(f"flabench: error: FLABENCH_THREADS: {exc}", file=sys.stderr)
            return 2
    if args.verbose:
        logging.basicConfig(level=logging.INFO, format="%(name)s: %(message)s")

    from threadpoolctl import threadpool_limits

    try:
        with threadpool_limits(limits=threads):
            return _dispatch(args)
    except FileNotFoundError as exc:
        print(f"flabench: error: no such file: {exc.filename}", file=sys.stderr)
        return 2
    except (ConfigError, DataError, FormatError) as exc:
        print(f"flabench: error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"flabench: numeric failure: {exc}", file=sys.stderr)
        return 3
