"""``skilleval`` command line: gen, train, eval, dump-hidden, selftest.

All artifacts live under ``--out-dir``::

    config.json                 effective configuration (re-loadable)
    data/                       manifest.json + features/*.fseq
    fold<f>/encoder/            pca.enc, gmm.enc
    fold<f>/au.ckpt             action-unit network
    fold<f>/siamese.ckpt        Siamese network
    fold<f>/*_log.csv           one row per training epoch
    eval/                       scores, ROC curves, report.json
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import pipeline, synth_data
from .action_unit import classify_accuracy, dump_hidden_states, load_au, save_au, write_hidden_csv
from .checkpoint import CheckpointError
from .encoding import EncodingError, load_encoder, save_encoder
from .evaluation import EvalReport, dumps_report, write_roc_csv, write_scores_csv
from .pipeline import METHODS, FoldModels, RunConfig
from .siamese import load_siamese, make_pairs, save_siamese
from .synth_data import ConfigError, DatasetFormatError

log = logging.getLogger("skilleval")


class CliError(RuntimeError):
    pass


def _parse_set(items) -> dict:
    out = {}
    for item in items or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        out[key.strip()] = value.strip()
    return out


def resolve_config(args) -> RunConfig:
    """Defaults <- config file (or the run's echoed config) <- flags."""
    out = Path(args.out_dir)
    if args.config:
        cfg = RunConfig.load(args.config)
    elif (out / "config.json").is_file():
        cfg = RunConfig.load(out / "config.json")
    else:
        cfg = RunConfig()
    overrides = _parse_set(args.set)
    if args.seed is not None:
        overrides["seed"] = args.seed
    merged = {**vars(cfg), **overrides}
    return RunConfig.from_dict(merged)


def _echo_config(cfg: RunConfig, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(cfg.dumps(), encoding="utf-8")


def _load_data(out: Path) -> synth_data.Dataset:
    if not (out / "data" / synth_data.MANIFEST_NAME).is_file():
        raise CliError(f"dataset missing under {out / 'data'}; run 'skilleval gen' first")
    return synth_data.read_dataset(out / "data")


def _fold_dir(out: Path, fold: int) -> Path:
    return out / f"fold{fold}"


def _load_encoder(out: Path, fold: int):
    d = _fold_dir(out, fold) / "encoder"
    if not (d / "pca.enc").is_file() or not (d / "gmm.enc").is_file():
        raise CliError(f"encoder checkpoint missing ({d}); run 'skilleval train --stage encoder --fold {fold}'")
    return load_encoder(d)


def _load_au(out: Path, fold: int):
    p = _fold_dir(out, fold) / "au.ckpt"
    if not p.is_file():
        raise CliError(f"action-unit checkpoint missing ({p}); run 'skilleval train --stage au --fold {fold}'")
    return load_au(p)[0]


def _load_siamese(out: Path, fold: int):
    p = _fold_dir(out, fold) / "siamese.ckpt"
    if not p.is_file():
        raise CliError(f"siamese checkpoint missing ({p}); run 'skilleval train --stage siamese --fold {fold}'")
    return load_siamese(p)[0]


# -- commands -------------------------------------------------------------------


def cmd_gen(args) -> int:
    cfg = resolve_config(args)
    out = Path(args.out_dir)
    ds = synth_data.generate_dataset(cfg.gen_config())
    synth_data.write_dataset(ds, out / "data")
    _echo_config(cfg, out)
    print(f"videos={len(ds.videos())} segments={len(ds.segments)}")
    print(f"dataset_sha256={synth_data.dataset_digest(out / 'data')}")
    return 0


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    out = Path(args.out_dir)
    fd = _fold_dir(out, args.fold)
    ds = _load_data(out)
    if args.stage == "encoder":
        enc = pipeline.train_encoder_stage(ds, cfg, args.fold)
        save_encoder(fd / "encoder", enc)
        print(f"encoder fold={args.fold} fv_dim={enc.fv_dim}")
    elif args.stage == "au":
        enc = _load_encoder(out, args.fold)
        au, tlog, acc = pipeline.train_au_stage(ds, cfg, args.fold, enc)
        save_au(fd / "au.ckpt", au, {"heldout": args.fold})
        tlog.write_csv(fd / "au_log.csv", "heldout_accuracy")
        print(f"au fold={args.fold} epochs={len(tlog.epoch)} accuracy={acc!r}")
    else:
        enc = _load_encoder(out, args.fold)
        au = _load_au(out, args.fold)
        train = pipeline.video_features(ds, enc, au, pipeline.train_folds_for(args.fold), cfg.stride)
        test = pipeline.video_features(ds, enc, au, [args.fold], cfg.stride)
        net, tlog = pipeline.train_siamese_stage(cfg, args.fold, train, test)
        save_siamese(fd / "siamese.ckpt", net, {"heldout": args.fold})
        tlog.write_csv(fd / "siamese_log.csv", "heldout_auc")
        print(f"siamese fold={args.fold} epochs={len(tlog.epoch)} heldout_auc={tlog.heldout_metric[-1]!r}"
              if tlog.epoch else f"siamese fold={args.fold} epochs=0")
    _echo_config(cfg, out)
    return 0


def cmd_eval(args) -> int:
    cfg = resolve_config(args)
    out = Path(args.out_dir)
    ds = _load_data(out)
    ev = out / "eval"
    ev.mkdir(parents=True, exist_ok=True)
    if args.cv:
        reports = pipeline.cross_validate(ds, cfg, out_dir=out / "cv", methods=(args.method,))
        report = reports[args.method]
        (ev / f"report_{args.method}.json").write_text(pipeline.report_text(reports, cfg), encoding="utf-8")
    else:
        folds = list(range(synth_data.N_FOLDS)) if args.fold is None else [args.fold]
        report = EvalReport(method=args.method)
        for f in folds:
            enc = _load_encoder(out, f)
            au = _load_au(out, f)
            models = FoldModels(f, enc, au, _load_siamese(out, f) if args.method == "siamese" else None)
            test = pipeline.video_features(ds, enc, au, [f], cfg.stride)
            samples = pipeline.encode_samples(enc, ds.segments_in_folds([f]), cfg.stride)
            report.fold_accuracy[f] = classify_accuracy(au, samples)
            scored, curve = pipeline.evaluate_method(args.method, f, make_pairs(test), models, cfg.alpha)
            report.fold_auc[f] = curve.auc
            write_scores_csv(ev / f"scores_{args.method}_fold{f}.csv", scored)
            write_roc_csv(ev / f"roc_{args.method}_fold{f}.csv", curve)
        (ev / f"report_{args.method}.json").write_text(dumps_report(report.to_dict()), encoding="utf-8")
    for f in sorted(report.fold_auc):
        print(f"fold={f} auc={report.fold_auc[f]!r} accuracy={report.fold_accuracy[f]!r}")
    print(f"mean_auc={report.mean_auc!r}")
    print(f"mean_accuracy={report.mean_accuracy!r}")
    return 0


def cmd_dump_hidden(args) -> int:
    cfg = resolve_config(args)
    out = Path(args.out_dir)
    ds = _load_data(out)
    enc = _load_encoder(out, args.fold)
    au = _load_au(out, args.fold)
    vid, _, pos = args.segment.partition(":")
    matches = [s for s in ds.segments if s.video_id == vid and s.position == int(pos or 0)]
    if not matches:
        raise CliError(f"no segment {args.segment!r}; expected <video_id>:<position>, e.g. s00_a00:1")
    cells = [int(c) for c in args.cells.split(",")]
    trace = dump_hidden_states(au, enc.encode(matches[0].frames, cfg.stride), cells)
    path = Path(args.output) if args.output else out / f"hidden_{vid}_{int(pos or 0):02d}.csv"
    write_hidden_csv(path, trace, cells)
    print(f"wrote {path} rows={trace.shape[0]} cells={len(cells)}")
    return 0


def cmd_selftest(args) -> int:
    from .selftest import run_selftest

    t = time.time()
    results = run_selftest(corrupt_gradient=args.corrupt_gradient)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name} {r.detail}")
    ok = all(r.passed for r in results)
    print(f"selftest {'passed' if ok else 'FAILED'} in {time.time() - t:.1f}s")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON key-value config file")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--out-dir", default="run", help="run directory (default: ./run)")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config field")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="skilleval", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("gen", parents=[common], help="generate the synthetic dataset").set_defaults(fn=cmd_gen)

    t = sub.add_parser("train", parents=[common], help="train one pipeline stage for one held-out fold")
    t.add_argument("--stage", choices=("encoder", "au", "siamese"), required=True)
    t.add_argument("--fold", type=int, default=0, choices=range(synth_data.N_FOLDS), help="held-out fold")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", parents=[common], help="score held-out pairs and report AUC / accuracy")
    e.add_argument("--method", choices=METHODS, default="siamese")
    e.add_argument("--fold", type=int, choices=range(synth_data.N_FOLDS), help="only this held-out fold")
    e.add_argument("--cv", action="store_true", help="train and evaluate all four folds from scratch")
    e.set_defaults(fn=cmd_eval)

    d = sub.add_parser("dump-hidden", parents=[common], help="CSV trace of top-layer hidden units")
    d.add_argument("--fold", type=int, default=0, choices=range(synth_data.N_FOLDS))
    d.add_argument("--segment", required=True, help="<video_id>:<position>, e.g. s00_a01:2")
    d.add_argument("--cells", default="0,1", help="comma-separated cell indices")
    d.add_argument("--output", help="CSV path (default: <out-dir>/hidden_<video>_<pos>.csv)")
    d.set_defaults(fn=cmd_dump_hidden)

    s = sub.add_parser("selftest", parents=[common], help="gradient, FV and AUC self-checks")
    s.add_argument("--corrupt-gradient", action="store_true", help="inject a forget-gate gradient error")
    s.set_defaults(fn=cmd_selftest)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    threads = int(os.environ.get("SKILLEVAL_THREADS", "1"))
    try:
        with threadpool_limits(limits=max(threads, 1)):
            return args.fn(args)
    except (ConfigError, DatasetFormatError, EncodingError, CheckpointError, CliError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
