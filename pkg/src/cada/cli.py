"""Command line interface.

Subcommands: train, eval, gradcheck, export-attention, adistance, gen-data.
Every command that writes files also writes the resolved configuration next
to them, and all outputs are byte-deterministic for identical argv + config +
seed (no timestamps anywhere).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import data as dt
from . import evaluation as ev
from . import gradcheck as gc
from . import model as md
from . import training as tr

_STREAM_METRICS = 7
_STREAM_DISTANCE = 8


def _load_config(args):
    cfg = tr.TrainConfig.load(args.config)
    if args.seed is not None:
        cfg = tr.TrainConfig.from_dict({**cfg.to_dict(), "seed": args.seed})
    return cfg


def _outdir(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dataset_and_probe(cfg):
    dataset = dt.dataset_from_spec(cfg.dataset, cfg.seed)
    try:
        hidden = dataset.evaluation_target_labels()
    except ValueError:
        hidden = None
    probe = None
    if hidden is not None:
        held_out = dt.Batch(dataset.target.features, hidden, dataset.target.domain)
        probe = lambda params: ev.accuracy(params, held_out)  # noqa: E731
    return dataset, hidden, probe


def _write_run_outputs(params, cfg, dataset, hidden, out):
    cfg.save(out / "config.json")
    report = ev.build_metrics(
        params, cfg, dataset.source, dataset.target,
        np.random.default_rng([cfg.seed, _STREAM_METRICS]),
        target_labels=hidden,
    )
    ev.write_metrics(report, out / "metrics.json")
    return report


def _cmd_train(args):
    cfg = _load_config(args)
    out = _outdir(args)
    dataset, hidden, probe = _dataset_and_probe(cfg)
    stride = max(1, cfg.epochs // 10)

    def progress(epoch, row):
        if not args.quiet and (epoch % stride == 0 or epoch == cfg.epochs - 1):
            print(
                f"epoch {epoch:4d}  cls {row['classifier_loss']:.4f}"
                f"  dom {row['domain_loss']:.4f}"
                f"  src acc {row['source_accuracy']:.3f}"
                f"  tgt acc {row['target_accuracy']:.3f}"
            )

    params, history = tr.train(
        cfg, dataset.source, dataset.target,
        target_accuracy_probe=probe, progress=progress,
    )
    history.to_csv(out / "history.csv")
    md.save_checkpoint(params, out / "checkpoint.json")
    report = _write_run_outputs(params, cfg, dataset, hidden, out)
    if not args.quiet:
        print(f"target accuracy {report.target_accuracy:.4f}  "
              f"proxy A-distance {report.proxy_a_distance:.4f}")
        print(f"wrote {out}/history.csv, checkpoint.json, metrics.json, config.json")
    return 0


def _load_run(args):
    cfg = _load_config(args)
    checkpoint = Path(args.config).parent / "checkpoint.json"
    if not checkpoint.exists():
        raise ValueError(
            f"no checkpoint.json next to {args.config}; point --config at a "
            "config written by `cada train`"
        )
    return cfg, md.load_checkpoint(checkpoint)


def _cmd_eval(args):
    cfg, params = _load_run(args)
    out = _outdir(args)
    dataset, hidden, _ = _dataset_and_probe(cfg)
    report = _write_run_outputs(params, cfg, dataset, hidden, out)
    if not args.quiet:
        print(f"source accuracy {report.source_accuracy:.4f}  "
              f"target accuracy {report.target_accuracy:.4f}  "
              f"proxy A-distance {report.proxy_a_distance:.4f}")
    return 0


def _cmd_export_attention(args):
    cfg, params = _load_run(args)
    out = _outdir(args)
    dataset, hidden, _ = _dataset_and_probe(cfg)
    cfg.save(out / "config.json")
    files = ev.export_reports(
        params, cfg, dataset.source, dataset.target, str(out),
        np.random.default_rng([cfg.seed, _STREAM_METRICS]),
        target_labels=hidden,
    )
    if not args.quiet:
        print("wrote " + ", ".join(files))
    return 0


def _cmd_gradcheck(args):
    results = gc.run_all(seed=args.seed if args.seed is not None else 0)
    failed = [name for name, err in results if not err < gc.TOLERANCE]
    if not args.quiet:
        for name, err in results:
            status = "PASS" if err < gc.TOLERANCE else "FAIL"
            print(f"{name:34s} max_rel_err {err:10.3e}  {status}")
    if args.out:
        out = _outdir(args)
        doc = {
            "seed": args.seed if args.seed is not None else 0,
            "tolerance": gc.TOLERANCE,
            "results": {name: err for name, err in results},
        }
        with open(out / "gradcheck.json", "w", encoding="utf-8", newline="\n") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
        with open(out / "config.json", "w", encoding="utf-8", newline="\n") as fh:
            json.dump({"seed": doc["seed"], "tolerance": gc.TOLERANCE}, fh,
                      indent=2, sort_keys=True)
            fh.write("\n")
    if failed:
        print(f"FAILED: {', '.join(failed)}", file=sys.stderr)
        return 1
    return 0


def _single_domain_features(path):
    batch = dt.load_csv(path)
    if len(batch) == 0:
        raise ValueError(f"{path}: no rows")
    if np.unique(batch.domain).size != 1:
        raise ValueError(f"{path}: mixes domains; split the file by domain first")
    return batch.features


def _cmd_adistance(args):
    seed = args.seed if args.seed is not None else 0
    source = _single_domain_features(args.source_csv)
    target = _single_domain_features(args.target_csv)
    rng = np.random.default_rng([seed, _STREAM_DISTANCE])
    eps = min(max(ev.domain_probe_error(source, target, rng), 0.0), 0.5)
    distance = 2.0 * (1.0 - 2.0 * eps)
    print(f"{distance:.17g}")
    if args.out:
        out = _outdir(args)
        doc = {
            "source_csv": str(args.source_csv),
            "target_csv": str(args.target_csv),
            "seed": seed,
            "domain_probe_error": eps,
            "proxy_a_distance": distance,
        }
        with open(out / "adistance.json", "w", encoding="utf-8", newline="\n") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
        with open(out / "config.json", "w", encoding="utf-8", newline="\n") as fh:
            json.dump({"seed": seed, "source_csv": doc["source_csv"],
                       "target_csv": doc["target_csv"]}, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return 0


def _cmd_gen_data(args):
    cfg = _load_config(args)
    out = _outdir(args)
    dataset = dt.dataset_from_spec(cfg.dataset, cfg.seed)
    cfg.save(out / "config.json")
    dt.save_csv(dataset.source, out / "source.csv")
    dt.save_csv(dataset.target, out / "target.csv")
    written = ["source.csv", "target.csv"]
    try:
        hidden = dataset.evaluation_target_labels()
    except ValueError:
        hidden = None
    if hidden is not None:
        dt.save_label_csv(hidden, out / "target_labels.csv")
        written.append("target_labels.csv")
    if not args.quiet:
        print("wrote " + ", ".join(written))
    return 0


def _add_common(sub, config=True):
    if config:
        sub.add_argument("--config", required=True, help="path to a config JSON")
    sub.add_argument("--out", required=False, help="output directory")
    sub.add_argument("--seed", type=int, default=None, help="override the config seed")
    sub.add_argument("--quiet", action="store_true", help="suppress progress output")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="cada",
        description="Certainty-gated attention for adversarial domain adaptation.",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    sub = commands.add_parser("train", help="train a model and write run outputs")
    _add_common(sub)
    sub.set_defaults(func=_cmd_train, needs_out=True)

    sub = commands.add_parser("eval", help="evaluate a checkpoint written by train")
    _add_common(sub)
    sub.set_defaults(func=_cmd_eval, needs_out=True)

    sub = commands.add_parser("gradcheck", help="finite-difference gradient checks")
    _add_common(sub, config=False)
    sub.set_defaults(func=_cmd_gradcheck, needs_out=False)

    sub = commands.add_parser("export-attention",
                              help="export attention/uncertainty/embedding tables")
    _add_common(sub)
    sub.set_defaults(func=_cmd_export_attention, needs_out=True)

    sub = commands.add_parser("adistance",
                              help="proxy A-distance between two single-domain CSVs")
    sub.add_argument("source_csv", help="CSV of source-domain rows")
    sub.add_argument("target_csv", help="CSV of target-domain rows")
    _add_common(sub, config=False)
    sub.set_defaults(func=_cmd_adistance, needs_out=False)

    sub = commands.add_parser("gen-data", help="materialize a dataset spec to CSV")
    _add_common(sub)
    sub.set_defaults(func=_cmd_gen_data, needs_out=True)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.needs_out and not args.out:
        print("error: --out is required for this command", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except (ValueError, KeyError, OSError, FloatingPointError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
