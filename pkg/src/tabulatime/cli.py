"""Command line: ``tabulatime <command> [flags]``."""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import synth, workflow
from .errors import TabulaTimeError
from .io import (load_bundle, load_config, save_bundle, write_csv, write_environment,
                 write_events, write_json)

log = logging.getLogger("tabulatime")


def _config(args):
    cfg = load_config(args.config, window_days=getattr(args, "window_days", None))
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, train={**cfg.train, "seed": args.seed},
                      model={**cfg.model, "seed": args.seed})
    return cfg


def _out_dir(args, cfg=None):
    out = Path(args.out) if args.out else (cfg.path("out") if cfg else Path("."))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _bundle_path(args, out):
    return Path(args.bundle) if getattr(args, "bundle", None) else out / "model.ttmb"


def _load(args):
    cfg = _config(args)
    out = _out_dir(args, cfg)
    bundle = load_bundle(_bundle_path(args, out))
    prepared = workflow.prepare(cfg, workflow.pipeline_from_bundle(bundle))
    return cfg, out, bundle.build_model(), prepared


def cmd_train(args):
    cfg = _config(args)
    out = _out_dir(args, cfg)
    model, prepared, history = workflow.fit(cfg)
    save_bundle(workflow.make_bundle(cfg, model, prepared, history), _bundle_path(args, out))
    write_json(out / "history.json", history.to_dict())
    if prepared.exclusions:
        write_csv(out / "exclusions.csv", ["index", "event_id", "reason"],
                  [(e["index"], e["event_id"], e["reason"]) for e in prepared.exclusions])
    log.info("trained %d epochs (best %d); bundle written to %s",
             history.stopped_epoch, history.best_epoch, _bundle_path(args, out))


def cmd_evaluate(args):
    cfg, out, model, prepared = _load(args)
    report = workflow.evaluate(model, prepared, args.split)
    write_json(out / "metrics.json", report.to_dict())
    if report.roc is not None:
        write_csv(out / "roc.csv", ["fpr", "tpr"], zip(report.roc["fpr"], report.roc["tpr"]))
    if prepared.task == "classification":
        data = prepared.part(args.split)
        gates = model.attention_map(data["tabular"], data["series"])
        labels = ([f"tab_embed_{i}" for i in range(model.config.tab_dim)]
                  if model.config.use_tabular else [])
        if model.config.use_series:
            labels += [f"{ch}_day{model.config.n_patches - t}" for ch in prepared.channels
                       for t in range(model.config.n_patches)]
        ids = [prepared.ids[i] for i in dict(zip(("train", "val", "test"), prepared.splits))[args.split]]
        write_csv(out / "attention.csv", ["event_id"] + labels,
                  ([i] + [float(g) for g in row] for i, row in zip(ids, gates)))
    print(" ".join(f"{k}={v:.4f}" for k, v in report.to_dict().items() if isinstance(v, float)))


def cmd_forecast(args):
    cfg, out, model, prepared = _load(args)
    if prepared.task != "forecasting":
        raise TabulaTimeError("forecast needs a forecasting config")
    idx = dict(zip(("train", "val", "test"), prepared.splits))[args.split]
    data = prepared.part(args.split)
    pred = model.predict(data)
    rows = []
    for s, i in enumerate(idx):
        origin = prepared.times[i]
        for c, ch in enumerate(prepared.channels):
            for h in range(pred.shape[-1]):
                rows.append((str(origin + np.timedelta64(h, "h")), ch, h + 1,
                             float(pred[s, c, h]), float(data["target"][s, c, h])))
    write_csv(out / "forecast.csv", ["timestamp", "channel", "step", "predicted", "actual"], rows)


def cmd_importance(args):
    cfg, out, model, prepared = _load(args)
    if prepared.task != "classification":
        raise TabulaTimeError("importance needs a classification config")
    feats, steps = workflow.importance(model, prepared, args.split, args.metric, args.repeats,
                                       args.seed or 0)
    write_csv(out / "feature_importance.csv", ["feature", "importance", "std"], feats.as_rows())
    if steps is not None:
        write_csv(out / "step_importance.csv", ["day_index", "importance", "std"], steps.as_rows())


def cmd_synth(args):
    out = _out_dir(args)
    seed = 0 if args.seed is None else args.seed
    if args.task == "classification":
        ds = synth.classification_dataset(seed, args.n_events, args.days, args.window_days or 10,
                                          args.missing_rate)
        write_environment(out / "environment.csv", ds.env_times, ds.env_values, ds.channels)
        write_events(out / "events.csv", ds.events, ds.schema)
        config = {"task": "classification", "events": "events.csv",
                  "environment": "environment.csv", "schema": ds.schema.to_dict(),
                  "window_days": args.window_days or 10, "out": "run",
                  "train": {"seed": seed}, "model": {"seed": seed}}
    else:
        times, values, channels = synth.forecasting_dataset(seed, args.days)
        write_environment(out / "environment.csv", times, values, channels)
        config = {"task": "forecasting", "environment": "environment.csv",
                  "window_days": args.window_days or 10, "forecast": {"window_stride": 12},
                  "model": {"horizon": 48, "seed": seed}, "train": {"seed": seed}, "out": "run"}
    write_json(out / "run.json", config)


def cmd_sensitivity(args):
    cfg = _config(args)
    out = _out_dir(args, cfg)
    rows = workflow.imputation_sensitivity(cfg, repeats=args.repeats)
    write_csv(out / "imputation_sensitivity.csv", ["method", "accuracy", "auc", "repeats"],
              [(r["method"], r["accuracy"], r["auc"], r["repeats"]) for r in rows])
    write_json(out / "imputation_sensitivity.json", rows)
    for r in rows:
        print(f"{r['method']:>5}  accuracy={r['accuracy']:.4f}  auc={r['auc']:.4f}")


def build_parser():
    parser = argparse.ArgumentParser(prog="tabulatime", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, bundle=False):
        p.add_argument("--config", required=True)
        p.add_argument("--out")
        p.add_argument("--seed", type=int)
        p.add_argument("--window-days", type=int)
        if bundle:
            p.add_argument("--bundle")
            p.add_argument("--split", choices=("train", "val", "test"), default="test")
        return p

    common(sub.add_parser("train", help="fit a model and save the bundle")).set_defaults(fn=cmd_train)
    common(sub.add_parser("evaluate", help="metrics JSON + ROC CSV"), True).set_defaults(fn=cmd_evaluate)
    common(sub.add_parser("forecast", help="denormalised forecasts CSV"), True).set_defaults(fn=cmd_forecast)
    p = common(sub.add_parser("importance", help="feature and step importance CSVs"), True)
    p.add_argument("--metric", default="accuracy")
    p.add_argument("--repeats", type=int, default=5)
    p.set_defaults(fn=cmd_importance, split="val")
    p = common(sub.add_parser("sensitivity-imputation", help="compare mean / MICE / KNN"))
    p.add_argument("--repeats", type=int, default=1)
    p.set_defaults(fn=cmd_sensitivity)

    p = sub.add_parser("synth", help="write a seeded synthetic dataset and run config")
    p.add_argument("--task", choices=("classification", "forecasting"), required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--window-days", type=int)
    p.add_argument("--n-events", type=int, default=1000)
    p.add_argument("--days", type=int, default=730)
    p.add_argument("--missing-rate", type=float, default=0.0)
    p.set_defaults(fn=cmd_synth)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.fn(args)
    except TabulaTimeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
