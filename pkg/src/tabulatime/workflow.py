"""Run-level orchestration shared by the command line and the acceptance suite."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .interpret import permutation_importance, step_importance
from .io import (ModelBundle, align_windows, ingest_environment, read_events, sliding_windows)
from .metrics import classification_metrics, forecasting_metrics
from .models import PatchRWKVForecaster, TabulaTime
from .tabular import Column, TabularPipeline, TabularSchema
from .training import ADAM_BETA1, ADAM_BETA2, ADAM_EPS, split, take, train

log = logging.getLogger(__name__)


@dataclass
class Prepared:
    """Model-ready arrays plus everything needed to interpret them."""

    task: str
    data: dict                      # arrays keyed tabular/series/labels or series/target
    splits: tuple                   # (train, val, test) index arrays
    pipeline: TabularPipeline | None = None
    channels: list = field(default_factory=list)
    times: np.ndarray | None = None
    ids: list = field(default_factory=list)
    exclusions: list = field(default_factory=list)
    raw_tabular: dict | None = None
    scale_mean: np.ndarray | None = None
    scale_std: np.ndarray | None = None

    def part(self, name):
        idx = dict(zip(("train", "val", "test"), self.splits))[name]
        return take(self.data, idx)


def _load_env(config):
    env = ingest_environment(config.path("environment"))
    if config.channels:
        missing = [c for c in config.channels if c not in env.channels]
        if missing:
            raise DataError(f"environment lacks channels {missing}")
        env = env.select(config.channels)
    return env


def classification_schema(config, summary_names):
    schema = config.tabular_schema()
    if config.include_summary_features:
        schema = TabularSchema(schema.columns + [Column(n) for n in summary_names])
    return schema


def prepare_classification(config, pipeline=None):
    """Align events with their environment windows and encode the tabular side.

    A fresh pipeline is fitted on the training split only; pass a fitted one
    (e.g. from a bundle) to reuse frozen statistics.
    """
    env = _load_env(config)
    base_schema = config.tabular_schema()
    events = read_events(config.path("events"), base_schema, config.label, config.time_column)
    aligned = align_windows(events, env, config.window_days)
    kept = events.take(aligned.kept)
    if len(kept) == 0:
        raise DataError("no event has a complete environmental window")
    raw = dict(kept.columns)
    for j, name in enumerate(aligned.summary_names):
        raw[name] = aligned.summary[:, j]
    schema = classification_schema(config, aligned.summary_names)
    splits = split(len(kept), config.train_config(), timestamps=kept.times)
    if pipeline is None:
        imp = config.imputation
        pipeline = TabularPipeline(schema, imp.get("method", "knn"), imp.get("k", 5),
                                   imp.get("iterations", 10))
        train_rows = {k: v[splits[0]] for k, v in raw.items()}
        pipeline.fit_transform(train_rows)
    tabular = pipeline.transform(raw)
    return Prepared("classification",
                    {"tabular": tabular, "series": aligned.series, "labels": kept.labels},
                    splits, pipeline, list(env.channels), kept.times, kept.ids,
                    aligned.exclusions, raw)


def prepare_forecasting(config):
    env = _load_env(config)
    horizon = config.model_config().horizon
    stride = int(config.forecast.get("window_stride", 24))
    inputs, targets, origins = sliding_windows(env, config.seq_len, horizon, stride)
    if len(inputs) == 0:
        raise DataError("environment too short for one lookback + horizon window")
    splits = split(len(inputs), config.train_config(), timestamps=origins)
    # benchmark-style global z-scoring, statistics from the training span only
    train_end = origins[splits[0]].max()
    mask = env.timestamps < train_end
    mean = np.nanmean(env.values[mask], axis=0)
    std = np.nanstd(env.values[mask], axis=0)
    return Prepared("forecasting", {"series": inputs, "target": targets}, splits, None,
                    list(env.channels), origins, [str(o) for o in origins],
                    scale_mean=mean, scale_std=np.where(std > 0, std, 1.0))


def prepare(config, pipeline=None):
    if config.task == "classification":
        return prepare_classification(config, pipeline)
    return prepare_forecasting(config)


def build_model(config, prepared, **overrides):
    if prepared.task == "classification":
        mc = config.model_config(n_channels=len(prepared.channels),
                                 n_tab_features=prepared.data["tabular"].shape[1], **overrides)
        return TabulaTime(mc)
    mc = config.model_config(n_channels=len(prepared.channels), **overrides)
    return PatchRWKVForecaster(mc)


def fit(config, prepared=None, **overrides):
    """Prepare data (if needed), build and train a model; returns (model, prepared, history)."""
    prepared = prepared or prepare(config)
    model = build_model(config, prepared, **overrides)
    history = train(model, prepared.part("train"), prepared.part("val"), config.train_config())
    return model, prepared, history


def make_bundle(config, model, prepared, history):
    stats_meta, stats = {}, {}
    if prepared.pipeline is not None:
        meta, arrays = prepared.pipeline.state()
        stats_meta["tabular"] = meta
        stats.update({f"tabular.{k}": v for k, v in arrays.items()})
    if prepared.scale_mean is not None:
        stats["scale.mean"] = prepared.scale_mean
        stats["scale.std"] = prepared.scale_std
    kind = "tabulatime" if isinstance(model, TabulaTime) else "forecaster"
    digest = {"epochs": history.stopped_epoch, "best_epoch": history.best_epoch,
              "best_val_loss": history.best_val_loss}
    optimizer = {"name": "adam", "learning_rate": config.train_config().learning_rate,
                 "beta1": ADAM_BETA1, "beta2": ADAM_BETA2, "eps": ADAM_EPS}
    return ModelBundle(kind, model.config.to_dict(), model.state_arrays(), config.to_dict(),
                       stats_meta, stats, digest, optimizer)


def pipeline_from_bundle(bundle):
    if "tabular" not in bundle.stats_meta:
        return None
    arrays = {k[len("tabular."):]: v for k, v in bundle.stats.items() if k.startswith("tabular.")}
    return TabularPipeline.from_state(bundle.stats_meta["tabular"], arrays)


def evaluate(model, prepared, part="test"):
    data = prepared.part(part)
    if prepared.task == "classification":
        proba = model.predict(data)
        return classification_metrics(data["labels"], proba[:, 1])
    pred = model.predict(data)
    return forecasting_metrics(pred, data["target"], prepared.scale_mean, prepared.scale_std)


def persistence_forecast(series, horizon):
    """Repeat the last observed value of every channel ``horizon`` times."""
    return np.repeat(series[..., -1:], horizon, axis=-1)


def importance(model, prepared, part="val", metric="accuracy", repeats=5, seed=0):
    """Tabular permutation importance and day-step importance on one split."""
    data = prepared.part(part)
    tab, series, labels = data["tabular"], data["series"], data["labels"]
    feature_report = permutation_importance(
        lambda x: model.predict_proba(x, series), tab, labels, metric, repeats, seed,
        groups=prepared.pipeline.groups)
    cfg = model.config
    step_report = None
    if cfg.use_series:
        step_report = step_importance(lambda s: model.predict_proba(tab, s), series, labels,
                                      cfg.patch_size, cfg.stride, metric, repeats, seed)
    return feature_report, step_report


def imputation_sensitivity(config, methods=("mean", "mice", "knn"), repeats=1, **overrides):
    """Train and test once per imputation method (and seed); mean accuracy/AUC per method."""
    rows = []
    for method in methods:
        accs, aucs = [], []
        for r in range(repeats):
            cfg = _with(config, imputation={**config.imputation, "method": method},
                        train={**config.train, "seed": config.train.get("seed", 0) + r},
                        model={**config.model, "seed": config.model.get("seed", 0) + r})
            model, prepared, _ = fit(cfg, **overrides)
            report = evaluate(model, prepared)
            accs.append(report.accuracy)
            aucs.append(report.auc)
            log.info("imputation %s repeat %d: accuracy %.4f auc %.4f", method, r, accs[-1], aucs[-1])
        rows.append({"method": method, "accuracy": float(np.mean(accs)),
                     "auc": float(np.mean(aucs)), "repeats": repeats})
    return rows


def _with(config, **changes):
    from dataclasses import replace
    return replace(config, **changes)
