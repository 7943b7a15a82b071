"""Ten days of hourly readings in, two days out, against the naive forecast.

Uses a small encoder so it finishes in seconds; the default size does better
but takes a few minutes.
"""
import tempfile
from dataclasses import replace

import numpy as np

from tabulatime import workflow
from tabulatime.cli import main as cli
from tabulatime.io import load_config
from tabulatime.metrics import forecasting_metrics

out = tempfile.mkdtemp(prefix="tabulatime-demo-")
cli(["synth", "--task", "forecasting", "--seed", "0", "--days", "200", "--out", out])
cfg = load_config(f"{out}/run.json")
cfg = replace(cfg, model={**cfg.model, "embed_dim": 16, "layers": 1},
              train={**cfg.train, "batch_size": 32, "max_epochs": 30, "patience": 5})

model, prepared, _ = workflow.fit(cfg)
test = prepared.part("test")
ours = workflow.evaluate(model, prepared)
naive = forecasting_metrics(workflow.persistence_forecast(test["series"], cfg.model["horizon"]),
                            test["target"], prepared.scale_mean, prepared.scale_std)
print(f"normalised MSE  model {ours.mse:.4f}   persistence {naive.mse:.4f}")
print(f"normalised MAE  model {ours.mae:.4f}   persistence {naive.mae:.4f}")

pred = model.predict(test)
print("\nfirst test window, channel", prepared.channels[0])
for h in (0, 11, 23, 47):
    print(f"  +{h + 1:>2}h  predicted {pred[0, 0, h]:8.3f}  actual {test['target'][0, 0, h]:8.3f}")
print("per-channel MSE:", np.round(((pred - test["target"]) ** 2).mean(axis=(0, 2)), 3))
