"""Seeded synthetic datasets shaped like the clinical + air-quality setting.

``classification_dataset`` builds an hourly environment record and a table of
admissions whose binary label depends jointly on one clinical marker and on
the relative PM10 level of the second day before admission.
``forecasting_dataset`` builds AR(2) series with daily seasonality.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .io import Events
from .tabular import TabularSchema

START = np.datetime64("2016-01-01T00", "h")
CHANNELS = ["PM10", "NO", "NO2", "NOx", "Temperature"]
POLLUTANTS = ["PM10", "NO2", "NOx", "NO"]

CLASSIFICATION_SCHEMA = [
    {"name": "systolic_bp", "kind": "numeric"},
    {"name": "pulse_pressure", "kind": "numeric"},
    {"name": "age", "kind": "numeric"},
    {"name": "creatinine", "kind": "numeric"},
    {"name": "bmi", "kind": "numeric"},
    {"name": "symptom_to_admission", "kind": "numeric"},
    {"name": "sex", "kind": "categorical", "categories": ["Male", "Female"]},
    {"name": "smoking", "kind": "categorical", "categories": ["Ex", "Current", "Never"]},
    {"name": "diabetes", "kind": "categorical", "categories": ["Yes", "No"]},
]
INFORMATIVE_FEATURE = "systolic_bp"
INFORMATIVE_DAY = 2


def _ar1(rng, n, phi, scale):
    noise = rng.normal(scale=scale, size=n)
    out = np.empty(n)
    acc = 0.0
    for i in range(n):
        acc = phi * acc + noise[i]
        out[i] = acc
    return out


def environment(rng, days):
    """Hourly (hours, 5) array for PM10, NO, NO2, NOx and temperature."""
    hours = days * 24
    h = np.arange(hours)
    daily = np.sin(2 * np.pi * h / 24)
    # day-level excursions make some days markedly dirtier than their neighbours
    day_level = np.repeat(rng.normal(size=days), 24)
    pm10 = 25 + 7 * day_level + 3 * daily + _ar1(rng, hours, 0.8, 1.5)
    no2 = 30 + 5 * np.repeat(rng.normal(size=days), 24) + 6 * np.sin(2 * np.pi * (h - 7) / 24) \
        + _ar1(rng, hours, 0.85, 2.0)
    no = 15 + 0.4 * (no2 - 30) + 4 * np.repeat(rng.normal(size=days), 24) + _ar1(rng, hours, 0.7, 1.5)
    nox = no2 + 1.5 * no + _ar1(rng, hours, 0.5, 1.0)
    temp = 10 + 6 * np.sin(2 * np.pi * (h / 24 - 100) / 365) + 3 * np.sin(2 * np.pi * (h - 9) / 24) \
        + _ar1(rng, hours, 0.95, 0.4)
    return np.stack([pm10, no, no2, nox, temp], axis=1)


@dataclass
class ClassificationData:
    env_times: np.ndarray
    env_values: np.ndarray
    channels: list
    events: Events
    schema: TabularSchema
    day_signal: np.ndarray     # standardised day-2 relative PM10 level per event


def classification_dataset(seed=0, n_events=1000, days=730, window_days=10, missing_rate=0.0):
    rng = np.random.default_rng(seed)
    env = environment(rng, days)
    times = START + np.arange(days * 24) * np.timedelta64(1, "h")
    length = window_days * 24
    first = length + 24
    admit_idx = np.sort(rng.integers(first, days * 24, size=n_events))

    pm10 = env[:, 0]
    day_mean = np.empty(n_events)
    for i, a in enumerate(admit_idx):
        w = pm10[a - length:a]
        z = (w - w.mean()) / max(w.std(), 1e-5)
        lo = length - 24 * INFORMATIVE_DAY
        day_mean[i] = z[lo:lo + 24].mean()
    day_signal = (day_mean - day_mean.mean()) / day_mean.std()

    marker = rng.normal(size=n_events)
    labels = (marker + day_signal > 0).astype(np.int64)

    cols = {
        "systolic_bp": 137.5 + 27.1 * marker,
        "pulse_pressure": 55 + 12 * (0.7 * marker + np.sqrt(1 - 0.49) * rng.normal(size=n_events)),
        "age": rng.normal(71.1, 13.7, n_events),
        "creatinine": rng.lognormal(np.log(100), 0.4, n_events),
        "bmi": rng.normal(27.5, 5.0, n_events),
        "symptom_to_admission": rng.normal(10, 30, n_events),
        "sex": rng.choice(["Male", "Female"], n_events, p=[0.65, 0.35]).astype(object),
        "smoking": rng.choice(["Ex", "Current", "Never"], n_events, p=[0.39, 0.26, 0.35]).astype(object),
        "diabetes": rng.choice(["Yes", "No"], n_events, p=[0.3, 0.7]).astype(object),
    }
    schema = TabularSchema(CLASSIFICATION_SCHEMA)
    if missing_rate > 0:
        for c in schema.columns:
            hole = rng.random(n_events) < missing_rate
            if c.kind == "numeric":
                cols[c.name] = np.where(hole, np.nan, cols[c.name])
            else:
                cols[c.name] = np.where(hole, None, cols[c.name]).astype(object)
    events = Events(cols, times[admit_idx], labels, [f"E{i:05d}" for i in range(n_events)])
    return ClassificationData(times, env, list(CHANNELS), events, schema, day_signal)


def forecasting_dataset(seed=0, days=200, channels=None):
    """AR(2) + daily seasonal hourly series, one column per pollutant."""
    rng = np.random.default_rng(seed)
    channels = list(channels or POLLUTANTS)
    hours = days * 24
    h = np.arange(hours)
    cols = []
    for j, _ in enumerate(channels):
        noise = rng.normal(scale=1.0, size=hours)
        ar = np.zeros(hours)
        for t in range(2, hours):
            ar[t] = 1.2 * ar[t - 1] - 0.5 * ar[t - 2] + noise[t]
        phase = rng.uniform(0, 24)
        seasonal = 8 * np.sin(2 * np.pi * (h - phase) / 24) + 3 * np.sin(4 * np.pi * (h - phase) / 24)
        cols.append(20 + 5 * j + seasonal + ar)
    times = START + h * np.timedelta64(1, "h")
    return times, np.stack(cols, axis=1), channels
