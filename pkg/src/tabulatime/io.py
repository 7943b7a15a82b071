"""File formats: environment/event CSVs, run configs and the binary model bundle."""
from __future__ import annotations

import csv
import json
import struct
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, FormatError
from .models import ModelConfig
from .tabular import TabularSchema, summary_feature_names, summary_features
from .training import TrainConfig

MISSING_TOKENS = {"", "na", "nan", "null", "none"}
MAX_INTERPOLATED_GAP = 3
HOUR = np.timedelta64(1, "h")


# -- environment series --------------------------------------------------------

@dataclass
class EnvTable:
    """Hourly environment table on a gap-free grid.

    Cells of gaps longer than the interpolation limit stay NaN; ``gaps``
    lists every gap found as dicts (channel, start, hours, action).
    """

    timestamps: np.ndarray      # datetime64[h], strictly hourly
    values: np.ndarray          # (hours, N)
    channels: list
    gaps: list = field(default_factory=list)

    def __len__(self):
        return len(self.timestamps)

    def select(self, channels):
        idx = [self.channels.index(c) for c in channels]
        return EnvTable(self.timestamps, self.values[:, idx], list(channels),
                        [g for g in self.gaps if g["channel"] in channels])


def parse_hour(text, line=None):
    """Parse an ISO-8601 timestamp, truncated to the hour."""
    try:
        return np.datetime64(text.strip().replace(" ", "T"), "s").astype("datetime64[h]")
    except ValueError:
        where = f" on line {line}" if line is not None else ""
        raise DataError(f"unparseable timestamp {text!r}{where}") from None


def _parse_float(text):
    if text.strip().lower() in MISSING_TOKENS:
        return np.nan
    return float(text)


def ingest_environment(path, max_gap=MAX_INTERPOLATED_GAP):
    """Read ``timestamp,<channel>...`` hourly CSV into an :class:`EnvTable`.

    Rows are sorted; duplicate hours are an error. Runs of missing hours (or
    empty cells) up to ``max_gap`` long are linearly interpolated, longer ones
    are left missing and recorded as excluded.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0].strip().lower() != "timestamp":
            raise DataError(f"{path}: header must start with 'timestamp'")
        channels = [h.strip() for h in header[1:]]
        stamps, rows, lines = [], [], []
        for line_no, rec in enumerate(reader, start=2):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != len(header):
                raise DataError(f"{path}: line {line_no} has {len(rec)} fields, expected {len(header)}")
            stamps.append(parse_hour(rec[0], line_no))
            try:
                rows.append([_parse_float(c) for c in rec[1:]])
            except ValueError:
                raise DataError(f"{path}: non-numeric value on line {line_no}") from None
            lines.append(line_no)
    if not stamps:
        raise DataError(f"{path}: no data rows")
    stamps = np.array(stamps, dtype="datetime64[h]")
    order = np.argsort(stamps, kind="stable")
    sorted_stamps = stamps[order]
    dup = np.flatnonzero(np.diff(sorted_stamps) == np.timedelta64(0, "h"))
    if dup.size:
        raise DataError(f"{path}: duplicate timestamp {sorted_stamps[dup[0]]} on line "
                        f"{lines[order[dup[0] + 1]]}")
    start, end = sorted_stamps[0], sorted_stamps[-1]
    n_hours = int((end - start) / HOUR) + 1
    grid = start + np.arange(n_hours) * HOUR
    values = np.full((n_hours, len(channels)), np.nan)
    values[((sorted_stamps - start) / HOUR).astype(int)] = np.asarray(rows)[order]
    gaps = []
    for j, ch in enumerate(channels):
        gaps.extend(_fill_short_gaps(values[:, j], grid, ch, max_gap))
    return EnvTable(grid, values, channels, gaps)


def _fill_short_gaps(col, grid, channel, max_gap):
    missing = np.isnan(col)
    report = []
    if not missing.any():
        return report
    edges = np.diff(np.r_[0, missing.astype(int), 0])
    starts, stops = np.flatnonzero(edges == 1), np.flatnonzero(edges == -1)
    for a, b in zip(starts, stops):
        length = b - a
        inside = a > 0 and b < len(col)
        if inside and length <= max_gap:
            lo, hi = col[a - 1], col[b]
            frac = np.arange(1, length + 1) / (length + 1)
            col[a:b] = lo + frac * (hi - lo)
            action = "interpolated"
        else:
            action = "excluded"
        report.append({"channel": channel, "start": str(grid[a]), "hours": int(length),
                       "action": action})
    return report


def write_environment(path, timestamps, values, channels):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp"] + list(channels))
        for ts, row in zip(timestamps, values):
            w.writerow([str(np.datetime64(ts, "h")) + ":00"] +
                       ["" if np.isnan(v) else f"{v:.6g}" for v in row])


# -- events ------------------------------------------------------------------

@dataclass
class Events:
    columns: dict               # raw tabular columns keyed by schema name
    times: np.ndarray           # datetime64[h] admission hour
    labels: np.ndarray | None
    ids: list

    def __len__(self):
        return len(self.times)

    def take(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return Events({k: v[idx] for k, v in self.columns.items()}, self.times[idx],
                      None if self.labels is None else self.labels[idx],
                      [self.ids[i] for i in idx])


def read_events(path, schema, label="label", time_column="admission_time", id_column="event_id"):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        needed = [time_column] + schema.names + ([label] if label else [])
        missing = [c for c in needed if c not in (reader.fieldnames or [])]
        if missing:
            raise DataError(f"{path}: missing columns {missing}")
        records = list(reader)
    times, cols, labels, ids = [], {n: [] for n in schema.names}, [], []
    for line_no, rec in enumerate(records, start=2):
        times.append(parse_hour(rec[time_column], line_no))
        ids.append(rec.get(id_column) or str(line_no - 2))
        for c in schema.columns:
            raw = rec[c.name].strip()
            if c.kind == "numeric":
                try:
                    cols[c.name].append(_parse_float(raw))
                except ValueError:
                    raise DataError(f"{path}: non-numeric {c.name!r} on line {line_no}") from None
            else:
                cols[c.name].append(None if raw.lower() in MISSING_TOKENS else raw)
        if label:
            labels.append(int(float(rec[label])))
    columns = {}
    for c in schema.columns:
        dtype = np.float64 if c.kind == "numeric" else object
        columns[c.name] = np.array(cols[c.name], dtype=dtype)
    return Events(columns, np.array(times, dtype="datetime64[h]"),
                  np.array(labels, dtype=np.int64) if label else None, ids)


def write_events(path, events, schema, label="label", time_column="admission_time"):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["event_id", time_column] + schema.names + ([label] if label else []))
        for i in range(len(events)):
            row = [events.ids[i], str(events.times[i]) + ":00"]
            for c in schema.columns:
                v = events.columns[c.name][i]
                if c.kind == "numeric":
                    row.append("" if np.isnan(v) else f"{v:.6g}")
                else:
                    row.append("" if v is None else v)
            if label:
                row.append(int(events.labels[i]))
            w.writerow(row)


# -- alignment -----------------------------------------------------------------

@dataclass
class AlignedEvents:
    series: np.ndarray          # (n, N, L)
    summary: np.ndarray         # (n, n_summary)
    summary_names: list
    kept: np.ndarray            # indices into the input events
    exclusions: list            # dicts: index, event_id, reason


def align_windows(events, env, window_days):
    """Cut, for each event, the ``window_days * 24`` hours strictly before its admission hour.

    Events whose window leaves the environment coverage or touches an
    unfilled gap are excluded and reported, never dropped silently.
    """
    length = int(window_days) * 24
    start = env.timestamps[0]
    n_hours = len(env)
    series, summary, kept, exclusions = [], [], [], []
    for i, t in enumerate(events.times):
        end_idx = int((t - start) / HOUR)      # index of the admission hour
        begin = end_idx - length
        if begin < 0:
            reason = "window starts before environmental coverage"
        elif end_idx > n_hours:
            reason = "window ends after environmental coverage"
        else:
            window = env.values[begin:end_idx].T
            if np.isnan(window).any():
                reason = "window overlaps an unfilled environmental gap"
            else:
                series.append(window)
                summary.append(summary_features(window, env.channels))
                kept.append(i)
                continue
        exclusions.append({"index": i, "event_id": events.ids[i], "reason": reason})
    n_ch = len(env.channels)
    names = summary_feature_names(env.channels)
    return AlignedEvents(
        np.array(series).reshape(-1, n_ch, length),
        np.array(summary).reshape(-1, len(names)),
        names, np.array(kept, dtype=np.int64), exclusions)


def sliding_windows(env, lookback, horizon, stride):
    """(inputs (n, N, lookback), targets (n, N, horizon), origin timestamps) over gap-free spans."""
    values = env.values
    inputs, targets, origins = [], [], []
    for s in range(0, len(env) - lookback - horizon + 1, stride):
        block = values[s:s + lookback + horizon]
        if np.isnan(block).any():
            continue
        inputs.append(block[:lookback].T)
        targets.append(block[lookback:].T)
        origins.append(env.timestamps[s + lookback])
    n = len(env.channels)
    return (np.array(inputs).reshape(-1, n, lookback), np.array(targets).reshape(-1, n, horizon),
            np.array(origins, dtype="datetime64[h]"))


# -- run configuration ---------------------------------------------------------

@dataclass
class RunConfig:
    """Everything one run needs; relative paths resolve against ``base_dir``."""

    task: str = "classification"
    events: str | None = None
    environment: str | None = None
    schema: list = field(default_factory=list)
    label: str = "label"
    time_column: str = "admission_time"
    channels: list | None = None
    window_days: int = 10
    include_summary_features: bool = True
    imputation: dict = field(default_factory=lambda: {"method": "knn", "k": 5, "iterations": 10})
    forecast: dict = field(default_factory=lambda: {"window_stride": 24})
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    out: str = "out"
    base_dir: str = "."

    @property
    def seq_len(self):
        return int(self.window_days) * 24

    def path(self, name):
        value = getattr(self, name)
        if value is None:
            return None
        p = Path(value)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def tabular_schema(self):
        return TabularSchema(self.schema)

    def train_config(self):
        return TrainConfig(**{"task": self.task, **self.train})

    def model_config(self, **overrides):
        return ModelConfig(**{"seq_len": self.seq_len, **self.model, **overrides})

    def to_dict(self):
        return asdict(self)


def load_config(path, **overrides):
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise DataError(f"config file {path} does not exist") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"config file {path} is not valid JSON: {exc}") from None
    raw.setdefault("base_dir", str(path.parent))
    raw.update({k: v for k, v in overrides.items() if v is not None})
    cfg = RunConfig(**raw)
    needed = ["environment"] + (["events"] if cfg.task == "classification" else [])
    for name in needed:
        p = cfg.path(name)
        if p is None or not p.exists():
            raise DataError(f"config {name!r} path {p} does not exist")
    if cfg.task not in ("classification", "forecasting"):
        raise DataError(f"unknown task {cfg.task!r}")
    return cfg


# -- model bundle ----------------------------------------------------------------

MAGIC = b"TTMB"
FORMAT_VERSION = 1


@dataclass
class ModelBundle:
    model_kind: str
    model_config: dict
    params: dict                          # name -> ndarray
    run_config: dict = field(default_factory=dict)
    stats_meta: dict = field(default_factory=dict)
    stats: dict = field(default_factory=dict)   # name -> ndarray
    history: dict = field(default_factory=dict)
    optimizer: dict = field(default_factory=dict)
    version: int = FORMAT_VERSION

    def build_model(self):
        from .models import MODELS
        model = MODELS[self.model_kind](ModelConfig(**self.model_config))
        model.load_state_arrays(self.params)
        return model


def _pack_tensor(name, arr):
    arr = np.ascontiguousarray(arr, dtype="<f8")
    key = name.encode()
    head = struct.pack("<H", len(key)) + key + struct.pack("<B", arr.ndim)
    head += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    payload = arr.tobytes()
    return head + struct.pack("<Q", len(payload)) + payload


def save_bundle(bundle, path):
    header = {
        "model_kind": bundle.model_kind, "model_config": bundle.model_config,
        "run_config": bundle.run_config, "stats_meta": bundle.stats_meta,
        "history": bundle.history, "optimizer": bundle.optimizer,
    }
    head = json.dumps(header, sort_keys=True).encode()
    tensors = [("param/" + k, v) for k, v in sorted(bundle.params.items())]
    tensors += [("stat/" + k, v) for k, v in sorted(bundle.stats.items())]
    body = MAGIC + struct.pack("<HQ", FORMAT_VERSION, len(head)) + head
    body += struct.pack("<I", len(tensors)) + b"".join(_pack_tensor(k, v) for k, v in tensors)
    body += struct.pack("<I", zlib.crc32(body))
    Path(path).write_bytes(body)


class _Reader:
    def __init__(self, buf):
        self.buf, self.pos = buf, 0

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise FormatError("bundle is truncated")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_bundle(path):
    buf = Path(path).read_bytes()
    r = _Reader(buf)
    if r.take(4) != MAGIC:
        raise FormatError("not a model bundle (bad magic)")
    version, head_len = r.unpack("<HQ")
    if version != FORMAT_VERSION:
        raise FormatError(f"bundle format version {version} is incompatible with {FORMAT_VERSION}")
    try:
        header = json.loads(r.take(head_len).decode())
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise FormatError("bundle header is corrupt") from None
    (count,) = r.unpack("<I")
    params, stats = {}, {}
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode()
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}Q") if ndim else ()
        (nbytes,) = r.unpack("<Q")
        if nbytes != 8 * int(np.prod(shape, dtype=np.int64)):
            raise FormatError(f"tensor {name}: payload length {nbytes} does not match shape {shape}")
        arr = np.frombuffer(r.take(nbytes), dtype="<f8").reshape(shape).astype(np.float64)
        kind, _, key = name.partition("/")
        (params if kind == "param" else stats)[key] = arr
    end = r.pos
    (crc,) = r.unpack("<I")
    if crc != zlib.crc32(buf[:end]):
        raise FormatError("bundle checksum mismatch")
    if r.pos != len(buf):
        raise FormatError("trailing bytes after bundle")
    return ModelBundle(header["model_kind"], header["model_config"], params, header["run_config"],
                       header["stats_meta"], stats, header["history"], header["optimizer"], version)


# -- small writers ---------------------------------------------------------------

def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([f"{v:.10g}" if isinstance(v, float) else v for v in row])
