"""Clinical-tabular preprocessing: imputation, one-hot encoding, standardisation.

Raw tables are plain ``{column name: 1-d array}`` dicts. Numeric columns are
float arrays with NaN marking missing cells; categorical columns are object
arrays with ``None`` (or NaN) for missing cells.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .autodiff import as_tensor
from .errors import ContractError, DataError, DimensionError, StateError

NUMERIC = "numeric"
CATEGORICAL = "categorical"


@dataclass
class Column:
    name: str
    kind: str = NUMERIC
    categories: list | None = None

    def __post_init__(self):
        if self.kind not in (NUMERIC, CATEGORICAL):
            raise ContractError(f"column {self.name!r}: unknown kind {self.kind!r}")
        if self.categories is not None:
            self.categories = [str(c) for c in self.categories]


@dataclass
class TabularSchema:
    columns: list = field(default_factory=list)

    def __post_init__(self):
        self.columns = [c if isinstance(c, Column) else Column(**c) for c in self.columns]
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise ContractError(f"duplicate column names in schema: {names}")

    @property
    def names(self):
        return [c.name for c in self.columns]

    @property
    def numeric(self):
        return [c.name for c in self.columns if c.kind == NUMERIC]

    @property
    def categorical(self):
        return [c for c in self.columns if c.kind == CATEGORICAL]

    def column(self, name):
        for c in self.columns:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self):
        return [{"name": c.name, "kind": c.kind, "categories": c.categories} for c in self.columns]

    def with_fitted_categories(self, data):
        """Copy of the schema where undeclared category lists come from ``data``."""
        cols = []
        for c in self.columns:
            cats = c.categories
            if c.kind == CATEGORICAL and cats is None:
                observed = {str(v) for v in data[c.name] if not _is_missing_value(v)}
                cats = sorted(observed)
            cols.append(Column(c.name, c.kind, cats))
        return TabularSchema(cols)


def _is_missing_value(v):
    return v is None or (isinstance(v, float) and np.isnan(v)) or v == ""


def missing_mask(data, schema):
    """Boolean (rows, columns) mask of missing cells in schema order."""
    cols = []
    for c in schema.columns:
        col = data[c.name]
        if c.kind == NUMERIC:
            cols.append(np.isnan(np.asarray(col, dtype=np.float64)))
        else:
            cols.append(np.array([_is_missing_value(v) for v in col], dtype=bool))
    return np.stack(cols, axis=1) if cols else np.zeros((0, 0), dtype=bool)


def _copy(data, schema):
    out = {}
    for c in schema.columns:
        if c.kind == NUMERIC:
            out[c.name] = np.array(data[c.name], dtype=np.float64)
        else:
            out[c.name] = np.array([None if _is_missing_value(v) else str(v) for v in data[c.name]],
                                   dtype=object)
    return out


def _n_rows(data, schema):
    lengths = {len(data[c.name]) for c in schema.columns}
    if len(lengths) > 1:
        raise DimensionError(f"columns have unequal lengths {sorted(lengths)}")
    return lengths.pop() if lengths else 0


def _mode(values, categories=None):
    vals, counts = np.unique(np.asarray(values, dtype=str), return_counts=True)
    best = counts.max()
    tied = set(vals[counts == best])
    order = categories if categories is not None else sorted(tied)
    for cat in order:
        if cat in tied:
            return cat
    return sorted(tied)[0]


def _require_observed(data, schema, k=1):
    for c in schema.columns:
        col = data[c.name]
        if c.kind == NUMERIC:
            n_obs = int(np.sum(~np.isnan(col)))
        else:
            n_obs = sum(v is not None for v in col)
        if n_obs == 0:
            raise DataError(f"column {c.name!r} is entirely missing")
        if n_obs < k:
            raise DataError(f"column {c.name!r} has {n_obs} observed values, fewer than k={k}")


# -- mean ----------------------------------------------------------------------

def _fill_values(reference, schema):
    fills = {}
    for c in schema.columns:
        col = reference[c.name]
        if c.kind == NUMERIC:
            fills[c.name] = float(np.nanmean(col))
        else:
            fills[c.name] = _mode([v for v in col if v is not None], c.categories)
    return fills


def impute_mean(data, schema, fills=None):
    """Replace missing numeric cells by the column mean, categorical by the mode."""
    out = _copy(data, schema)
    if fills is None:
        _require_observed(out, schema)
        fills = _fill_values(out, schema)
    for c in schema.columns:
        col = out[c.name]
        if c.kind == NUMERIC:
            col[np.isnan(col)] = fills[c.name]
        else:
            for i, v in enumerate(col):
                if v is None:
                    col[i] = fills[c.name]
    return out


# -- KNN -----------------------------------------------------------------------

def _standardized_numeric(data, names, mean, std):
    x = np.stack([np.asarray(data[n], dtype=np.float64) for n in names], axis=1)
    return (x - mean) / std


def _pairwise_distances(query, reference):
    """Euclidean distance over mutually observed coordinates, rescaled by the observed fraction."""
    p = query.shape[1]
    if p == 0:
        return np.full((query.shape[0], reference.shape[0]), np.inf)
    q_obs, r_obs = ~np.isnan(query), ~np.isnan(reference)
    both = q_obs[:, None, :] & r_obs[None, :, :]
    diff = np.where(both, np.nan_to_num(query)[:, None, :] - np.nan_to_num(reference)[None, :, :], 0.0)
    count = both.sum(axis=-1)
    sq = (diff * diff).sum(axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        dist = np.sqrt(sq * p / count)
    dist[count == 0] = np.inf
    return dist


def impute_knn(data, schema, k=5, reference=None):
    """Fill each missing cell from its ``k`` nearest donor rows.

    Donors are rows of ``reference`` (default: ``data`` itself) that observe
    the cell's column; distance uses the standardised numeric columns the two
    rows both observe. Numeric cells get the donors' mean, categorical cells
    their mode. Equal distances are broken by lower row index.
    """
    if k < 1:
        raise ContractError(f"k must be >= 1, got {k}")
    out = _copy(data, schema)
    ref = _copy(data if reference is None else reference, schema)
    _require_observed(ref, schema, k)
    names = schema.numeric
    ref_num = np.stack([ref[n] for n in names], axis=1) if names else None
    mean = np.nanmean(ref_num, axis=0) if names else 0.0
    std = np.nanstd(ref_num, axis=0) if names else 1.0
    if names:
        std = np.where(std > 0, std, 1.0)
    z_ref = _standardized_numeric(ref, names, mean, std) if names else np.zeros((_n_rows(ref, schema), 0))
    z_q = _standardized_numeric(out, names, mean, std) if names else np.zeros((_n_rows(out, schema), 0))

    mask = missing_mask(out, schema)
    rows = np.flatnonzero(mask.any(axis=1))
    if rows.size == 0:
        return out
    ref_mask = missing_mask(ref, schema)
    dist = _pairwise_distances(z_q[rows], z_ref)
    if reference is None:
        dist[np.arange(rows.size), rows] = np.inf   # a row is never its own donor
    for qi, row in enumerate(rows):
        for j in np.flatnonzero(mask[row]):
            col = schema.columns[j]
            donors = np.flatnonzero(~ref_mask[:, j])
            if reference is None:
                donors = donors[donors != row]
            order = donors[np.argsort(dist[qi, donors], kind="stable")][:k]
            values = ref[col.name][order]
            if col.kind == NUMERIC:
                out[col.name][row] = float(np.mean(values))
            else:
                out[col.name][row] = _mode(values, col.categories)
    return out


# -- MICE ----------------------------------------------------------------------

def _fit_regression(x, target, predictors, rows):
    design = np.column_stack([np.ones(rows.sum())] + [x[rows, p] for p in predictors])
    coef, _, rank, _ = np.linalg.lstsq(design, x[rows, target], rcond=None)
    if rank < design.shape[1]:
        return None
    return coef


def _predict(x, coef, predictors, rows):
    design = np.column_stack([np.ones(rows.sum())] + [x[rows, p] for p in predictors])
    return design @ coef


def _mice_fit(x, mask, iterations):
    p = x.shape[1]
    means = np.nanmean(x, axis=0)
    x = np.where(mask, means, x)
    coefs = [None] * p
    for _ in range(iterations):
        for j in range(p):
            if not mask[:, j].any():
                continue
            others = [i for i in range(p) if i != j]
            coef = _fit_regression(x, j, others, ~mask[:, j])
            if coef is None:
                warnings.warn(f"singular regression design for column {j}; using its mean")
                x[mask[:, j], j] = means[j]
            else:
                x[mask[:, j], j] = _predict(x, coef, others, mask[:, j])
    for j in range(p):
        others = [i for i in range(p) if i != j]
        coefs[j] = _fit_regression(x, j, others, ~mask[:, j])
    return x, means, coefs


def _mice_apply(x, mask, means, coefs, iterations):
    p = x.shape[1]
    x = np.where(mask, means, x)
    for _ in range(iterations):
        for j in range(p):
            if not mask[:, j].any():
                continue
            if coefs[j] is None:
                x[mask[:, j], j] = means[j]
                continue
            others = [i for i in range(p) if i != j]
            x[mask[:, j], j] = _predict(x, coefs[j], others, mask[:, j])
    return x


def impute_mice(data, schema, iterations=10):
    """Round-robin linear-regression imputation of numeric columns.

    Starts from column means, then ``iterations`` sweeps regress every
    incomplete column on all other numeric columns. Categorical columns fall
    back to the mode.
    """
    if iterations < 1:
        raise ContractError(f"MICE needs at least one iteration, got {iterations}")
    out = _copy(data, schema)
    _require_observed(out, schema)
    names = schema.numeric
    if names:
        x = np.stack([out[n] for n in names], axis=1)
        filled, _, _ = _mice_fit(x, np.isnan(x), iterations)
        for i, n in enumerate(names):
            out[n] = filled[:, i]
    cat_schema = TabularSchema(schema.categorical)
    out.update(impute_mean({c.name: out[c.name] for c in cat_schema.columns}, cat_schema))
    return out


class Imputer:
    """Fitted imputation state, reusable on unseen rows without refitting."""

    METHODS = ("mean", "knn", "mice")

    def __init__(self, method="knn", k=5, iterations=10):
        if method not in self.METHODS:
            raise ContractError(f"unknown imputation method {method!r}")
        self.method, self.k, self.iterations = method, k, iterations
        self.schema = None
        self.reference = None
        self.fills = None
        self.mice_means = None
        self.mice_coefs = None

    def fit_transform(self, data, schema):
        self.schema = schema
        clean = _copy(data, schema)
        _require_observed(clean, schema, self.k if self.method == "knn" else 1)
        self.fills = _fill_values(clean, schema)
        if self.method == "mean":
            return impute_mean(clean, schema, self.fills)
        if self.method == "knn":
            self.reference = clean
            return impute_knn(clean, schema, self.k)
        out = impute_mean(clean, schema, self.fills)
        names = schema.numeric
        if names:
            x = np.stack([clean[n] for n in names], axis=1)
            filled, self.mice_means, self.mice_coefs = _mice_fit(x, np.isnan(x), self.iterations)
            for i, n in enumerate(names):
                out[n] = filled[:, i]
        return out

    def transform(self, data):
        if self.schema is None:
            raise StateError("imputer used before fit")
        schema = self.schema
        if self.method == "mean":
            return impute_mean(data, schema, self.fills)
        if self.method == "knn":
            return impute_knn(data, schema, self.k, reference=self.reference)
        clean = _copy(data, schema)
        out = impute_mean(clean, schema, self.fills)
        names = schema.numeric
        if names and self.mice_means is not None:
            x = np.stack([clean[n] for n in names], axis=1)
            filled = _mice_apply(x, np.isnan(x), self.mice_means, self.mice_coefs, self.iterations)
            for i, n in enumerate(names):
                out[n] = filled[:, i]
        return out

    def state(self):
        meta = {"method": self.method, "k": self.k, "iterations": self.iterations,
                "fills": self.fills}
        arrays = {}
        if self.reference is not None:
            meta["reference_categorical"] = {
                c.name: [v for v in self.reference[c.name]] for c in self.schema.categorical}
            for n in self.schema.numeric:
                arrays[f"knn_ref.{n}"] = self.reference[n]
        if self.mice_means is not None:
            arrays["mice.means"] = self.mice_means
            meta["mice_singular"] = [c is None for c in self.mice_coefs]
            for j, coef in enumerate(self.mice_coefs):
                if coef is not None:
                    arrays[f"mice.coef.{j}"] = coef
        return meta, arrays

    @classmethod
    def from_state(cls, meta, arrays, schema):
        imp = cls(meta["method"], meta["k"], meta["iterations"])
        imp.schema = schema
        imp.fills = meta["fills"]
        if "reference_categorical" in meta:
            ref = {n: np.asarray(arrays[f"knn_ref.{n}"], dtype=np.float64) for n in schema.numeric}
            for c in schema.categorical:
                ref[c.name] = np.array(meta["reference_categorical"][c.name], dtype=object)
            imp.reference = ref
        if "mice.means" in arrays:
            imp.mice_means = np.asarray(arrays["mice.means"])
            imp.mice_coefs = [None if singular else np.asarray(arrays[f"mice.coef.{j}"])
                              for j, singular in enumerate(meta["mice_singular"])]
        return imp


# -- encoding and standardisation ---------------------------------------------

def encoded_names(schema):
    names = []
    for c in schema.columns:
        if c.kind == NUMERIC:
            names.append(c.name)
        else:
            names.extend(f"{c.name}={cat}" for cat in c.categories)
    return names


def column_groups(schema):
    """Map every raw column to the indices of its encoded columns."""
    groups, pos = {}, 0
    for c in schema.columns:
        width = 1 if c.kind == NUMERIC else len(c.categories)
        groups[c.name] = list(range(pos, pos + width))
        pos += width
    return groups


def encode_onehot(data, schema):
    """Numeric columns pass through; each categorical column becomes indicator columns."""
    n = _n_rows(data, schema)
    blocks = []
    for c in schema.columns:
        col = data[c.name]
        if c.kind == NUMERIC:
            blocks.append(np.asarray(col, dtype=np.float64).reshape(n, 1))
            continue
        if c.categories is None:
            raise StateError(f"categorical column {c.name!r} has no fitted categories")
        index = {cat: i for i, cat in enumerate(c.categories)}
        block = np.zeros((n, len(c.categories)))
        for r, v in enumerate(col):
            key = None if _is_missing_value(v) else str(v)
            if key not in index:
                raise DataError(f"column {c.name!r}: unseen category {v!r}")
            block[r, index[key]] = 1.0
        blocks.append(block)
    return np.concatenate(blocks, axis=1) if blocks else np.zeros((n, 0))


@dataclass
class Standardizer:
    """Zero-mean unit-variance scaling of selected encoded columns."""

    columns: np.ndarray
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, x, columns):
        columns = np.asarray(columns, dtype=np.int64)
        sub = x[:, columns]
        mean = sub.mean(axis=0)
        std = sub.std(axis=0)
        return cls(columns, mean, np.where(std > 1e-12, std, 1.0))

    def transform(self, x):
        out = np.array(x, dtype=np.float64)
        out[:, self.columns] = (out[:, self.columns] - self.mean) / self.std
        return out


class TabularPipeline:
    """impute -> one-hot -> standardise, fitted once on the training split.

    Refitting a fitted pipeline raises, so statistics from another split can
    never leak into the frozen transform.
    """

    def __init__(self, schema, method="knn", k=5, iterations=10):
        self.schema = schema
        self.imputer = Imputer(method, k, iterations)
        self.standardizer = None

    @property
    def fitted(self):
        return self.standardizer is not None

    @property
    def feature_names(self):
        return encoded_names(self.schema)

    @property
    def groups(self):
        return column_groups(self.schema)

    def fit_transform(self, data):
        if self.fitted:
            raise StateError("pipeline already fitted; create a new one to refit")
        self.schema = self.schema.with_fitted_categories(data)
        completed = self.imputer.fit_transform(data, self.schema)
        encoded = encode_onehot(completed, self.schema)
        numeric_idx = [self.groups[n][0] for n in self.schema.numeric]
        self.standardizer = Standardizer.fit(encoded, numeric_idx)
        return self.standardizer.transform(encoded)

    def transform(self, data):
        if not self.fitted:
            raise StateError("pipeline used before fit")
        completed = self.imputer.transform(data)
        return self.standardizer.transform(encode_onehot(completed, self.schema))

    def state(self):
        meta, arrays = self.imputer.state()
        arrays = {f"imputer.{k}": v for k, v in arrays.items()}
        arrays["standardizer.columns"] = self.standardizer.columns.astype(np.float64)
        arrays["standardizer.mean"] = self.standardizer.mean
        arrays["standardizer.std"] = self.standardizer.std
        return {"schema": self.schema.to_dict(), "imputer": meta}, arrays

    @classmethod
    def from_state(cls, meta, arrays):
        schema = TabularSchema(meta["schema"])
        imp_arrays = {k[len("imputer."):]: v for k, v in arrays.items() if k.startswith("imputer.")}
        pipe = cls(schema)
        pipe.imputer = Imputer.from_state(meta["imputer"], imp_arrays, schema)
        pipe.standardizer = Standardizer(arrays["standardizer.columns"].astype(np.int64),
                                         np.asarray(arrays["standardizer.mean"]),
                                         np.asarray(arrays["standardizer.std"]))
        return pipe


def embed_tabular(encoded, mlp):
    """Dense embedding of encoded rows through a two-layer perceptron."""
    x = as_tensor(encoded)
    if x.ndim != 2 or x.shape[1] != mlp.w1.shape[0]:
        raise DimensionError(f"encoded rows {x.shape} do not match MLP input {mlp.w1.shape[0]}")
    return mlp(x)


# -- environmental window summaries --------------------------------------------

_STAT_FUNCS = {"max": np.max, "avg": np.mean, "min": np.min}


def summary_stats_for(channel):
    """Which statistics summarise a channel: temperature uses avg/min, pollutants max/avg."""
    return ("avg", "min") if channel.lower().startswith("temp") else ("max", "avg")


def summary_feature_names(channels):
    return [f"{ch}{stat}" for ch in channels for stat in summary_stats_for(ch)]


def summary_features(window, channels):
    """Summary statistics of one (N, L) window, ordered as ``summary_feature_names``."""
    window = np.asarray(window, dtype=np.float64)
    return np.array([_STAT_FUNCS[stat](window[i]) for i, ch in enumerate(channels)
                     for stat in summary_stats_for(ch)])
