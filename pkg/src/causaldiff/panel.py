"""Panel ingestion, spatial and bipartite network weights, and derived columns.

Long-format panels keyed by ``(unit, time)``. Weight matrices have a zero
diagonal and are row-standardized so the derived treatment column is a
weighted average of neighbors' outcomes; units without neighbors get a
missing treatment value rather than zero.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
import pandas as pd
from scipy.spatial.distance import cdist

__all__ = [
    "DataError",
    "PanelDataset",
    "PanelSchema",
    "WeightMatrix",
    "add_lags",
    "add_shifted_column",
    "build_bipartite_igo_weights",
    "build_inverse_distance_weights",
    "compute_treatment",
    "load_panel",
    "load_coordinates",
    "load_edgelist_weights",
    "load_memberships",
    "neighbor_summaries",
    "attach_neighbor_summaries",
]

FLOAT_FORMAT = "%.17g"  # lossless float round-trips through CSV


class DataError(ValueError):
    """Invalid panel, weight, or membership data."""


@dataclass(frozen=True)
class PanelSchema:
    unit: str
    time: str
    outcome: str
    cluster: Optional[str] = None
    numeric: tuple = ()
    categorical: tuple = ()
    time_polynomials: int = 0

    def __post_init__(self):
        object.__setattr__(self, "numeric", tuple(self.numeric))
        object.__setattr__(self, "categorical", tuple(self.categorical))

    @property
    def mandatory(self) -> tuple:
        cols = [self.unit, self.time, self.outcome, *self.numeric, *self.categorical]
        if self.cluster and self.cluster not in cols:
            cols.append(self.cluster)
        return tuple(cols)

    @classmethod
    def from_dict(cls, payload: Mapping) -> "PanelSchema":
        return cls(
            unit=payload["unit"],
            time=payload["time"],
            outcome=payload["outcome"],
            cluster=payload.get("cluster"),
            numeric=tuple(payload.get("numeric", ())),
            categorical=tuple(payload.get("categorical", ())),
            time_polynomials=int(payload.get("time_polynomials", 0)),
        )

    def to_dict(self) -> dict:
        return {
            "unit": self.unit,
            "time": self.time,
            "outcome": self.outcome,
            "cluster": self.cluster,
            "numeric": list(self.numeric),
            "categorical": list(self.categorical),
            "time_polynomials": self.time_polynomials,
        }


class PanelDataset:
    """Validated long-format panel.

    The frame is sorted by ``(unit, time)`` and never mutated in place;
    column-adding helpers return new datasets, so constructed instances are
    safe to share across threads. ``gaps`` lists missing interior periods
    per unit and ``flags`` records rows whose derived values could not be
    computed.
    """

    def __init__(self, frame: pd.DataFrame, schema: PanelSchema, flags: tuple = ()):
        self.schema = schema
        missing = [c for c in schema.mandatory if c not in frame.columns]
        if missing:
            raise DataError(f"missing mandatory columns: {missing}")
        frame = frame.sort_values([schema.unit, schema.time], kind="mergesort")
        frame = frame.reset_index(drop=True)
        dup = frame.duplicated([schema.unit, schema.time])
        if dup.any():
            first = frame.loc[dup, [schema.unit, schema.time]].iloc[0]
            u, t = first[schema.unit], first[schema.time]
            u = u.item() if hasattr(u, "item") else u
            t = t.item() if hasattr(t, "item") else t
            raise DataError(f"duplicate (unit, time) key: ({u!r}, {t!r})")
        if not np.issubdtype(frame[schema.time].dtype, np.integer):
            as_float = pd.to_numeric(frame[schema.time], errors="coerce")
            if as_float.isna().any() or not np.allclose(as_float, as_float.round()):
                raise DataError(f"time column {schema.time!r} must be integer")
            frame[schema.time] = as_float.astype(np.int64)
        for col in (schema.outcome, *schema.numeric):
            values = pd.to_numeric(frame[col], errors="coerce")
            fresh_na = values.isna() & frame[col].notna()
            if fresh_na.any():
                bad = frame.loc[fresh_na, col].iloc[0]
                raise DataError(f"non-numeric value {bad!r} in numeric column {col!r}")
            frame[col] = values.astype(float)

        gaps = []
        grouped = frame.groupby(schema.unit, sort=True)
        stats = grouped[schema.time].agg(["min", "max", "size"])
        gappy = stats.index[(stats["max"] - stats["min"] + 1) != stats["size"]]
        for unit in gappy:
            times = frame.loc[frame[schema.unit] == unit, schema.time].to_numpy()
            for t in np.setdiff1d(np.arange(times.min(), times.max() + 1), times):
                gaps.append((unit, int(t)))
        first_outcome = grouped[schema.outcome].first()
        starts_missing_outcome = list(first_outcome.index[first_outcome.isna()])
        if gaps:
            warnings.warn(f"panel has {len(gaps)} missing interior periods", stacklevel=2)
        if starts_missing_outcome:
            warnings.warn(
                "outcome missing at the first observed period for units "
                f"{starts_missing_outcome[:5]}",
                stacklevel=2,
            )

        if schema.time_polynomials:
            t = frame[schema.time].to_numpy(dtype=float)
            scale = t.std() or 1.0
            centered = (t - t.mean()) / scale
            for k in range(1, schema.time_polynomials + 1):
                frame[f"time_poly{k}"] = centered**k

        self.categorical_levels = {
            c: tuple(sorted(frame[c].dropna().astype(str).unique()))
            for c in schema.categorical
        }
        self.gaps = tuple(gaps)
        self.flags = tuple(flags)
        self._frame = frame

    @property
    def frame(self) -> pd.DataFrame:
        return self._frame.copy()

    @property
    def units(self) -> tuple:
        return tuple(sorted(self._frame[self.schema.unit].unique()))

    @property
    def times(self) -> tuple:
        return tuple(sorted(self._frame[self.schema.time].unique()))

    def column(self, name: str) -> np.ndarray:
        if name not in self._frame.columns:
            raise DataError(f"unknown column {name!r}")
        return self._frame[name].to_numpy()

    def has_column(self, name: str) -> bool:
        return name in self._frame.columns

    def with_columns(self, columns: Mapping[str, Sequence], flags: tuple = ()) -> "PanelDataset":
        frame = self._frame.copy()
        for name, values in columns.items():
            frame[name] = values
        return PanelDataset(frame, self.schema, flags=self.flags + tuple(flags))

    def save(self, path) -> None:
        self._frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)


def load_panel(path, schema: PanelSchema) -> PanelDataset:
    frame = pd.read_csv(path)
    return PanelDataset(frame, schema)


# -- weights --------------------------------------------------------------------


@dataclass(frozen=True)
class WeightMatrix:
    """Non-negative connection weights with a zero diagonal.

    ``matrix`` holds static weights; time-varying networks use ``by_time``
    instead (a mapping from period to matrix). Row ``i`` of a standardized
    matrix sums to one unless unit ``i`` has no neighbors, in which case the
    row stays all-zero and the unit is reported in ``empty_units``.
    """

    units: tuple
    matrix: Optional[np.ndarray] = None
    by_time: Optional[Mapping[int, np.ndarray]] = None
    standardized: bool = False

    def __post_init__(self):
        if (self.matrix is None) == (self.by_time is None):
            raise DataError("provide exactly one of matrix or by_time")
        object.__setattr__(self, "units", tuple(self.units))
        for m in self._all():
            m = np.asarray(m, dtype=float)
            n = len(self.units)
            if m.shape != (n, n):
                raise DataError(f"weight matrix shape {m.shape} does not match {n} units")
            if (m < 0).any():
                raise DataError("weights must be non-negative")
            if np.diag(m).any():
                raise DataError("weight matrix diagonal must be zero")

    def _all(self) -> tuple:
        if self.matrix is not None:
            return (self.matrix,)
        return tuple(self.by_time.values())

    def for_time(self, t: int) -> np.ndarray:
        if self.matrix is not None:
            return self.matrix
        if t not in self.by_time:
            raise DataError(f"no weights available for period {t}")
        return self.by_time[t]

    @property
    def time_varying(self) -> bool:
        return self.by_time is not None

    def empty_units(self, t: Optional[int] = None) -> tuple:
        m = self.matrix if self.matrix is not None else self.for_time(t)
        sums = m.sum(axis=1)
        return tuple(u for u, s in zip(self.units, sums) if s == 0)

    def row_standardize(self) -> "WeightMatrix":
        def standardize(m):
            m = np.asarray(m, dtype=float)
            sums = m.sum(axis=1, keepdims=True)
            with np.errstate(invalid="ignore", divide="ignore"):
                out = np.where(sums > 0, m / np.where(sums == 0, 1.0, sums), 0.0)
            return out

        if self.matrix is not None:
            return replace(self, matrix=standardize(self.matrix), standardized=True)
        return replace(
            self,
            by_time={t: standardize(m) for t, m in self.by_time.items()},
            standardized=True,
        )

    def neighbor_sets(self, t: Optional[int] = None) -> dict:
        m = self.matrix if self.matrix is not None else self.for_time(t)
        out = {}
        for i, u in enumerate(self.units):
            out[u] = tuple(self.units[j] for j in np.nonzero(m[i])[0])
        return out


def build_inverse_distance_weights(coords: Mapping, k_nearest: Optional[int] = None) -> WeightMatrix:
    """Inverse Euclidean distance between units, row-standardized.

    ``coords`` maps unit id to a coordinate pair (a DataFrame from
    :func:`load_coordinates` works too). Coincident units would get an
    infinite weight, so they are an error naming the pair. ``k_nearest``
    optionally keeps only each unit's closest ``k`` neighbors before
    standardizing; the default keeps every pair.
    """
    if isinstance(coords, pd.DataFrame):
        coords = {row[0]: (row[1], row[2]) for row in coords.itertuples(index=False)}
    units = tuple(sorted(coords))
    pts = np.asarray([coords[u] for u in units], dtype=float)
    dist = cdist(pts, pts)
    n = len(units)
    off = ~np.eye(n, dtype=bool)
    zero = np.argwhere((dist == 0) & off)
    if len(zero):
        i, j = zero[0]
        raise DataError(f"coincident coordinates for units {units[i]!r} and {units[j]!r}")
    raw = np.zeros_like(dist)
    raw[off] = 1.0 / dist[off]
    if k_nearest is not None and 0 < k_nearest < n - 1:
        keep = np.zeros_like(raw, dtype=bool)
        order = np.argsort(-raw, axis=1)
        for i in range(n):
            keep[i, order[i, :k_nearest]] = True
        raw = np.where(keep, raw, 0.0)
    return WeightMatrix(units, matrix=raw).row_standardize()


def build_bipartite_igo_weights(members: pd.DataFrame, year: int) -> WeightMatrix:
    """Tie strength through shared group memberships for one year.

    For states ``i`` and ``j``, sum ``1 / (size - 1)`` over the groups both
    belong to, then divide by the number of groups ``i`` belongs to. Groups
    with a single member are excluded with a warning; states in no group
    that year get an all-zero (flagged) row.
    """
    cols = list(members.columns[:3])
    frame = members.rename(columns=dict(zip(cols, ["state", "igo", "year"])))
    if frame.duplicated(["state", "igo", "year"]).any():
        raise DataError("duplicate (state, igo, year) membership rows")
    year_frame = frame[frame["year"] == year]
    units = tuple(sorted(frame["state"].unique()))
    index = {u: k for k, u in enumerate(units)}
    n = len(units)
    matrix = np.zeros((n, n))
    # denominator counts every membership that year, single-member groups included
    memberships = np.zeros(n)
    for state, grp in year_frame.groupby("state"):
        memberships[index[state]] = grp["igo"].nunique()
    for igo, grp in year_frame.groupby("igo"):
        states = sorted(grp["state"].unique())
        if len(states) < 2:
            warnings.warn(
                f"group {igo!r} has a single member in {year}; excluded", stacklevel=2
            )
            continue
        share = 1.0 / (len(states) - 1)
        idx = [index[s] for s in states]
        for i in idx:
            for j in idx:
                if i != j:
                    matrix[i, j] += share
    with np.errstate(invalid="ignore", divide="ignore"):
        matrix = np.where(memberships[:, None] > 0, matrix / np.maximum(memberships[:, None], 1), 0.0)
    wm = WeightMatrix(units, by_time={year: matrix})
    empty = wm.empty_units(year)
    if empty:
        warnings.warn(f"states with no shared groups in {year}: {empty[:5]}", stacklevel=2)
    return wm


def load_coordinates(path) -> pd.DataFrame:
    frame = pd.read_csv(path)
    if frame.shape[1] < 3:
        raise DataError("coordinates file needs unit, x, y columns")
    return frame


def load_memberships(path) -> pd.DataFrame:
    frame = pd.read_csv(path)
    if frame.shape[1] < 3:
        raise DataError("membership file needs state, igo, year columns")
    return frame


def load_edgelist_weights(path, standardize: bool = True) -> WeightMatrix:
    frame = pd.read_csv(path)
    if frame.shape[1] < 3:
        raise DataError("edge list needs i, j, w columns")
    i_col, j_col, w_col = frame.columns[:3]
    units = tuple(sorted(set(frame[i_col]) | set(frame[j_col])))
    index = {u: k for k, u in enumerate(units)}
    matrix = np.zeros((len(units), len(units)))
    for row in frame.itertuples(index=False):
        i, j, w = index[row[0]], index[row[1]], float(row[2])
        if i == j:
            raise DataError(f"edge list assigns a self-weight to unit {row[0]!r}")
        matrix[i, j] = w
    wm = WeightMatrix(units, matrix=matrix)
    return wm.row_standardize() if standardize else wm


# -- derived columns --------------------------------------------------------------


def compute_treatment(
    panel: PanelDataset, weights: WeightMatrix, name: str = "D"
) -> PanelDataset:
    """Append the treatment column: each unit's weighted average of
    neighbors' outcomes in the same period.

    Missing neighbor outcomes (and units with no neighbors) leave the value
    missing and flag the row.
    """
    schema = panel.schema
    frame = panel._frame
    units = panel.units
    if set(units) - set(weights.units):
        extra = sorted(set(units) - set(weights.units))
        raise DataError(f"weights are missing units: {extra[:5]}")
    w_index = {u: k for k, u in enumerate(weights.units)}
    result = np.full(len(frame), np.nan)
    flags = []
    unit_codes = frame[schema.unit].map(w_index).to_numpy()
    for t, grp in frame.groupby(schema.time, sort=True):
        try:
            m = weights.for_time(int(t))
        except DataError:
            flags.append((None, int(t), "no weights for period"))
            continue
        y_full = np.full(len(weights.units), np.nan)
        rows = grp.index.to_numpy()
        codes = unit_codes[rows]
        y_full[codes] = grp[schema.outcome].to_numpy()
        sub = m[codes]
        has_neighbors = sub.sum(axis=1) > 0
        uses_missing = (sub * np.isnan(y_full)[None, :]).sum(axis=1) > 0
        d = sub @ np.where(np.isnan(y_full), 0.0, y_full)
        d[~has_neighbors] = np.nan
        d[uses_missing] = np.nan
        result[rows] = d
        for r, ok_n, bad_y in zip(rows, has_neighbors, uses_missing):
            if not ok_n:
                flags.append((frame[schema.unit].iloc[r], int(t), "no neighbors"))
            elif bad_y:
                flags.append((frame[schema.unit].iloc[r], int(t), "missing neighbor outcome"))
    return panel.with_columns({name: result}, flags=tuple(flags))


def neighbor_summaries(weights: WeightMatrix, mode: str = "nonzero") -> pd.DataFrame:
    """Per-unit neighbor count and weight variance.

    ``mode="nonzero"`` (default) takes the population variance of the
    nonzero row entries; ``mode="full"`` uses the whole row. Time-varying
    weights are averaged over periods.
    """
    if mode not in ("nonzero", "full"):
        raise DataError(f"unknown variance mode {mode!r}")
    mats = weights._all()
    counts = np.zeros(len(weights.units))
    variances = np.zeros(len(weights.units))
    for m in mats:
        for i in range(len(weights.units)):
            row = m[i]
            nz = row[row != 0]
            counts[i] += len(nz)
            if mode == "nonzero":
                variances[i] += float(nz.var()) if len(nz) else 0.0
            else:
                off = np.delete(row, i)
                variances[i] += float(off.var()) if len(off) else 0.0
    k = len(mats)
    return pd.DataFrame(
        {
            "unit": list(weights.units),
            "n_neighbors": counts / k,
            "w_variance": variances / k,
        }
    )


def attach_neighbor_summaries(
    panel: PanelDataset, weights: WeightMatrix, mode: str = "nonzero"
) -> PanelDataset:
    summ = neighbor_summaries(weights, mode=mode).set_index("unit")
    unit_col = panel._frame[panel.schema.unit]
    return panel.with_columns(
        {
            "n_neighbors": unit_col.map(summ["n_neighbors"]).to_numpy(),
            "w_variance": unit_col.map(summ["w_variance"]).to_numpy(),
        }
    )


def shifted_name(column: str, offset: int) -> str:
    if offset == 0:
        return column
    if offset < 0:
        return f"{column}_lag{-offset}"
    return f"{column}_lead{offset}"


def add_shifted_column(panel: PanelDataset, column: str, offset: int) -> PanelDataset:
    """Within-unit shifted copy of a column (negative offset lags, positive
    leads); periods without a source row are missing."""
    if offset == 0:
        return panel
    if not panel.has_column(column):
        raise DataError(f"unknown column {column!r}")
    name = shifted_name(column, offset)
    if panel.has_column(name):
        return panel
    schema = panel.schema
    shifted = panel._frame.groupby(schema.unit, sort=False)[column].shift(-offset)
    return panel.with_columns({name: shifted.to_numpy()})


def add_lags(panel: PanelDataset, column: str, max_lag: int) -> PanelDataset:
    """Columns ``<column>_lag1 .. _lag<max_lag>``, aligned within unit."""
    if max_lag < 1:
        raise DataError("max_lag must be at least 1")
    min_len = panel._frame.groupby(panel.schema.unit).size().min()
    if max_lag >= min_len:
        raise DataError(
            f"max_lag {max_lag} is not below the shortest unit series ({min_len})"
        )
    out = panel
    for k in range(1, max_lag + 1):
        out = add_shifted_column(out, column, -k)
    return out
