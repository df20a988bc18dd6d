"""NetFlow-style CSV ingestion: schema mapping, normalization, windowing.

Flows are kept in two interchangeable shapes: a list of FlowRecord objects
for small data and a columnar FlowTable for the fast paths.  Parsing
collects per-row errors instead of failing, up to a configurable bad-row
budget; structural problems (missing columns) raise SchemaError.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import SchemaError

# normalization never divides by anything smaller than this
STD_FLOOR = 1e-8


@dataclass
class SchemaConfig:
    """Maps CSV columns onto the fields a flow record needs."""

    src_col: str = "src_ip"
    dst_col: str = "dst_ip"
    ts_col: str = "timestamp"
    feature_cols: list[str] = field(default_factory=lambda: ["f0", "f1", "f2", "f3"])
    label_col: str | None = "label"
    delimiter: str = ","
    max_bad_fraction: float = 0.01

    @property
    def feature_dim(self) -> int:
        return len(self.feature_cols)


@dataclass
class FlowRecord:
    """One flow: endpoints, arrival time, statistics vector, optional label."""

    flow_id: int
    src_ip: str
    dst_ip: str
    timestamp: float
    features: np.ndarray
    label: int | None = None


@dataclass
class FlowTable:
    """Column-oriented flow store; same information as a record list."""

    src: list[str]
    dst: list[str]
    timestamps: np.ndarray
    features: np.ndarray
    labels: np.ndarray | None = None
    flow_ids: np.ndarray | None = None

    def __post_init__(self):
        if self.flow_ids is None:
            self.flow_ids = np.arange(len(self.src), dtype=np.int64)

    def __len__(self) -> int:
        return len(self.src)

    def to_records(self) -> list[FlowRecord]:
        labels = self.labels
        return [
            FlowRecord(
                int(self.flow_ids[i]),
                self.src[i],
                self.dst[i],
                float(self.timestamps[i]),
                self.features[i],
                None if labels is None else int(labels[i]),
            )
            for i in range(len(self.src))
        ]

    @staticmethod
    def from_records(records: list[FlowRecord]) -> "FlowTable":
        n = len(records)
        feat_dim = len(records[0].features) if n else 0
        features = np.empty((n, feat_dim))
        ts = np.empty(n)
        ids = np.empty(n, dtype=np.int64)
        has_labels = n > 0 and records[0].label is not None
        labels = np.empty(n, dtype=np.int64) if has_labels else None
        src = []
        dst = []
        for i, r in enumerate(records):
            src.append(r.src_ip)
            dst.append(r.dst_ip)
            ts[i] = r.timestamp
            features[i] = r.features
            ids[i] = r.flow_id
            if has_labels:
                labels[i] = r.label
        return FlowTable(src, dst, ts, features, labels, ids)

    def take(self, index: np.ndarray) -> "FlowTable":
        """Row subset in the given order."""
        return FlowTable(
            [self.src[i] for i in index],
            [self.dst[i] for i in index],
            self.timestamps[index],
            self.features[index],
            None if self.labels is None else self.labels[index],
            self.flow_ids[index],
        )


@dataclass
class RowError:
    """A rejected CSV data row (1-based, header excluded) and why."""

    row: int
    reason: str


@dataclass
class ParseResult:
    table: FlowTable
    errors: list[RowError]

    @property
    def records(self) -> list[FlowRecord]:
        return self.table.to_records()


def parse_flow_csv(path, schema: SchemaConfig) -> ParseResult:
    """Read a delimited flow file into a table, collecting bad rows.

    Raises SchemaError when a configured column is missing from the header
    or when more than ``schema.max_bad_fraction`` of data rows fail.
    """
    src: list[str] = []
    dst: list[str] = []
    ts: list[float] = []
    feats: list[list[float]] = []
    labels: list[int] = []
    errors: list[RowError] = []
    want_label = schema.label_col is not None

    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter=schema.delimiter)
        header = next(reader, None)
        if header is None:
            raise SchemaError(f"{path}: empty file, no header")
        positions = {name: i for i, name in enumerate(header)}
        needed = [schema.src_col, schema.dst_col, schema.ts_col, *schema.feature_cols]
        if want_label:
            needed.append(schema.label_col)
        missing = [c for c in needed if c not in positions]
        if missing:
            raise SchemaError(f"{path}: missing column(s) {', '.join(missing)}")
        src_i = positions[schema.src_col]
        dst_i = positions[schema.dst_col]
        ts_i = positions[schema.ts_col]
        feat_i = [positions[c] for c in schema.feature_cols]
        label_i = positions[schema.label_col] if want_label else -1

        total = 0
        for row_no, row in enumerate(reader, start=1):
            total += 1
            if len(row) != len(header):
                errors.append(RowError(row_no, f"expected {len(header)} fields, got {len(row)}"))
                continue
            try:
                t = float(row[ts_i])
            except ValueError:
                errors.append(RowError(row_no, f"bad timestamp {row[ts_i]!r}"))
                continue
            if not np.isfinite(t):
                errors.append(RowError(row_no, f"non-finite timestamp {row[ts_i]!r}"))
                continue
            try:
                f = [float(row[i]) for i in feat_i]
            except ValueError:
                errors.append(RowError(row_no, "non-numeric feature value"))
                continue
            if not all(np.isfinite(x) for x in f):
                errors.append(RowError(row_no, "non-finite feature value"))
                continue
            if want_label:
                try:
                    lab = int(row[label_i])
                except ValueError:
                    errors.append(RowError(row_no, f"bad label {row[label_i]!r}"))
                    continue
                if lab not in (0, 1):
                    errors.append(RowError(row_no, f"label {lab} outside {{0, 1}}"))
                    continue
                labels.append(lab)
            src.append(row[src_i])
            dst.append(row[dst_i])
            ts.append(t)
            feats.append(f)

    if total and len(errors) / total > schema.max_bad_fraction:
        raise SchemaError(
            f"{path}: {len(errors)}/{total} rows rejected, over the "
            f"{schema.max_bad_fraction:.2%} budget"
        )
    n = len(src)
    table = FlowTable(
        src,
        dst,
        np.array(ts, dtype=np.float64),
        np.array(feats, dtype=np.float64).reshape(n, schema.feature_dim),
        np.array(labels, dtype=np.int64) if want_label else None,
        np.arange(n, dtype=np.int64),
    )
    return ParseResult(table, errors)


def write_flow_csv(path, table: FlowTable, schema: SchemaConfig) -> None:
    """Serialize a table using the schema's column names and order."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, delimiter=schema.delimiter)
        header = [schema.src_col, schema.dst_col, schema.ts_col, *schema.feature_cols]
        if schema.label_col is not None and table.labels is not None:
            header.append(schema.label_col)
            write_label = True
        else:
            write_label = False
        writer.writerow(header)
        for i in range(len(table)):
            row = [table.src[i], table.dst[i], repr(float(table.timestamps[i]))]
            row.extend(repr(float(v)) for v in table.features[i])
            if write_label:
                row.append(str(int(table.labels[i])))
            writer.writerow(row)


def write_error_report(path, errors: list[RowError]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row", "reason"])
        for e in errors:
            writer.writerow([e.row, e.reason])


@dataclass
class NormStats:
    """Z-score parameters fitted on training flows only.

    ``mean``/``std`` cover the flow statistics vector; ``deg_mean`` and
    ``deg_std`` normalize log1p of node degrees and get filled by the graph
    module once training graphs exist.
    """

    mean: np.ndarray
    std: np.ndarray
    deg_mean: float = 0.0
    deg_std: float = 1.0

    def normalize_degrees(self, degrees: np.ndarray) -> np.ndarray:
        return (np.log1p(degrees) - self.deg_mean) / self.deg_std


def fit_normalization(flows) -> NormStats:
    """Per-feature mean and population std, std floored at 1e-8.

    Accepts a feature matrix, a FlowTable, or a record list.
    """
    if isinstance(flows, np.ndarray):
        feats = flows
    elif isinstance(flows, FlowTable):
        feats = flows.features
    else:
        feats = np.array([r.features for r in flows], dtype=np.float64)
    if feats.size == 0:
        raise ValueError("cannot fit normalization on zero flows")
    mean = feats.mean(axis=0)
    std = np.maximum(feats.std(axis=0), STD_FLOOR)
    return NormStats(mean, std)


def apply_normalization(flows, stats: NormStats):
    """Return a normalized copy; accepts a matrix, a FlowTable, or records."""
    if isinstance(flows, np.ndarray):
        return (flows - stats.mean) / stats.std
    if isinstance(flows, FlowTable):
        return FlowTable(
            list(flows.src),
            list(flows.dst),
            flows.timestamps.copy(),
            (flows.features - stats.mean) / stats.std,
            None if flows.labels is None else flows.labels.copy(),
            flows.flow_ids.copy(),
        )
    return [
        replace(r, features=(r.features - stats.mean) / stats.std) for r in flows
    ]


def denormalize(features: np.ndarray, stats: NormStats) -> np.ndarray:
    return features * stats.std + stats.mean


def window_table(table: FlowTable, window_seconds: float) -> list[FlowTable]:
    """Split flows into half-open time windows [k*w, (k+1)*w).

    Windows come back in ascending k with the original row order preserved
    inside each; empty windows are omitted, so the pieces partition the
    input.
    """
    if window_seconds <= 0:
        raise ValueError("window_seconds must be positive")
    if len(table) == 0:
        return []
    idx = np.floor(table.timestamps / window_seconds).astype(np.int64)
    out = []
    for k in np.unique(idx):
        rows = np.nonzero(idx == k)[0]
        out.append(table.take(rows))
    return out


def window_flows(records: list[FlowRecord], window_seconds: float) -> list[list[FlowRecord]]:
    """Record-list version of window_table."""
    if window_seconds <= 0:
        raise ValueError("window_seconds must be positive")
    groups: dict[int, list[FlowRecord]] = {}
    for r in records:
        groups.setdefault(int(np.floor(r.timestamp / window_seconds)), []).append(r)
    return [groups[k] for k in sorted(groups)]
