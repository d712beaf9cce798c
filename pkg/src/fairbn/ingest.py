"""Dataset ingestion: CSV parsing, discretisation and stratified fold splits.

Raw tabular files become immutable :class:`Dataset` objects holding state
indices, per-variable metadata and a fold assignment.  Rows containing a
missing cell are dropped before discretisation.  The fold shuffle uses
numpy's PCG64 generator so splits are reproducible across machines from the
recorded seed.
"""

from __future__ import annotations

import csv
import json
import math
import statistics
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .model import DiscreteVariable, Role, VarId

DEFAULT_MISSING = ("", "NA")

META_FORMAT = "fairbn-dataset-meta/1"


class IngestError(ValueError):
    """Malformed input data or an invalid ingest configuration."""


@dataclass(frozen=True)
class IngestConfig:
    target_column: str
    private_columns: tuple[str, ...] = ()
    continuous_columns: tuple[str, ...] = ()
    n_bins: int = 4
    n_folds: int = 10
    seed: int = 0
    target_binarisation: bool = False
    missing_markers: tuple[str, ...] = DEFAULT_MISSING

    def __post_init__(self) -> None:
        object.__setattr__(self, "private_columns", tuple(self.private_columns))
        object.__setattr__(self, "continuous_columns", tuple(self.continuous_columns))
        object.__setattr__(self, "missing_markers", tuple(self.missing_markers))
        if self.target_column in self.private_columns:
            raise IngestError("the target column cannot be declared private")
        if self.n_bins < 2:
            raise IngestError("n_bins must be >= 2")
        if self.n_folds < 2:
            raise IngestError("n_folds must be >= 2")


@dataclass(frozen=True)
class Dataset:
    """Discretised instance table plus variable metadata and fold split."""

    variables: tuple[DiscreteVariable, ...]
    rows: np.ndarray
    fold_of: np.ndarray
    n_folds: int
    discretisation_edges: dict[str, tuple[float, ...]] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "variables", tuple(self.variables))
        rows = np.asarray(self.rows, dtype=np.int64)
        rows.flags.writeable = False
        object.__setattr__(self, "rows", rows)
        folds = np.asarray(self.fold_of, dtype=np.int64)
        folds.flags.writeable = False
        object.__setattr__(self, "fold_of", folds)
        if rows.ndim != 2 or rows.shape[1] != len(self.variables):
            raise IngestError("row table shape does not match the variable list")
        if folds.shape != (rows.shape[0],):
            raise IngestError("fold assignment length does not match the row count")
        targets = [v for v in self.variables if v.role is Role.TARGET]
        if len(targets) != 1:
            raise IngestError("a dataset must have exactly one target variable")
        for j, var in enumerate(self.variables):
            if rows.shape[0] and int(rows[:, j].max()) >= var.cardinality:
                raise IngestError(
                    f"column {var.name!r} contains a state index out of range"
                )
            if rows.shape[0] and int(rows[:, j].min()) < 0:
                raise IngestError(f"column {var.name!r} contains a negative state")
        if rows.shape[0]:
            if int(folds.min()) < 0 or int(folds.max()) >= self.n_folds:
                raise IngestError("fold index out of range")
            self._check_stratification()

    def _check_stratification(self) -> None:
        y = self.target_column_index()
        targets = self.rows[:, y]
        n = len(targets)
        for cls in np.unique(targets):
            global_freq = float(np.sum(targets == cls)) / n
            for f in range(self.n_folds):
                in_fold = self.fold_of == f
                size = int(np.sum(in_fold))
                observed = int(np.sum(targets[in_fold] == cls))
                if abs(observed - global_freq * size) > 1.0 + 1e-6:
                    raise IngestError(
                        f"fold {f} deviates from stratified class proportions "
                        f"for target state {int(cls)}"
                    )

    @property
    def n_rows(self) -> int:
        return int(self.rows.shape[0])

    def target_variable(self) -> DiscreteVariable:
        return next(v for v in self.variables if v.role is Role.TARGET)

    def target_column_index(self) -> int:
        for j, v in enumerate(self.variables):
            if v.role is Role.TARGET:
                return j
        raise IngestError("no target variable")

    def column_index(self, var: VarId) -> int:
        for j, v in enumerate(self.variables):
            if v.id == var:
                return j
        raise IngestError(f"unknown variable id {var}")

    def fold_rows(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of == fold)

    def training_rows(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of != fold)


def discretise_quantile(
    values: Sequence[float], n_bins: int
) -> tuple[np.ndarray, tuple[float, ...]]:
    """Map numeric values to quantile-bin indices.

    Cut edges are the i/n_bins nearest-rank empirical quantiles for
    i = 1..n_bins-1; duplicates merge, so the number of distinct bins may
    shrink.  A value maps to the count of edges strictly below it.
    """
    vals = np.asarray(values, dtype=np.float64)
    if vals.size == 0:
        raise IngestError("cannot discretise an empty column")
    if n_bins < 2:
        raise IngestError("n_bins must be >= 2")
    srt = np.sort(vals)
    n = vals.size
    edges: list[float] = []
    for i in range(1, n_bins):
        rank = math.ceil(i / n_bins * n)
        edges.append(float(srt[rank - 1]))
    merged = sorted(set(edges))
    states = np.searchsorted(np.asarray(merged), vals, side="left").astype(np.int64)
    return states, tuple(merged)


def binarise_target_by_median(
    values: Sequence[float],
) -> tuple[np.ndarray, float]:
    """Median split: values <= sample median map to state 0, larger to 1."""
    vals = np.asarray(values, dtype=np.float64)
    if vals.size == 0:
        raise IngestError("cannot binarise an empty column")
    median = float(statistics.median(vals.tolist()))
    states = (vals > median).astype(np.int64)
    return states, median


def stratified_folds(
    targets: Sequence[int], k: int, seed: int
) -> np.ndarray:
    """Deterministic stratified fold split.

    Within each target class (processed in ascending state order) the rows
    are shuffled by one PCG64 generator seeded with `seed` and dealt
    round-robin to the k folds.
    """
    if k < 2:
        raise IngestError("need at least two folds")
    targets = np.asarray(targets, dtype=np.int64)
    rng = np.random.Generator(np.random.PCG64(seed))
    fold = np.empty(targets.shape[0], dtype=np.int64)
    for cls in np.unique(targets):
        idx = np.flatnonzero(targets == cls)
        shuffled = idx[rng.permutation(idx.size)]
        fold[shuffled] = np.arange(shuffled.size) % k
    return fold


def _bin_labels(edges: tuple[float, ...], count: int) -> tuple[str, ...]:
    labels = [f"(-inf, {edges[0]!r}]"]
    for lo, hi in zip(edges, edges[1:]):
        labels.append(f"({lo!r}, {hi!r}]")
    labels.append(f"({edges[-1]!r}, inf)")
    return tuple(labels[:count])


def _pad_labels(labels: list[str]) -> tuple[str, ...]:
    # constant columns still need a two-state variable
    filler = "(other)"
    while filler in labels:
        filler += "_"
    return tuple(labels + [filler])


def _read_raw_csv(path: str | Path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header: list[str] | None = None
        rows: list[list[str]] = []
        for lineno, row in enumerate(reader, start=1):
            if not row or row[0].startswith("#"):
                continue
            if header is None:
                header = [c.strip() for c in row]
                continue
            if len(row) != len(header):
                raise IngestError(
                    f"line {lineno}: expected {len(header)} cells, got {len(row)}"
                )
            rows.append([c.strip() for c in row])
    if header is None:
        raise IngestError(f"{path}: no header row")
    return header, rows


def load_csv(path: str | Path, config: IngestConfig) -> Dataset:
    """Ingest a raw CSV file following the benchmark protocol: drop rows
    with missing cells, discretise, then split into stratified folds."""
    header, raw = _read_raw_csv(path)
    if config.target_column not in header:
        raise IngestError(f"target column {config.target_column!r} not in header")
    for col in config.private_columns:
        if col not in header:
            raise IngestError(f"private column {col!r} not in header")
    for col in config.continuous_columns:
        if col not in header:
            raise IngestError(f"continuous column {col!r} not in header")

    missing = set(config.missing_markers)
    kept = [row for row in raw if not any(cell in missing for cell in row)]
    if not kept:
        raise IngestError("no rows left after removing rows with missing values")

    continuous = set(config.continuous_columns)
    private = set(config.private_columns)
    edges_by_column: dict[str, tuple[float, ...]] = {}
    variables: list[DiscreteVariable] = []
    columns: list[np.ndarray] = []

    for j, name in enumerate(header):
        cells = [row[j] for row in kept]
        if name == config.target_column:
            role = Role.TARGET
        elif name in private:
            role = Role.PRIVATE
        else:
            role = Role.PUBLIC

        if name == config.target_column and config.target_binarisation:
            numeric = _parse_numeric(name, cells)
            states, median = binarise_target_by_median(numeric)
            labels = (f"<= {median!r}", f"> {median!r}")
            card = 2
            edges_by_column[name] = (median,)
        elif name in continuous:
            numeric = _parse_numeric(name, cells)
            states, edges = discretise_quantile(numeric, config.n_bins)
            edges_by_column[name] = edges
            card = max(int(states.max()) + 1, 2)
            labels = _bin_labels(edges, card)
        else:
            seen: dict[str, int] = {}
            idx = []
            for cell in cells:
                if cell not in seen:
                    seen[cell] = len(seen)
                idx.append(seen[cell])
            states = np.asarray(idx, dtype=np.int64)
            label_list = list(seen)
            if len(label_list) < 2:
                label_list = list(_pad_labels(label_list))
            labels = tuple(label_list)
            card = len(labels)

        variables.append(DiscreteVariable(j, name, card, labels, role))
        columns.append(states)

    rows = np.column_stack(columns)
    target_idx = header.index(config.target_column)
    folds = stratified_folds(rows[:, target_idx], config.n_folds, config.seed)
    return Dataset(
        tuple(variables), rows, folds, config.n_folds, edges_by_column, config.seed
    )


def _parse_numeric(name: str, cells: list[str]) -> list[float]:
    out = []
    for cell in cells:
        try:
            out.append(float(cell))
        except ValueError:
            raise IngestError(
                f"column {name!r} declared numeric but contains {cell!r}"
            ) from None
    return out


def imbalance(dataset: Dataset) -> float:
    """Relative frequency of the least frequent target class."""
    y = dataset.target_column_index()
    counts = np.bincount(
        dataset.rows[:, y], minlength=dataset.variables[y].cardinality
    )
    counts = counts[counts > 0]
    return float(counts.min()) / dataset.n_rows


def write_discretised(
    dataset: Dataset,
    csv_path: str | Path,
    meta_path: str | Path,
    header_lines: Iterable[str] = (),
) -> None:
    """Emit the discretised CSV (state indices) and its metadata sidecar."""
    header_lines = list(header_lines)
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        for line in header_lines:
            fh.write(line.rstrip("\n") + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([v.name for v in dataset.variables])
        for row in dataset.rows:
            writer.writerow([int(s) for s in row])

    meta = {
        "header": header_lines,
        "format": META_FORMAT,
        "seed": dataset.seed,
        "n_folds": dataset.n_folds,
        "variables": [
            {
                "id": v.id,
                "name": v.name,
                "cardinality": v.cardinality,
                "state_labels": list(v.state_labels),
                "role": v.role.value,
            }
            for v in dataset.variables
        ],
        "discretisation_edges": {
            name: list(edges) for name, edges in dataset.discretisation_edges.items()
        },
        "fold_of": [int(f) for f in dataset.fold_of],
    }
    with open(meta_path, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=1)
        fh.write("\n")


def read_discretised(csv_path: str | Path, meta_path: str | Path) -> Dataset:
    """Rebuild a Dataset from the discretised CSV plus sidecar; the exact
    inverse of :func:`write_discretised`."""
    with open(meta_path, encoding="utf-8") as fh:
        meta = json.load(fh)
    if meta.get("format") != META_FORMAT:
        raise IngestError(f"unrecognised sidecar format {meta.get('format')!r}")
    variables = tuple(
        DiscreteVariable(
            int(v["id"]),
            v["name"],
            int(v["cardinality"]),
            tuple(v["state_labels"]),
            Role(v["role"]),
        )
        for v in meta["variables"]
    )
    header, raw = _read_raw_csv(csv_path)
    if header != [v.name for v in variables]:
        raise IngestError("CSV columns do not match the sidecar variable list")
    try:
        rows = np.asarray([[int(c) for c in row] for row in raw], dtype=np.int64)
    except ValueError:
        raise IngestError("discretised CSV must contain integer state indices")
    if rows.size == 0:
        rows = rows.reshape(0, len(variables))
    edges = {
        name: tuple(float(e) for e in es)
        for name, es in meta["discretisation_edges"].items()
    }
    return Dataset(
        variables,
        rows,
        np.asarray(meta["fold_of"], dtype=np.int64),
        int(meta["n_folds"]),
        edges,
        int(meta["seed"]),
    )
