"""Cross-validated experiment driver and result aggregation.

Folds are scored independently (optionally in parallel processes), records
are re-validated against the structural invariants of the robustness
measure, and aggregates are emitted as plain CSV / text files that any
plotting tool can consume.
"""

from __future__ import annotations

import csv
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .fairness import (
    FRLRecord,
    build_fairness_model,
    frl,
    frl_bruteforce,
)
from .ingest import Dataset, imbalance
from .learning import StructureSearchConfig, learn_structure
from .model import Assignment, BayesianNetwork, Role

FRL_MATCH_TOL = 1e-9

RECORD_COLUMNS = (
    "fold",
    "instance_id",
    "true_class",
    "predicted_class",
    "posterior_y0",
    "brier",
    "frl",
    "x_star",
    "time_bn_ns",
    "time_mrf_ns",
)


class EvaluationError(ValueError):
    """A fold could not be scored or an integrity assertion failed."""


class OracleMismatchError(EvaluationError):
    """The MPE-based FRL disagreed with the brute-force oracle."""


@dataclass(frozen=True)
class FoldResult:
    fold: int
    bn: BayesianNetwork
    fair_by_design: bool
    records: tuple[FRLRecord, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "records", tuple(self.records))
        if self.fair_by_design and any(r.frl != 0.0 for r in self.records):
            raise EvaluationError(
                f"fold {self.fold} is fair by design but carries nonzero FRL"
            )


@dataclass(frozen=True)
class BinStat:
    lo: float
    hi: float
    count: int
    accuracy: float
    mean_brier: float


@dataclass(frozen=True)
class DecileSummary:
    """Equal-frequency FRL bins; a dedicated zero-FRL bin precedes them
    whenever records with exactly zero FRL exist."""

    zero_bin: BinStat | None
    bins: tuple[BinStat, ...]


@dataclass(frozen=True)
class TimingSummary:
    minimum: float
    q1: float
    median: float
    q3: float
    maximum: float
    count: int


@dataclass(frozen=True)
class DatasetSummary:
    n_private: int
    n_public: int
    n_records: int
    imbalance: float
    fair_by_design_folds: int


def brier(posterior: Sequence[float], true_class: int) -> float:
    """Squared complement of the probability assigned to the actual class."""
    dist = np.asarray(posterior, dtype=np.float64)
    if dist.shape != (2,):
        raise EvaluationError("the Brier score is defined for binary posteriors")
    return float((1.0 - dist[true_class]) ** 2)


def check_record_integrity(record: FRLRecord) -> None:
    """Structural invariants every record must satisfy: the FRL bound and
    the 0.25 Brier threshold identity (the exact-0.5 posterior tie is
    correct iff the tie rule happened to match the true class)."""
    p_hat = record.posterior_y0
    bound = max(p_hat, 1.0 - p_hat)
    if record.frl > bound + 1e-12:
        raise EvaluationError(
            f"instance {record.instance_id}: FRL {record.frl} exceeds "
            f"max(p, 1-p) = {bound}"
        )
    if record.true_class is None or record.brier is None:
        return
    correct = record.predicted_class == record.true_class
    if correct and record.brier > 0.25 + 1e-12:
        raise EvaluationError(
            f"instance {record.instance_id}: correct prediction with "
            f"Brier {record.brier} > 0.25"
        )
    if not correct and record.brier < 0.25 - 1e-12:
        raise EvaluationError(
            f"instance {record.instance_id}: wrong prediction with "
            f"Brier {record.brier} < 0.25"
        )


def _score_fold(
    dataset: Dataset,
    config: StructureSearchConfig,
    fold: int,
    oracle_check: bool,
    brute_force_cap: int,
    force_target_arcs: bool,
) -> FoldResult:
    train = dataset.training_rows(fold)
    test = dataset.fold_rows(fold)
    y_col = dataset.target_column_index()
    target = dataset.target_variable()
    present = set(int(c) for c in np.unique(dataset.rows[train][:, y_col]))
    if present != set(range(target.cardinality)):
        missing = sorted(set(range(target.cardinality)) - present)
        raise EvaluationError(
            f"fold {fold}: training slice lacks target state(s) {missing}; "
            "cannot fit a classifier"
        )

    if force_target_arcs:
        extra = tuple(
            (target.id, v.id) for v in dataset.variables if v.id != target.id
        )
        config = replace(
            config, forced_arcs=tuple(dict.fromkeys(config.forced_arcs + extra))
        )
    bn = learn_structure(dataset, config, train)
    model = build_fairness_model(bn)

    ids = [v.id for v in dataset.variables]
    records: list[FRLRecord] = []
    for row in test:
        instance = Assignment(dict(zip(ids, (int(s) for s in dataset.rows[row]))))
        record = frl(model, instance, instance_id=int(row))
        if oracle_check:
            oracle = frl_bruteforce(
                model, instance, instance_id=int(row), cap=brute_force_cap
            )
            if abs(oracle.frl - record.frl) > FRL_MATCH_TOL:
                raise OracleMismatchError(
                    f"fold {fold}, instance {int(row)}: MPE path FRL "
                    f"{record.frl!r} != brute force {oracle.frl!r}"
                )
            record = replace(record, time_bn_ns=oracle.time_bn_ns)
        check_record_integrity(record)
        records.append(record)
    records.sort(key=lambda r: r.instance_id)
    return FoldResult(fold, bn, model.fair_by_design, tuple(records))


def run_experiment(
    dataset: Dataset,
    config: StructureSearchConfig,
    *,
    oracle_check: bool = False,
    brute_force_cap: int = 2**20,
    force_target_arcs: bool = False,
    jobs: int = 1,
) -> list[FoldResult]:
    """Train and score every fold: structure plus parameters on the other
    folds, then one FRL record per held-out instance (with the brute-force
    oracle cross-check when requested)."""
    folds = sorted(set(int(f) for f in dataset.fold_of))
    if len(folds) < 2:
        raise EvaluationError("the dataset carries fewer than two folds")
    args = [
        (dataset, config, f, oracle_check, brute_force_cap, force_target_arcs)
        for f in folds
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_score_fold_star, args))
    else:
        results = [_score_fold(*a) for a in args]
    results.sort(key=lambda fr: fr.fold)
    return results


def _score_fold_star(args) -> FoldResult:
    return _score_fold(*args)


def all_records(fold_results: Iterable[FoldResult]) -> list[FRLRecord]:
    records = [r for fr in fold_results for r in fr.records]
    records.sort(key=lambda r: r.instance_id)
    return records


def decile_summary(
    records: Sequence[FRLRecord], n_bins: int = 10
) -> DecileSummary:
    """Equal-frequency binning of the positive-FRL records, preceded by a
    zero-FRL bin when such records exist.  Ties straddling a bin edge are
    kept in stable instance-id order."""
    if not records:
        raise EvaluationError("no records to summarise")
    for r in records:
        if r.true_class is None:
            raise EvaluationError(
                f"instance {r.instance_id} has no true class; cannot bin accuracy"
            )
    zero = [r for r in records if r.frl == 0.0]
    positive = sorted(
        (r for r in records if r.frl > 0.0), key=lambda r: (r.frl, r.instance_id)
    )

    def stat(chunk: Sequence[FRLRecord]) -> BinStat:
        acc = sum(1 for r in chunk if r.predicted_class == r.true_class) / len(chunk)
        mean_b = sum(r.brier for r in chunk) / len(chunk)
        return BinStat(
            lo=min(r.frl for r in chunk),
            hi=max(r.frl for r in chunk),
            count=len(chunk),
            accuracy=acc,
            mean_brier=mean_b,
        )

    zero_bin = stat(zero) if zero else None
    bins: list[BinStat] = []
    if positive:
        k = n_bins
        if len(positive) < n_bins:
            warnings.warn(
                f"only {len(positive)} positive-FRL records; "
                f"using that many bins instead of {n_bins}",
                stacklevel=2,
            )
            k = len(positive)
        base, extra = divmod(len(positive), k)
        start = 0
        for i in range(k):
            size = base + (1 if i < extra else 0)
            bins.append(stat(positive[start : start + size]))
            start += size
    return DecileSummary(zero_bin, tuple(bins))


@dataclass(frozen=True)
class BrierBin:
    """FRL spread within one equal-frequency Brier bin (boxplot-ready)."""

    brier_lo: float
    brier_hi: float
    count: int
    frl_min: float
    frl_q1: float
    frl_median: float
    frl_q3: float
    frl_max: float


def brier_bin_table(
    records: Sequence[FRLRecord], n_bins: int = 10
) -> tuple[BrierBin, ...]:
    """Equal-frequency binning by Brier score with the per-bin FRL
    five-number summary; feeds the FRL-vs-Brier boxplot panel."""
    scored = sorted(
        (r for r in records if r.brier is not None),
        key=lambda r: (r.brier, r.instance_id),
    )
    if not scored:
        raise EvaluationError("no records with a Brier score to bin")
    k = min(n_bins, len(scored))
    base, extra = divmod(len(scored), k)
    bins = []
    start = 0
    for i in range(k):
        size = base + (1 if i < extra else 0)
        chunk = scored[start : start + size]
        start += size
        levels = [r.frl for r in chunk]
        qs = np.percentile(levels, [0, 25, 50, 75, 100])
        bins.append(
            BrierBin(
                brier_lo=chunk[0].brier,
                brier_hi=chunk[-1].brier,
                count=len(chunk),
                frl_min=float(qs[0]),
                frl_q1=float(qs[1]),
                frl_median=float(qs[2]),
                frl_q3=float(qs[3]),
                frl_max=float(qs[4]),
            )
        )
    return tuple(bins)


def timing_ratios(records: Sequence[FRLRecord]) -> TimingSummary:
    """Five-number summary of per-record brute-force / MPE time ratios."""
    ratios = []
    for r in records:
        if r.time_bn_ns is None or r.time_mrf_ns is None:
            raise EvaluationError(
                f"instance {r.instance_id} lacks oracle timings; "
                "run with the oracle check enabled"
            )
        ratios.append(r.time_bn_ns / r.time_mrf_ns)
    if not ratios:
        raise EvaluationError("no records to summarise")
    qs = np.percentile(ratios, [0, 25, 50, 75, 100])
    return TimingSummary(*(float(q) for q in qs), count=len(ratios))


def dataset_summary(
    dataset: Dataset, fold_results: Sequence[FoldResult]
) -> DatasetSummary:
    """The benchmark-table row: feature split sizes, record count, class
    imbalance, and the number of fair-by-design folds."""
    records = all_records(fold_results)
    for r in records:
        check_record_integrity(r)
    return DatasetSummary(
        n_private=sum(1 for v in dataset.variables if v.role is Role.PRIVATE),
        n_public=sum(1 for v in dataset.variables if v.role is Role.PUBLIC),
        n_records=dataset.n_rows,
        imbalance=imbalance(dataset),
        fair_by_design_folds=sum(1 for fr in fold_results if fr.fair_by_design),
    )


def _format_optional(value) -> str:
    return "" if value is None else repr(value)


def write_records_csv(
    path: str | Path,
    dataset: Dataset,
    fold_results: Sequence[FoldResult],
    header_lines: Iterable[str] = (),
    include_timings: bool = False,
) -> None:
    """Per-instance CSV.  Timing columns stay empty unless requested, so a
    rerun with the same seeds is byte-identical."""
    label_of = {
        v.id: v.state_labels for v in dataset.variables if v.role is Role.PRIVATE
    }
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for line in header_lines:
            fh.write(line.rstrip("\n") + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RECORD_COLUMNS)
        for fr in fold_results:
            for r in fr.records:
                x_star = ";".join(
                    label_of[v][s] for v, s in sorted(r.x_star.items())
                )
                writer.writerow(
                    [
                        fr.fold,
                        r.instance_id,
                        _format_optional(r.true_class),
                        r.predicted_class,
                        repr(r.posterior_y0),
                        _format_optional(r.brier),
                        repr(r.frl),
                        x_star,
                        _format_optional(r.time_bn_ns) if include_timings else "",
                        _format_optional(r.time_mrf_ns) if include_timings else "",
                    ]
                )


def read_records_csv(path: str | Path) -> list[tuple[int, FRLRecord]]:
    """Parse a per-instance CSV back into (fold, record) pairs; the private
    assignments are not recoverable from labels alone and stay empty."""
    out: list[tuple[int, FRLRecord]] = []
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if not rows or tuple(rows[0]) != RECORD_COLUMNS:
        raise EvaluationError(f"{path}: not a records CSV")
    empty = Assignment({})
    for row in rows[1:]:
        vals = dict(zip(RECORD_COLUMNS, row))
        record = FRLRecord(
            instance_id=int(vals["instance_id"]),
            true_class=int(vals["true_class"]) if vals["true_class"] else None,
            predicted_class=int(vals["predicted_class"]),
            posterior_y0=float(vals["posterior_y0"]),
            brier=float(vals["brier"]) if vals["brier"] else None,
            frl=float(vals["frl"]),
            x_star=empty,
            x_max=empty,
            x_min=empty,
            time_bn_ns=int(vals["time_bn_ns"]) if vals["time_bn_ns"] else None,
            time_mrf_ns=int(vals["time_mrf_ns"]) if vals["time_mrf_ns"] else None,
        )
        out.append((int(vals["fold"]), record))
    return out


def format_summary(
    summary: DatasetSummary | None,
    deciles: DecileSummary,
    timings: TimingSummary | None,
    header_lines: Iterable[str] = (),
) -> str:
    lines = list(header_lines)
    if summary is not None:
        lines.append("== dataset ==")
        lines.append("|X|\t|Z|\t|D|\tdelta\tk_fair")
        lines.append(
            f"{summary.n_private}\t{summary.n_public}\t{summary.n_records}"
            f"\t{summary.imbalance:.4f}\t{summary.fair_by_design_folds}"
        )
        lines.append("")
    lines.append("== frl deciles ==")
    lines.append("bin\tfrl_lo\tfrl_hi\tcount\taccuracy\tmean_brier")
    if deciles.zero_bin is not None:
        z = deciles.zero_bin
        lines.append(
            f"zero\t{z.lo!r}\t{z.hi!r}\t{z.count}\t{z.accuracy:.4f}"
            f"\t{z.mean_brier:.4f}"
        )
    for i, b in enumerate(deciles.bins):
        lines.append(
            f"{i}\t{b.lo!r}\t{b.hi!r}\t{b.count}\t{b.accuracy:.4f}"
            f"\t{b.mean_brier:.4f}"
        )
    lines.append("")
    lines.append("== timing ratios (brute force / mpe) ==")
    if timings is None:
        lines.append("not recorded")
    else:
        lines.append("min\tq1\tmedian\tq3\tmax\tn")
        lines.append(
            f"{timings.minimum:.4f}\t{timings.q1:.4f}\t{timings.median:.4f}"
            f"\t{timings.q3:.4f}\t{timings.maximum:.4f}\t{timings.count}"
        )
    return "\n".join(lines) + "\n"


def write_plot_data(
    scatter_path: str | Path,
    deciles_path: str | Path,
    records: Sequence[FRLRecord],
    deciles: DecileSummary,
    header_lines: Iterable[str] = (),
    brier_bins_path: str | Path | None = None,
    n_brier_bins: int = 10,
) -> None:
    """Plot-ready tables: (frl, brier) pairs, the decile bar table, and
    optionally the Brier-binned FRL boxplot table."""
    header_lines = list(header_lines)
    with open(scatter_path, "w", newline="", encoding="utf-8") as fh:
        for line in header_lines:
            fh.write(line.rstrip("\n") + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["frl", "brier"])
        for r in records:
            if r.brier is not None:
                writer.writerow([repr(r.frl), repr(r.brier)])
    with open(deciles_path, "w", newline="", encoding="utf-8") as fh:
        for line in header_lines:
            fh.write(line.rstrip("\n") + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["bin", "frl_lo", "frl_hi", "count", "accuracy", "mean_brier"])
        if deciles.zero_bin is not None:
            z = deciles.zero_bin
            writer.writerow(["zero", repr(z.lo), repr(z.hi), z.count,
                             repr(z.accuracy), repr(z.mean_brier)])
        for i, b in enumerate(deciles.bins):
            writer.writerow([i, repr(b.lo), repr(b.hi), b.count,
                             repr(b.accuracy), repr(b.mean_brier)])
    if brier_bins_path is None:
        return
    with open(brier_bins_path, "w", newline="", encoding="utf-8") as fh:
        for line in header_lines:
            fh.write(line.rstrip("\n") + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["bin", "brier_lo", "brier_hi", "count",
             "frl_min", "frl_q1", "frl_median", "frl_q3", "frl_max"]
        )
        for i, b in enumerate(brier_bin_table(records, n_brier_bins)):
            writer.writerow(
                [i, repr(b.brier_lo), repr(b.brier_hi), b.count,
                 repr(b.frl_min), repr(b.frl_q1), repr(b.frl_median),
                 repr(b.frl_q3), repr(b.frl_max)]
            )
