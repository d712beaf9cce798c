"""Command-line front end: discretise, run, oracle-sweep, summarise.

Configuration comes from an optional JSON file plus flag overrides (flags
win).  Every output file starts with comment lines recording the tool
version, the full effective configuration and all seeds; a fresh run-id
subdirectory is created per invocation so nothing is overwritten silently.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .evaluation import (
    EvaluationError,
    OracleMismatchError,
    all_records,
    dataset_summary,
    decile_summary,
    format_summary,
    read_records_csv,
    run_experiment,
    timing_ratios,
    write_plot_data,
    write_records_csv,
)
from .fairness import FairnessError, build_fairness_model, frl, frl_bruteforce
from .inference import InferenceError
from .ingest import (
    IngestConfig,
    IngestError,
    load_csv,
    read_discretised,
    write_discretised,
)
from .learning import (
    LearningError,
    StructureSearchConfig,
    learn_structure,
    save_network,
    with_roles,
)
from .model import Assignment, ModelError, Role

EXIT_OK = 0
EXIT_OTHER = 1
EXIT_INGEST = 10
EXIT_LEARNING = 11
EXIT_INFERENCE = 12
EXIT_ORACLE_MISMATCH = 13


@dataclass
class RunConfig:
    """Flat bag of every knob a command can use; serialized verbatim into
    output headers so runs are reproducible from their own artifacts."""

    input: str | None = None
    data: str | None = None
    meta: str | None = None
    out: str = "out"
    run_id: str | None = None
    # ingest
    target: str | None = None
    private: tuple[str, ...] = ()
    continuous: tuple[str, ...] = ()
    n_bins: int = 4
    folds: int = 10
    target_median: bool = False
    # structure search
    ess: float = 1.0
    tabu: int = 10
    max_iterations: int = 100
    max_parents: int | None = None
    force_target_arcs: bool = False
    # experiment
    oracle: bool = False
    brute_force_cap: int = 2**20
    timings: bool = False
    bins: int = 10
    jobs: int = 0  # 0 = machine parallelism
    seed: int = 0
    # oracle sweep
    max_private: int | None = None
    instances: int = 50

    def structure_config(self) -> StructureSearchConfig:
        return StructureSearchConfig(
            tabu_list_size=self.tabu,
            max_iterations=self.max_iterations,
            equivalent_sample_size=self.ess,
            max_parents=self.max_parents,
        )

    def ingest_config(self) -> IngestConfig:
        if not self.target:
            raise IngestError("no target column configured (use --target)")
        return IngestConfig(
            target_column=self.target,
            private_columns=self.private,
            continuous_columns=self.continuous,
            n_bins=self.n_bins,
            n_folds=self.folds,
            seed=self.seed,
            target_binarisation=self.target_median,
        )


def _load_config(path: str | None, overrides: dict) -> RunConfig:
    cfg = RunConfig()
    if path:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        known = {f.name for f in fields(RunConfig)}
        unknown = set(data) - known
        if unknown:
            raise IngestError(f"unknown config keys: {sorted(unknown)}")
        cfg = replace(cfg, **{k: _coerce(k, v) for k, v in data.items()})
    cleaned = {k: _coerce(k, v) for k, v in overrides.items() if v is not None}
    return replace(cfg, **cleaned)


def _coerce(key: str, value):
    if key in ("private", "continuous") and isinstance(value, (list, tuple)):
        return tuple(value)
    if key in ("private", "continuous") and isinstance(value, str):
        return tuple(c.strip() for c in value.split(",") if c.strip())
    return value


def _headers(cfg: RunConfig, extra_seeds: dict[str, int] | None = None) -> list[str]:
    payload = asdict(cfg)
    # placement-only knobs do not affect results and would break the
    # equal-header-implies-equal-body contract across run directories
    payload.pop("out", None)
    payload.pop("run_id", None)
    blob = json.dumps(payload, sort_keys=True)
    lines = [f"# fairbn {__version__}", f"# config {blob}", f"# seed {cfg.seed}"]
    for name, value in (extra_seeds or {}).items():
        lines.append(f"# {name} {value}")
    return lines


def _run_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    if cfg.run_id is not None:
        run = out / cfg.run_id
        if run.exists():
            raise IngestError(f"refusing to overwrite existing run dir {run}")
        run.mkdir()
        return run
    i = 1
    while (out / f"run-{i:04d}").exists():
        i += 1
    run = out / f"run-{i:04d}"
    run.mkdir()
    return run


def _resolve_meta(cfg: RunConfig) -> tuple[Path, Path]:
    if not cfg.data:
        raise IngestError("no discretised dataset configured (use --data)")
    data = Path(cfg.data)
    meta = Path(cfg.meta) if cfg.meta else data.with_suffix(".meta.json")
    if not data.exists():
        raise IngestError(f"dataset file {data} does not exist")
    if not meta.exists():
        raise IngestError(f"sidecar file {meta} does not exist")
    return data, meta


def cmd_discretise(cfg: RunConfig) -> int:
    if not cfg.input:
        raise IngestError("no input CSV configured (use --input)")
    dataset = load_csv(cfg.input, cfg.ingest_config())
    run = _run_dir(cfg)
    headers = _headers(cfg)
    write_discretised(dataset, run / "data.csv", run / "data.meta.json", headers)
    n_private = sum(1 for v in dataset.variables if v.role is Role.PRIVATE)
    n_public = sum(1 for v in dataset.variables if v.role is Role.PUBLIC)
    print(
        f"wrote {run / 'data.csv'}: {dataset.n_rows} rows, "
        f"{n_private} private / {n_public} public features, "
        f"{dataset.n_folds} folds"
    )
    return EXIT_OK


def cmd_run(cfg: RunConfig) -> int:
    data, meta = _resolve_meta(cfg)
    dataset = read_discretised(data, meta)
    results = run_experiment(
        dataset,
        cfg.structure_config(),
        oracle_check=cfg.oracle,
        brute_force_cap=cfg.brute_force_cap,
        force_target_arcs=cfg.force_target_arcs,
        jobs=cfg.jobs or (os.cpu_count() or 1),
    )
    run = _run_dir(cfg)
    headers = _headers(cfg, {"ingest_seed": dataset.seed})
    write_records_csv(
        run / "records.csv",
        dataset,
        results,
        headers,
        include_timings=cfg.timings or cfg.oracle,
    )
    for fr in results:
        save_network(fr.bn, run / f"network-fold-{fr.fold}.json", headers)
    records = all_records(results)
    deciles = decile_summary(records, cfg.bins)
    timing = None
    if cfg.oracle:
        timing = timing_ratios(records)
    summary = dataset_summary(dataset, results)
    (run / "summary.txt").write_text(
        format_summary(summary, deciles, timing, headers), encoding="utf-8"
    )
    write_plot_data(
        run / "plot_scatter.csv", run / "plot_deciles.csv", records, deciles,
        headers, brier_bins_path=run / "plot_brier_bins.csv",
        n_brier_bins=cfg.bins,
    )
    print(f"wrote results for {len(records)} instances to {run}")
    return EXIT_OK


def cmd_oracle_sweep(cfg: RunConfig) -> int:
    data, meta = _resolve_meta(cfg)
    dataset = read_discretised(data, meta)
    features = [v for v in dataset.variables if v.role is not Role.TARGET]
    if len(features) < 2:
        raise IngestError("the oracle sweep needs at least two features")
    target = dataset.target_variable()

    config = cfg.structure_config()
    if cfg.force_target_arcs:
        config = replace(
            config,
            forced_arcs=tuple((target.id, v.id) for v in features),
        )
    bn = learn_structure(dataset, config, np.arange(dataset.n_rows))

    base_private = sorted(v.id for v in features if v.role is Role.PRIVATE)
    pool = sorted(v.id for v in features if v.role is Role.PUBLIC)
    max_m = cfg.max_private if cfg.max_private is not None else len(features)
    max_m = min(max_m, len(features))

    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    n_inst = min(cfg.instances, dataset.n_rows)
    sample = np.sort(rng.choice(dataset.n_rows, size=n_inst, replace=False))
    ids = [v.id for v in dataset.variables]

    run = _run_dir(cfg)
    headers = _headers(cfg, {"ingest_seed": dataset.seed})
    rows_out: list[list] = []
    for m in range(max(2, len(base_private)), max_m + 1):
        private = base_private + pool[: m - len(base_private)]
        model = build_fairness_model(with_roles(bn, private))
        ratios: list[float] = []
        incomparable = 0
        for row in sample:
            instance = Assignment(dict(zip(ids, (int(s) for s in dataset.rows[row]))))
            record = frl(model, instance, instance_id=int(row))
            try:
                oracle = frl_bruteforce(
                    model, instance, int(row), cap=cfg.brute_force_cap
                )
            except FairnessError:
                incomparable += 1
                continue
            if abs(oracle.frl - record.frl) > 1e-9:
                raise OracleMismatchError(
                    f"|X|={m}, instance {int(row)}: MPE FRL {record.frl!r} "
                    f"!= brute force {oracle.frl!r}"
                )
            ratios.append(oracle.time_bn_ns / record.time_mrf_ns)
        if ratios:
            qs = [float(q) for q in np.percentile(ratios, [0, 25, 50, 75, 100])]
        else:
            qs = [float("nan")] * 5
        rows_out.append(
            [m, len(ratios), incomparable, *(repr(q) for q in qs),
             int(model.fair_by_design)]
        )

    with open(run / "sweep.csv", "w", newline="", encoding="utf-8") as fh:
        for line in headers:
            fh.write(line + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["n_private", "n_compared", "n_incomparable",
             "ratio_min", "ratio_q1", "ratio_median", "ratio_q3", "ratio_max",
             "degenerate_all_zero_frl"]
        )
        writer.writerows(rows_out)
    print(f"wrote {run / 'sweep.csv'}")
    return EXIT_OK


def cmd_summarise(cfg: RunConfig) -> int:
    if not cfg.data:
        raise IngestError("no records CSV configured (use --data)")
    pairs = read_records_csv(cfg.data)
    records = [r for _, r in pairs]
    deciles = decile_summary(records, cfg.bins)
    timing = None
    if all(r.time_bn_ns is not None and r.time_mrf_ns is not None for r in records):
        timing = timing_ratios(records)
    run = _run_dir(cfg)
    (run / "summary.txt").write_text(
        format_summary(None, deciles, timing, _headers(cfg)), encoding="utf-8"
    )
    print(f"wrote {run / 'summary.txt'}")
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fairbn",
        description="Robustness-based fairness analysis of network classifiers.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="JSON config file; flags override it")
        p.add_argument("--out", help="output directory (default: out)")
        p.add_argument("--run-id", dest="run_id", help="fixed run subdirectory name")
        p.add_argument("--seed", type=int, help="run seed (recorded in headers)")

    p = sub.add_parser("discretise", help="turn a raw CSV into a discretised dataset")
    common(p)
    p.add_argument("--input", help="raw CSV file with a header row")
    p.add_argument("--target", help="target column name")
    p.add_argument("--private", help="comma-separated private column names")
    p.add_argument("--continuous", help="comma-separated numeric column names")
    p.add_argument("--n-bins", dest="n_bins", type=int,
                   help="quantile bins for numeric columns (default 4)")
    p.add_argument("--folds", type=int, help="stratified folds (default 10)")
    p.add_argument("--target-median", dest="target_median", action="store_const",
                   const=True, help="binarise a numeric target at its median")

    p = sub.add_parser("run", help="cross-validated robustness experiment")
    common(p)
    p.add_argument("--data", help="discretised CSV from the discretise command")
    p.add_argument("--meta", help="sidecar path (default: <data>.meta.json)")
    p.add_argument("--ess", type=float, help="equivalent sample size s (default 1)")
    p.add_argument("--force-target-arcs", dest="force_target_arcs",
                   action="store_const", const=True,
                   help="force an arc from the target to every feature")
    p.add_argument("--oracle", action="store_const", const=True,
                   help="run the brute-force oracle next to the MPE path")
    p.add_argument("--cap", dest="brute_force_cap", type=int,
                   help="largest private state space the oracle sweeps")
    p.add_argument("--timings", action="store_const", const=True,
                   help="write wall-clock timing columns (non-reproducible)")
    p.add_argument("--bins", type=int, help="FRL quantile bins (default 10)")
    p.add_argument("--jobs", type=int,
                   help="fold worker processes (default: machine parallelism)")

    p = sub.add_parser("oracle-sweep",
                       help="grow the private set and compare both FRL methods")
    common(p)
    p.add_argument("--data", help="discretised CSV")
    p.add_argument("--meta", help="sidecar path (default: <data>.meta.json)")
    p.add_argument("--ess", type=float)
    p.add_argument("--force-target-arcs", dest="force_target_arcs",
                   action="store_const", const=True)
    p.add_argument("--max-private", dest="max_private", type=int,
                   help="largest private set size to sweep")
    p.add_argument("--instances", type=int,
                   help="test instances sampled per sweep point (default 50)")
    p.add_argument("--cap", dest="brute_force_cap", type=int)

    p = sub.add_parser("summarise", help="rebuild summaries from a records CSV")
    common(p)
    p.add_argument("--data", help="records CSV written by the run command")
    p.add_argument("--bins", type=int, help="FRL quantile bins (default 10)")
    return parser


_COMMANDS = {
    "discretise": cmd_discretise,
    "run": cmd_run,
    "oracle-sweep": cmd_oracle_sweep,
    "summarise": cmd_summarise,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = vars(parser.parse_args(argv))
    command = args.pop("command")
    config_path = args.pop("config", None)
    try:
        cfg = _load_config(config_path, args)
        return _COMMANDS[command](cfg)
    except OracleMismatchError as exc:
        print(f"fairbn: oracle mismatch: {exc}", file=sys.stderr)
        return EXIT_ORACLE_MISMATCH
    except IngestError as exc:
        print(f"fairbn: ingest error: {exc}", file=sys.stderr)
        return EXIT_INGEST
    except (LearningError, EvaluationError) as exc:
        print(f"fairbn: learning error: {exc}", file=sys.stderr)
        return EXIT_LEARNING
    except (InferenceError, FairnessError, ModelError) as exc:
        print(f"fairbn: inference error: {exc}", file=sys.stderr)
        return EXIT_INFERENCE
    except OSError as exc:
        print(f"fairbn: {exc}", file=sys.stderr)
        return EXIT_OTHER


if __name__ == "__main__":
    sys.exit(main())
