# -*- coding: utf-8 -*-
"""
End-to-end experiment runner.

A cell is one (automaton, D) pair.  Automata and datasets are prepared in
the main process order, cells run on a bounded process pool, and only the
main process writes the cell registry, the manifest and the results TSV.
"""
import hashlib
import json
import logging
import math
import os
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path
from typing import Callable, Iterable, Iterator, Optional, Sequence
import pandas as pd
from .analysis import analyze
from .automaton import load_automaton
from .dataset import build_dataset, read_corpus, write_corpus
from .evaluation import (
    EvalRecord,
    KlEstimate,
    RESULTS_COLUMNS,
    ScoreFile,
    kl_estimate,
    write_results,
    write_scores,
)
from .exceptions import CustomBaseException, EvaluationException, ExperimentException
from .generation import generate_families, write_family_manifest
from .rnn import save_checkpoint, score, train
from .seeding import RNG_ALGORITHM, derive_int_seed
from .settings import ExperimentConfig, StoreSettings, TrainConfig
from .store import CellDal, CellRecord, open_cells


log = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
RESULTS_NAME = "results.tsv"
RUNNING = "running"
PENDING = "pending"
EXP_LEN_BIN_WIDTH = 5.0
PLOT_ALIASES = {"Q": "|Q|", "Sigma": "|Sigma|", "QSigma": "|Q||Sigma|", "H": "H_bits", "kl": "kl_bits"}
DEFAULT_PLOTS = (
    ("|Q|", "R", "kl_bits"),
    ("|Sigma|", "R", "kl_bits"),
    ("D", "R", "kl_bits"),
    ("complexity", None, "kl_bits"),
    ("exp_len_bin", None, "kl_bits"),
    ("|Q|", "R", "H_bits"),
    ("|Sigma|", "R", "H_bits"),
)


def tool_version() -> str:
    try:
        return version("ddcRegularLM")
    except PackageNotFoundError:
        return "0.0.0"


def file_sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def cell_id(automaton_id: str, hidden_size: int) -> str:
    return f"{automaton_id}-D{hidden_size}"


@dataclass(frozen=True)
class RunLayout:
    root: Path

    @property
    def automata(self) -> Path:
        return self.root / "automata"

    @property
    def datasets(self) -> Path:
        return self.root / "datasets"

    @property
    def models(self) -> Path:
        return self.root / "models"

    @property
    def scores(self) -> Path:
        return self.root / "scores"

    @property
    def manifest(self) -> Path:
        return self.root / MANIFEST_NAME

    @property
    def results(self) -> Path:
        return self.root / RESULTS_NAME

    def relative(self, path: str | Path) -> str:
        return Path(path).relative_to(self.root).as_posix()


@dataclass(frozen=True)
class DatasetTask:
    automaton_id: str
    automaton_file: str
    dataset_file: str
    seed: int
    size: int
    max_len: int
    min_test: int


@dataclass(frozen=True)
class CellTask:
    cell_id: str
    automaton_id: str
    D: int
    automaton_file: str
    dataset_file: str
    checkpoint_file: str
    scores_file: str
    dataset_seed: int
    max_len: int
    train_config_json: str


@dataclass
class ExperimentResult:
    manifest_path: Path
    results_path: Path
    n_ok: int
    n_failed: int
    n_skipped: int
    manifest: dict


def dataset_key(task: DatasetTask) -> str:
    """content key of a corpus: the automaton bytes plus every sampling parameter"""
    payload = {
        "automaton_sha256": file_sha256(task.automaton_file),
        "seed": task.seed,
        "size": task.size,
        "max_len": task.max_len,
        "min_test": task.min_test,
    }
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode("utf-8")).hexdigest()


def _key_path(dataset_file: str | Path) -> Path:
    path = Path(dataset_file)
    return path.with_name(f"{path.name}.key")


def _corpus_is_current(path: Path, key: str) -> bool:
    key_path = _key_path(path)
    if not (path.is_file() and key_path.is_file()):
        return False
    try:
        stored = json.loads(key_path.read_text())
    except json.JSONDecodeError:
        return False
    return isinstance(stored, dict) and stored.get("key") == key and stored.get("sha256") == file_sha256(path)


def _prepare_dataset(task: DatasetTask) -> tuple[str, Optional[str]]:
    """returns (automaton_id, error)"""
    path = Path(task.dataset_file)
    key_path = _key_path(path)
    try:
        key = dataset_key(task)
        if _corpus_is_current(path, key):
            return task.automaton_id, None
        key_path.unlink(missing_ok=True)
        path.unlink(missing_ok=True)
        log.debug(f"Sampling corpus {path.name}")
        dpfsa = load_automaton(task.automaton_file)
        dataset = build_dataset(
            dpfsa,
            seed=task.seed,
            size=task.size,
            max_len=task.max_len,
            min_test=task.min_test,
            automaton_id=task.automaton_id,
        )
        write_corpus(dataset, path)
        key_path.write_text(json.dumps({"key": key, "sha256": file_sha256(path)}))
        return task.automaton_id, None
    except CustomBaseException as e:
        return task.automaton_id, f"{type(e).__name__}: {e.msg}"
    except OSError as e:
        return task.automaton_id, f"{type(e).__name__}: {e}"


def _run_cell(task: CellTask) -> dict:
    """trains, scores and evaluates one cell; failures are returned, never raised"""
    start = time.perf_counter()
    out = {"cell_id": task.cell_id, "status": "failed", "error": None, "kl": None, "loss_trace": None}
    try:
        dpfsa = load_automaton(task.automaton_file)
        dataset = read_corpus(
            task.dataset_file,
            source_automaton_id=task.automaton_id,
            seed=task.dataset_seed,
            max_len=task.max_len,
        )
        config = TrainConfig.model_validate_json(task.train_config_json)
        result = train(dataset.train, dpfsa.alphabet_size, task.D, config)
        save_checkpoint(
            result.model,
            task.checkpoint_file,
            metadata={
                "cell_id": task.cell_id,
                "automaton_id": task.automaton_id,
                "epoch_losses": result.epoch_losses,
                "steps": result.steps,
                "train_seed": config.seed,
            },
        )
        scores = ScoreFile(
            model_id=task.cell_id,
            automaton_id=task.automaton_id,
            records=tuple(score(result.model, dataset.test)),
        )
        write_scores(scores, task.scores_file)
        kl = kl_estimate(dpfsa, scores, dataset)
        out.update(status="ok", kl=kl.to_dict(), loss_trace=result.epoch_losses)
        log.info(f"Cell {task.cell_id} | kl={kl.kl_bits:.4f} +- {kl.stderr_bits:.4f} bits")
    except CustomBaseException as e:
        out["error"] = f"{type(e).__name__}: {e.msg}"
    except (ArithmeticError, ValueError, OSError) as e:
        out["error"] = f"{type(e).__name__}: {e}"
        log.error(f"Cell {task.cell_id} failed | {repr(e)}")
    out["wall_clock"] = time.perf_counter() - start
    return out


def _map(fn: Callable, tasks: Sequence, parallelism: int) -> Iterator:
    if parallelism <= 1 or len(tasks) <= 1:
        yield from map(fn, tasks)
        return
    with ProcessPoolExecutor(max_workers=min(parallelism, len(tasks))) as pool:
        yield from pool.map(fn, tasks)


def _cell_is_current(row, layout: RunLayout) -> bool:
    if row is None:
        return False
    files = (
        (row["automaton_file"], row["automaton_sha256"]),
        (row["dataset_file"], row["dataset_sha256"]),
        (row["checkpoint_file"], row["checkpoint_sha256"]),
        (row["scores_file"], row["scores_sha256"]),
    )
    if row["status"] == "failed":
        # a failed cell stays failed while its automaton is unchanged
        auto = layout.root / (row["automaton_file"] or "")
        return row["automaton_file"] is not None and auto.is_file() and file_sha256(auto) == row["automaton_sha256"]
    if row["status"] != "ok":
        return False
    for rel, digest in files:
        if rel is None or digest is None:
            return False
        path = layout.root / rel
        if not path.is_file() or file_sha256(path) != digest:
            return False
    return True


def _sha_or_none(path: Path) -> Optional[str]:
    return file_sha256(path) if path.is_file() else None


def _previous_config_hash(layout: RunLayout) -> Optional[str]:
    if not layout.manifest.is_file():
        return None
    try:
        return json.loads(layout.manifest.read_text()).get("config_hash")
    except (OSError, json.JSONDecodeError):
        return None


def run_experiment(config: ExperimentConfig, resume: bool = True) -> ExperimentResult:
    """
    Runs every (automaton, D) cell of the configured grid.  Cells whose
    outputs are present with matching content hashes are not recomputed.
    Raises ExperimentException only when no cell succeeds.
    """
    started = datetime.now(timezone.utc)
    layout = RunLayout(Path(config.output_dir))
    layout.root.mkdir(parents=True, exist_ok=True)
    config_hash = config.config_hash()
    gen = config.generation
    log.info(f"Experiment {config_hash[:12]} | output_dir={layout.root}")

    families = generate_families(gen, config.replicates)
    automaton_files = {}
    for key, family in sorted(families.items(), key=lambda kv: kv[0].prefix):
        family_dir = layout.automata / key.prefix.rstrip("-")
        write_family_manifest(family, gen, family_dir, key)
        for dpfsa in family:
            automaton_files[dpfsa.name] = family_dir / f"{dpfsa.name}.json"
    if not automaton_files:
        raise ExperimentException("no automaton passed the expected-length filter")

    store_path = layout.root / StoreSettings().file_name
    timings = {}
    with open_cells(store_path) as cells:
        if not resume or _previous_config_hash(layout) not in (None, config_hash):
            log.warning("Configuration changed or resume disabled, clearing the cell registry")
            cells.clear()

        interrupted = cells.by_status(RUNNING)
        if interrupted:
            log.warning(f"{len(interrupted)} cells were interrupted by an earlier run and will be recomputed")
            for row in interrupted:
                cells.update_status(row["cell_id"], PENDING)

        pending, skipped = _pending_cells(cells, config, layout, automaton_files)
        dataset_errors = _prepare_datasets(config, layout, automaton_files, pending)

        runnable = []
        for task in pending:
            error = dataset_errors.get(task.automaton_id)
            if error is not None:
                _save_cell(cells, layout, task, {"status": "failed", "error": error, "wall_clock": 0.0})
                timings[task.cell_id] = 0.0
            else:
                runnable.append(task)

        log.info(f"{len(runnable)} cells to run, {skipped} up to date")
        for task in runnable:
            cells.update_status(task.cell_id, RUNNING)
        by_id = {t.cell_id: t for t in runnable}
        for out in _map(_run_cell, runnable, config.parallelism):
            task = by_id[out["cell_id"]]
            _save_cell(cells, layout, task, out)
            timings[task.cell_id] = out["wall_clock"]
            if out["status"] != "ok":
                log.warning(f"Cell {task.cell_id} failed | {out['error']}")

        rows = [r for r in cells.all() if r["automaton_id"] in automaton_files]

    for r in rows:
        timings.setdefault(r["cell_id"], r["wall_clock"] or 0.0)
    records = results_from_rows(rows, layout)
    write_results(records, layout.results)
    manifest = build_manifest(config, rows, timings, started)
    layout.manifest.write_text(json.dumps(manifest, indent=2, sort_keys=True))

    n_ok = sum(1 for r in rows if r["status"] == "ok")
    n_failed = len(rows) - n_ok
    log.info(f"Experiment finished | ok={n_ok} failed={n_failed} | {layout.results}")
    if n_ok == 0:
        raise ExperimentException(f"all {n_failed} cells failed, see {layout.manifest}")
    return ExperimentResult(layout.manifest, layout.results, n_ok, n_failed, skipped, manifest)


def _pending_cells(
    cells: CellDal,
    config: ExperimentConfig,
    layout: RunLayout,
    automaton_files: dict[str, Path],
) -> tuple[list[CellTask], int]:
    gen = config.generation
    tasks, skipped = [], 0
    for automaton_id, auto_path in sorted(automaton_files.items()):
        dataset_seed = derive_int_seed(gen.master_seed, "dataset", automaton_id)
        for d in config.d_grid:
            cid = cell_id(automaton_id, d)
            if _cell_is_current(cells.get(cid), layout):
                skipped += 1
                continue
            train_config = config.train.model_copy(
                update={"seed": derive_int_seed(gen.master_seed, "train", config.train.seed, automaton_id, d)}
            )
            tasks.append(
                CellTask(
                    cell_id=cid,
                    automaton_id=automaton_id,
                    D=d,
                    automaton_file=str(auto_path),
                    dataset_file=str(layout.datasets / f"{automaton_id}.jsonl"),
                    checkpoint_file=str(layout.models / f"{cid}.json"),
                    scores_file=str(layout.scores / f"{cid}.jsonl"),
                    dataset_seed=dataset_seed,
                    max_len=config.dataset.max_len,
                    train_config_json=train_config.model_dump_json(),
                )
            )
    return tasks, skipped


def _prepare_datasets(
    config: ExperimentConfig,
    layout: RunLayout,
    automaton_files: dict[str, Path],
    pending: Iterable[CellTask],
) -> dict[str, Optional[str]]:
    needed = sorted({t.automaton_id for t in pending})
    tasks = [
        DatasetTask(
            automaton_id=a,
            automaton_file=str(automaton_files[a]),
            dataset_file=str(layout.datasets / f"{a}.jsonl"),
            seed=derive_int_seed(config.generation.master_seed, "dataset", a),
            size=config.dataset.size,
            max_len=config.dataset.max_len,
            min_test=config.dataset.min_test,
        )
        for a in needed
    ]
    return dict(_map(_prepare_dataset, tasks, config.parallelism))


def _save_cell(cells: CellDal, layout: RunLayout, task: CellTask, out: dict) -> None:
    paths = {
        "automaton": Path(task.automaton_file),
        "dataset": Path(task.dataset_file),
        "checkpoint": Path(task.checkpoint_file),
        "scores": Path(task.scores_file),
    }
    ok = out["status"] == "ok"
    record = CellRecord(
        cell_id=task.cell_id,
        automaton_id=task.automaton_id,
        D=task.D,
        status=out["status"],
        error=out.get("error"),
        wall_clock=out.get("wall_clock"),
        kl_json=json.dumps(out["kl"], sort_keys=True) if out.get("kl") else None,
        loss_trace_json=json.dumps(out["loss_trace"]) if out.get("loss_trace") else None,
    )
    for kind, path in paths.items():
        present = path.is_file() and (ok or kind in ("automaton", "dataset"))
        setattr(record, f"{kind}_file", layout.relative(path) if present else None)
        setattr(record, f"{kind}_sha256", _sha_or_none(path) if present else None)
    cells.save(record)


def results_from_rows(rows: Sequence, layout: RunLayout) -> list[EvalRecord]:
    """
    One EvalRecord per successful cell.  Predictors and H(A) are recomputed
    from the automaton file; only the cross-entropy comes from the registry.
    """
    records = []
    analyses = {}
    for row in sorted(rows, key=lambda r: r["cell_id"]):
        if row["status"] != "ok":
            continue
        auto_path = layout.root / row["automaton_file"]
        dpfsa = load_automaton(auto_path).with_name(row["automaton_id"])
        if row["automaton_id"] not in analyses:
            analyses[row["automaton_id"]] = analyze(dpfsa)
        report = analyses[row["automaton_id"]]
        stored = KlEstimate(**json.loads(row["kl_json"]))
        kl = replace(
            stored,
            entropy_bits=report.entropy_bits,
            kl_bits=stored.cross_entropy_bits - report.entropy_bits,
        )
        records.append(EvalRecord.build(dpfsa, row["cell_id"], row["D"], kl, report.expected_length))
    return records


def build_manifest(config: ExperimentConfig, rows: Sequence, timings: dict, started: datetime) -> dict:
    cells = []
    for row in sorted(rows, key=lambda r: r["cell_id"]):
        files = {}
        for kind in ("automaton", "dataset", "checkpoint", "scores"):
            if row[f"{kind}_file"] is not None:
                files[kind] = {"path": row[f"{kind}_file"], "sha256": row[f"{kind}_sha256"]}
        cells.append(
            {
                "cell_id": row["cell_id"],
                "automaton_id": row["automaton_id"],
                "D": row["D"],
                "status": row["status"],
                "error": row["error"],
                "files": files,
                "kl": json.loads(row["kl_json"]) if row["kl_json"] else None,
                "loss_trace": json.loads(row["loss_trace_json"]) if row["loss_trace_json"] else None,
            }
        )
    manifest = {
        "config_hash": config.config_hash(),
        "config": json.loads(config.canonical_json()),
        "tool_version": tool_version(),
        "rng_algorithm": RNG_ALGORITHM,
        "cells": cells,
    }
    manifest["manifest_hash"] = hashlib.sha256(json.dumps(manifest, sort_keys=True).encode("utf-8")).hexdigest()
    manifest["timing"] = {
        "started_at": started.isoformat(timespec="seconds"),
        "finished_at": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "cells": {k: timings[k] for k in sorted(timings)},
        "platform": platform.platform(),
        "cpu_count": os.cpu_count(),
        "parallelism": config.parallelism,
    }
    return manifest


def verify_manifest(path: str | Path) -> list[str]:
    """problems found; empty when every referenced file exists with its recorded hash"""
    path = Path(path)
    root = path.parent
    manifest = json.loads(path.read_text())
    problems = []
    body = {k: v for k, v in manifest.items() if k not in ("timing", "manifest_hash")}
    digest = hashlib.sha256(json.dumps(body, sort_keys=True).encode("utf-8")).hexdigest()
    if digest != manifest.get("manifest_hash"):
        problems.append("manifest_hash does not match the manifest body")
    for cell in manifest["cells"]:
        for kind, ref in cell["files"].items():
            target = root / ref["path"]
            if not target.is_file():
                problems.append(f"{cell['cell_id']}: {kind} file missing | {ref['path']}")
            elif file_sha256(target) != ref["sha256"]:
                problems.append(f"{cell['cell_id']}: {kind} file hash mismatch | {ref['path']}")
    return problems


@dataclass(frozen=True)
class PlotGrid:
    rows: str
    cols: Optional[str]
    value: str
    mean: pd.DataFrame
    count: pd.DataFrame


def _resolve_column(frame: pd.DataFrame, name: str) -> str:
    name = PLOT_ALIASES.get(name, name)
    if name not in frame.columns:
        raise EvaluationException(f"unknown column {name!r}; available: {list(frame.columns)}")
    return name


def load_results_frame(results_tsv: str | Path) -> pd.DataFrame:
    """results TSV plus the derived plot axes complexity and exp_len_bin"""
    frame = pd.read_csv(results_tsv, sep="\t", na_values=["NA"], keep_default_na=False)
    if {"|Q|", "|Sigma|", "R"} <= set(frame.columns):
        frame["complexity"] = frame["|Sigma|"] + frame["|Q|"] + frame["R"]
    if "exp_len" in frame.columns:
        frame["exp_len_bin"] = (frame["exp_len"] // EXP_LEN_BIN_WIDTH) * EXP_LEN_BIN_WIDTH
    return frame


def export_plot(
    results_tsv: str | Path,
    rows: str,
    cols: Optional[str] = None,
    value: str = "kl_bits",
) -> PlotGrid:
    """mean and count of `value` per (rows, cols) cell; empty cells are NaN in the mean grid"""
    frame = load_results_frame(results_tsv)
    rows = _resolve_column(frame, rows)
    value = _resolve_column(frame, value)
    if value not in (RESULTS_COLUMNS["kl_bits"], RESULTS_COLUMNS["entropy_bits"], RESULTS_COLUMNS["cross_entropy_bits"]):
        raise EvaluationException(f"value must be kl_bits, H_bits or ce_bits, got {value!r}")
    if cols is None:
        grouped = frame.groupby(rows)[value]
        mean = grouped.mean().to_frame(value)
        count = grouped.count().to_frame(value)
    else:
        cols = _resolve_column(frame, cols)
        mean = frame.pivot_table(index=rows, columns=cols, values=value, aggfunc="mean", dropna=False)
        count = frame.pivot_table(index=rows, columns=cols, values=value, aggfunc="count", dropna=False)
        row_levels = sorted(frame[rows].dropna().unique())
        col_levels = sorted(frame[cols].dropna().unique())
        mean = mean.reindex(index=row_levels, columns=col_levels)
        count = count.reindex(index=row_levels, columns=col_levels).fillna(0).astype(int)
    return PlotGrid(rows=rows, cols=cols, value=value, mean=mean, count=count)


def _slug(name: str) -> str:
    keep = "".join(c if c.isalnum() else "_" for c in name)
    return "_".join(p for p in keep.split("_") if p)


def write_plot_grid(grid: PlotGrid, path: str | Path) -> tuple[Path, Path]:
    """mean grid at `path`, counts next to it with a .count.tsv suffix"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count_path = path.with_name(f"{path.stem}.count.tsv")
    header = grid.rows if grid.cols is None else f"{grid.rows}\\{grid.cols}"
    grid.mean.to_csv(path, sep="\t", na_rep="NA", float_format="%.17g", index_label=header)
    grid.count.to_csv(count_path, sep="\t", na_rep="NA", index_label=header)
    return path, count_path


def plot_file_name(grid: PlotGrid) -> str:
    name = f"{_slug(grid.value)}_by_{_slug(grid.rows)}" + (f"_{_slug(grid.cols)}" if grid.cols else "")
    return f"{name}.tsv"


def export_default_plots(results_tsv: str | Path, out_dir: str | Path) -> list[Path]:
    out_dir = Path(out_dir)
    written = []
    for rows, cols, value in DEFAULT_PLOTS:
        grid = export_plot(results_tsv, rows, cols, value)
        written.extend(write_plot_grid(grid, out_dir / plot_file_name(grid)))
    return written


def summarize(records: Sequence[EvalRecord]) -> dict:
    """mean KL per D, a quick progress view"""
    by_d = {}
    for r in records:
        if math.isfinite(r.kl_bits):
            by_d.setdefault(r.D, []).append(r.kl_bits)
    return {d: sum(v) / len(v) for d, v in sorted(by_d.items())}
