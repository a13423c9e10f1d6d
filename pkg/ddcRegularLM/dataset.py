# -*- coding: utf-8 -*-
import hashlib
import json
import logging
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence
import numpy as np
from .automaton import Dpfsa, StringRecord
from .exceptions import DatasetException, InfeasibleSplitException
from .seeding import derive_rng


log = logging.getLogger(__name__)

HISTOGRAM_BIN_WIDTH = 8


@dataclass(frozen=True)
class DatasetStats:
    mean_length: float
    num_truncated: int
    histogram: dict[int, int]

    def to_dict(self) -> dict:
        return {
            "mean_length": self.mean_length,
            "num_truncated": self.num_truncated,
            "histogram": {str(k): v for k, v in sorted(self.histogram.items())},
        }


@dataclass(frozen=True)
class Dataset:
    train: tuple[StringRecord, ...]
    test: tuple[StringRecord, ...]
    source_automaton_id: str
    seed: int
    max_len: int
    stats: Optional[DatasetStats] = field(default=None, compare=False)

    @property
    def size(self) -> int:
        return len(self.train) + len(self.test)


def _cumulative(dpfsa: Dpfsa) -> np.ndarray:
    cdf = np.cumsum(dpfsa.probs, axis=0)
    cdf[-1, :] = 1.0
    return cdf


def _draw(cdf_columns: np.ndarray, u: np.ndarray) -> np.ndarray:
    """inverse-CDF draw; cdf_columns has one row per string"""
    return np.sum(u[:, None] >= cdf_columns, axis=1)


def sample_corpus(dpfsa: Dpfsa, rng: np.random.Generator, n: int, max_len: int = 256) -> list[StringRecord]:
    """
    Ancestral sampling of n strings, vectorised across strings.  A string
    stops when EOS is drawn, or is truncated when a symbol is drawn after
    max_len symbols have already been emitted.
    """
    cdf = _cumulative(dpfsa).T
    eos = dpfsa.eos
    states = np.full(n, dpfsa.initial_state, dtype=np.int64)
    active = np.arange(n)
    symbols = [[] for _ in range(n)]
    truncated = np.zeros(n, dtype=bool)

    while active.size:
        draws = _draw(cdf[states[active]], rng.random(active.size))
        still = []
        for i, y in zip(active, draws):
            if y == eos:
                continue
            if len(symbols[i]) == max_len:
                truncated[i] = True
                continue
            symbols[i].append(int(y))
            states[i] = dpfsa.topology[states[i], y]
            still.append(i)
        active = np.asarray(still, dtype=np.int64)

    return [StringRecord(tuple(s), bool(t)) for s, t in zip(symbols, truncated)]


def sample_string(dpfsa: Dpfsa, rng: np.random.Generator, max_len: int = 256) -> StringRecord:
    return sample_corpus(dpfsa, rng, 1, max_len)[0]


def _group_rank(seed: int, symbols: tuple[int, ...]) -> bytes:
    h = hashlib.blake2b(digest_size=16)
    h.update(int(seed).to_bytes(8, "little", signed=False))
    h.update(np.asarray(symbols, dtype=np.int64).tobytes())
    h.update(len(symbols).to_bytes(4, "little"))
    return h.digest()


def split_groups(
    strings: Sequence[StringRecord],
    seed: int,
    min_test: int,
) -> tuple[list[StringRecord], list[StringRecord]]:
    """whole groups of identical strings go to test, by descending seeded hash, until |test| >= min_test"""
    counts = Counter(s.symbols for s in strings)
    order = sorted(counts, key=lambda g: _group_rank(seed, g), reverse=True)

    test_groups = set()
    n_test = 0
    for group in order:
        if n_test >= min_test:
            break
        test_groups.add(group)
        n_test += counts[group]

    if n_test == len(strings):
        group, count = counts.most_common(1)[0]
        raise InfeasibleSplitException(
            f"Infeasible train/test split: group {list(group)[:16]} (length {len(group)}) "
            f"carries {count} of {len(strings)} strings, leaving no training data"
        )

    train = [s for s in strings if s.symbols not in test_groups]
    test = [s for s in strings if s.symbols in test_groups]
    return train, test


def build_dataset(
    dpfsa: Dpfsa,
    seed: int,
    size: int = 20000,
    max_len: int = 256,
    min_test: int = 2000,
    automaton_id: Optional[str] = None,
) -> Dataset:
    if size <= min_test:
        raise DatasetException(f"size ({size}) must exceed min_test ({min_test})")
    rng = derive_rng(seed, "dataset")
    strings = sample_corpus(dpfsa, rng, size, max_len)
    train, test = split_groups(strings, seed, min_test)
    dataset = Dataset(
        train=tuple(train),
        test=tuple(test),
        source_automaton_id=automaton_id if automaton_id is not None else dpfsa.name,
        seed=seed,
        max_len=max_len,
    )
    stats = dataset_stats(dataset)
    log.info(
        f"Dataset {dataset.source_automaton_id} | train={len(train)} test={len(test)} "
        f"mean_len={stats.mean_length:.2f} truncated={stats.num_truncated}"
    )
    return replace(dataset, stats=stats)


def dataset_stats(dataset: Dataset) -> DatasetStats:
    strings = dataset.train + dataset.test
    if not strings:
        raise DatasetException("statistics of an empty dataset")
    lengths = np.array([s.length for s in strings])
    bins = Counter(int(v) for v in (lengths // HISTOGRAM_BIN_WIDTH) * HISTOGRAM_BIN_WIDTH)
    return DatasetStats(
        mean_length=float(lengths.mean()),
        num_truncated=sum(1 for s in strings if s.truncated),
        histogram=dict(sorted(bins.items())),
    )


def write_corpus(dataset: Dataset, path: str | Path) -> Path:
    """writes through a sibling temp file so a crash never leaves a partial corpus"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp")
    with tmp.open("w", encoding="utf-8") as f:
        for split, records in (("train", dataset.train), ("test", dataset.test)):
            for s in records:
                f.write(json.dumps({"split": split, "ids": list(s.symbols), "truncated": s.truncated}) + "\n")
    tmp.replace(path)
    return path


def read_corpus(
    path: str | Path,
    source_automaton_id: str = "",
    seed: int = 0,
    max_len: int = 256,
) -> Dataset:
    path = Path(path)
    splits = {"train": [], "test": []}
    try:
        with path.open(encoding="utf-8") as f:
            for lineno, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                row = json.loads(line)
                if row.get("split") not in splits:
                    raise DatasetException(f"{path}:{lineno}: split must be 'train' or 'test'")
                splits[row["split"]].append(StringRecord.of(row["ids"], row.get("truncated", False)))
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as e:
        raise DatasetException(f"Unable to read corpus | {path} | {repr(e)}")
    dataset = Dataset(
        train=tuple(splits["train"]),
        test=tuple(splits["test"]),
        source_automaton_id=source_automaton_id or path.stem,
        seed=seed,
        max_len=max_len,
    )
    return replace(dataset, stats=dataset_stats(dataset))
