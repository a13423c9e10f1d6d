# -*- coding: utf-8 -*-
import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import NamedTuple, Optional, Sequence
import numpy as np
import pandas as pd
from scipy.special import logsumexp
from .analysis import LN2, entropy_nats
from .automaton import Dpfsa, StringRecord, token_logprobs
from .dataset import Dataset
from .exceptions import EvaluationException, ScoreFileException
from .rnn import ScoreRecord


log = logging.getLogger(__name__)

UNITS = ("nats", "bits")
NORMALIZATION_TOL = 1e-6
TOTAL_TOL = 1e-6


@dataclass(frozen=True)
class ScoreFile:
    model_id: str
    automaton_id: str
    records: tuple[ScoreRecord, ...]
    units: str = "nats"


class CrossEntropyEstimate(NamedTuple):
    mean_bits: float
    stderr_bits: float
    n_strings: int
    n_excluded_truncated: int
    low_confidence: bool


@dataclass(frozen=True)
class KlEstimate:
    kl_bits: float
    cross_entropy_bits: float
    entropy_bits: float
    stderr_bits: float
    n_strings: int
    n_excluded_truncated: int
    low_confidence: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def empirical_cross_entropy(scores: ScoreFile, dataset: Dataset) -> CrossEntropyEstimate:
    """
    Monte-Carlo cross-entropy over the untruncated test strings, bits per
    string.  Duplicated test strings keep their multiplicity.
    """
    if scores.units != "nats":
        raise EvaluationException(f"scores must be in nats internally, got {scores.units!r}")
    by_index = {}
    for r in scores.records:
        if r.string_index in by_index:
            raise EvaluationException(f"duplicate score for string index {r.string_index}")
        by_index[r.string_index] = r

    test = dataset.test
    unknown = sorted(set(by_index) - set(range(len(test))))
    if unknown:
        raise EvaluationException(f"score indices {unknown[:10]} do not exist in the test split")

    values = []
    excluded = 0
    for i, s in enumerate(test):
        if s.truncated:
            excluded += 1
            continue
        if i not in by_index:
            raise EvaluationException(f"missing score for test string index {i}")
        r = by_index[i]
        if len(r.per_token_logprobs) != s.length + 1:
            raise EvaluationException(
                f"string index {i}: {len(r.per_token_logprobs)} token scores, expected {s.length + 1}"
            )
        values.append(-r.total_logprob / LN2)

    n = len(values)
    if n == 0:
        raise EvaluationException("no untruncated test strings to score")
    values = np.asarray(values)
    mean = float(values.mean())
    stderr = float(values.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    if excluded:
        log.info(f"Cross-entropy excluded {excluded} truncated test strings")
    return CrossEntropyEstimate(mean, stderr, n, excluded, n < 2)


def kl_estimate(dpfsa: Dpfsa, scores: ScoreFile, dataset: Dataset) -> KlEstimate:
    """KL(p || q) = H(p, q) - H(p), bits per string; only the cross-entropy term is stochastic"""
    ce = empirical_cross_entropy(scores, dataset)
    h_bits = entropy_nats(dpfsa) / LN2
    return KlEstimate(
        kl_bits=ce.mean_bits - h_bits,
        cross_entropy_bits=ce.mean_bits,
        entropy_bits=h_bits,
        stderr_bits=ce.stderr_bits,
        n_strings=ce.n_strings,
        n_excluded_truncated=ce.n_excluded_truncated,
        low_confidence=ce.low_confidence,
    )


def score_with_automaton(dpfsa: Dpfsa, strings: Sequence[StringRecord], model_id: str = "") -> ScoreFile:
    """score strings by the automaton itself; truncated strings carry no EOS term"""
    records = []
    for i, s in enumerate(strings):
        tokens = tuple(token_logprobs(dpfsa, s, include_eos=not s.truncated))
        records.append(ScoreRecord(string_index=i, total_logprob=math.fsum(tokens), per_token_logprobs=tokens))
    return ScoreFile(
        model_id=model_id or f"automaton:{dpfsa.name}",
        automaton_id=dpfsa.name,
        records=tuple(records),
    )


def write_scores(scores: ScoreFile, path: str | Path) -> Path:
    """JSONL: one header line, then one record per string"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    u = scores.units
    with path.open("w", encoding="utf-8") as f:
        header = {"header": True, "model_id": scores.model_id, "automaton_id": scores.automaton_id, "units": u}
        f.write(json.dumps(header) + "\n")
        for r in scores.records:
            row = {
                "string_index": r.string_index,
                f"total_logprob_{u}": r.total_logprob,
                f"per_token_logprobs_{u}": list(r.per_token_logprobs),
            }
            if r.step_logprobs is not None:
                row[f"step_logprobs_{u}"] = [list(step) for step in r.step_logprobs]
            f.write(json.dumps(row) + "\n")
    return path


def _to_nats(value: float, units: str) -> float:
    return value * LN2 if units == "bits" else value


def _parse_record(row: dict, units: str, lineno: int, path: Path) -> ScoreRecord:
    where = f"{path}:{lineno}"
    try:
        index = row["string_index"]
        total = row[f"total_logprob_{units}"]
        tokens = row[f"per_token_logprobs_{units}"]
    except KeyError as e:
        raise ScoreFileException(f"{where}: missing field {e.args[0]!r}")
    if not isinstance(index, int) or index < 0:
        raise ScoreFileException(f"{where}: string_index must be a non-negative integer")
    if not isinstance(tokens, list) or not all(isinstance(t, (int, float)) for t in tokens):
        raise ScoreFileException(f"{where}: per-token log-probabilities must be a list of numbers")
    if any(t > 1e-12 for t in tokens):
        raise ScoreFileException(f"{where}: string index {index} has positive per-token log-probabilities")
    if abs(math.fsum(tokens) - total) > TOTAL_TOL * max(1.0, abs(total)):
        raise ScoreFileException(f"{where}: string index {index} total does not match its per-token sum")

    steps = row.get(f"step_logprobs_{units}")
    step_nats = None
    if steps is not None:
        if len(steps) != len(tokens):
            raise ScoreFileException(f"{where}: string index {index} has {len(steps)} step vectors for {len(tokens)} tokens")
        step_nats = np.array(steps, dtype=np.float64) * (LN2 if units == "bits" else 1.0)
        norms = logsumexp(step_nats, axis=1)
        if np.max(np.abs(norms)) > NORMALIZATION_TOL:
            raise ScoreFileException(f"{where}: string index {index} has unnormalized step distributions")
        step_nats = tuple(tuple(float(v) for v in s) for s in step_nats)

    token_nats = tuple(_to_nats(float(t), units) for t in tokens)
    return ScoreRecord(
        string_index=index,
        total_logprob=_to_nats(float(total), units),
        per_token_logprobs=token_nats,
        step_logprobs=step_nats,
    )


def ingest_external_scores(path: str | Path, dataset: Optional[Dataset] = None) -> ScoreFile:
    """
    Validate a score file.  Values declared in bits are converted to nats.
    With a dataset, per-token counts are checked against the test split.
    """
    path = Path(path)
    if not path.is_file():
        raise ScoreFileException(f"score file not found | {path}")
    header = None
    records = []
    with path.open(encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as e:
                raise ScoreFileException(f"{path}:{lineno}: invalid JSON | {e.msg}")
            if not isinstance(row, dict):
                raise ScoreFileException(f"{path}:{lineno}: each line must be a JSON object")
            if header is None:
                if not row.get("header"):
                    raise ScoreFileException(f"{path}:{lineno}: first line must be the header record")
                if row.get("units") not in UNITS:
                    raise ScoreFileException(f"{path}:{lineno}: header must declare units as 'nats' or 'bits'")
                header = row
                continue
            records.append(_parse_record(row, header["units"], lineno, path))

    if header is None:
        raise ScoreFileException(f"{path}: empty score file")

    indices = sorted(r.string_index for r in records)
    if len(set(indices)) != len(indices):
        dup = next(a for a, b in zip(indices, indices[1:]) if a == b)
        raise ScoreFileException(f"{path}: duplicate string index {dup}")
    if indices != list(range(len(indices))):
        gap = next(i for i, v in enumerate(indices) if i != v)
        raise ScoreFileException(f"{path}: string indices have a gap at {gap}")

    if dataset is not None:
        test = dataset.test
        for r in records:
            if r.string_index >= len(test):
                raise ScoreFileException(f"{path}: string index {r.string_index} beyond the test split")
            s = test[r.string_index]
            expected = s.length + (0 if s.truncated else 1)
            if len(r.per_token_logprobs) != expected:
                raise ScoreFileException(
                    f"{path}: string index {r.string_index} has {len(r.per_token_logprobs)} token scores, "
                    f"expected {expected}"
                )

    return ScoreFile(
        model_id=str(header.get("model_id", "")),
        automaton_id=str(header.get("automaton_id", "")),
        records=tuple(sorted(records, key=lambda r: r.string_index)),
        units="nats",
    )


@dataclass(frozen=True)
class EvalRecord:
    """one results-TSV row"""

    automaton_id: str
    model_id: str
    D: int
    num_states: int
    alphabet_size: int
    num_transitions: int
    rank: int
    expected_length: float
    rank_bound: int
    entropy_bits: float
    kl_bits: float
    kl_stderr_bits: float
    cross_entropy_bits: float = float("nan")
    n_strings: int = 0
    n_excluded_truncated: int = 0

    @classmethod
    def build(cls, dpfsa: Dpfsa, model_id: str, hidden_size: int, kl: KlEstimate, expected_length: float) -> "EvalRecord":
        return cls(
            automaton_id=dpfsa.name,
            model_id=model_id,
            D=hidden_size,
            num_states=dpfsa.num_states,
            alphabet_size=dpfsa.alphabet_size,
            num_transitions=dpfsa.num_states * dpfsa.alphabet_size,
            rank=dpfsa.declared_rank,
            expected_length=expected_length,
            rank_bound=dpfsa.rank_bound,
            entropy_bits=kl.entropy_bits,
            kl_bits=kl.kl_bits,
            kl_stderr_bits=kl.stderr_bits,
            cross_entropy_bits=kl.cross_entropy_bits,
            n_strings=kl.n_strings,
            n_excluded_truncated=kl.n_excluded_truncated,
        )


RESULTS_COLUMNS = {
    "automaton_id": "automaton_id",
    "model_id": "model_id",
    "D": "D",
    "num_states": "|Q|",
    "alphabet_size": "|Sigma|",
    "num_transitions": "|Q||Sigma|",
    "rank": "R",
    "expected_length": "exp_len",
    "rank_bound": "min(|Q|,|Sigma|+1)",
    "entropy_bits": "H_bits",
    "kl_bits": "kl_bits",
    "kl_stderr_bits": "kl_stderr_bits",
    "cross_entropy_bits": "ce_bits",
    "n_strings": "n_strings",
    "n_excluded_truncated": "n_excluded_truncated",
}


def write_results(records: Sequence[EvalRecord], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame([asdict(r) for r in records], columns=list(RESULTS_COLUMNS))
    frame = frame.rename(columns=RESULTS_COLUMNS)
    frame.to_csv(path, sep="\t", index=False, na_rep="NA", float_format="%.17g")
    return path


def read_results(path: str | Path) -> list[EvalRecord]:
    frame = pd.read_csv(path, sep="\t", na_values=["NA"], keep_default_na=False)
    missing = [c for c in RESULTS_COLUMNS.values() if c not in frame.columns]
    if missing:
        raise EvaluationException(f"results file {path} lacks columns {missing}")
    frame = frame.rename(columns={v: k for k, v in RESULTS_COLUMNS.items()})
    out = []
    for row in frame.to_dict(orient="records"):
        out.append(
            EvalRecord(
                automaton_id=str(row["automaton_id"]),
                model_id=str(row["model_id"]),
                D=int(row["D"]),
                num_states=int(row["num_states"]),
                alphabet_size=int(row["alphabet_size"]),
                num_transitions=int(row["num_transitions"]),
                rank=int(row["rank"]),
                expected_length=float(row["expected_length"]),
                rank_bound=int(row["rank_bound"]),
                entropy_bits=float(row["entropy_bits"]),
                kl_bits=float(row["kl_bits"]),
                kl_stderr_bits=float(row["kl_stderr_bits"]),
                cross_entropy_bits=float(row["cross_entropy_bits"]),
                n_strings=int(row["n_strings"]),
                n_excluded_truncated=int(row["n_excluded_truncated"]),
            )
        )
    return out


def exact_kl(p: Dpfsa, q: Dpfsa, max_len: int = 40) -> tuple[float, float]:
    """
    KL(p || q) in bits over strings of length <= max_len by product-state
    dynamic programming, with the p-mass of longer strings as second value.
    """
    if p.alphabet_size != q.alphabet_size:
        raise EvaluationException("automata must share an alphabet")
    eos = p.eos
    pp, lp, lq = p.probs, p.log_probs, q.log_probs
    mass = np.zeros((p.num_states, q.num_states))
    ratio = np.zeros_like(mass)
    mass[p.initial_state, q.initial_state] = 1.0
    kl = 0.0
    qa, qb = np.meshgrid(np.arange(p.num_states), np.arange(q.num_states), indexing="ij")
    for _ in range(max_len + 1):
        rho = pp[eos][:, None]
        with np.errstate(invalid="ignore"):
            term = np.where(rho > 0, (ratio + mass * (lp[eos][:, None] - lq[eos][None, :])) * rho, 0.0)
        kl += float(term.sum())
        new_mass = np.zeros_like(mass)
        new_ratio = np.zeros_like(ratio)
        for y in range(p.alphabet_size):
            p_y = pp[y][:, None]
            with np.errstate(invalid="ignore"):
                contrib = np.where(p_y > 0, (ratio + mass * (lp[y][:, None] - lq[y][None, :])) * p_y, 0.0)
            dest = (p.topology[qa, y], q.topology[qb, y])
            np.add.at(new_mass, dest, mass * p_y)
            np.add.at(new_ratio, dest, contrib)
        mass, ratio = new_mass, new_ratio
    return kl / LN2, float(mass.sum())
