# -*- coding: utf-8 -*-
import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import Iterable, Optional, Sequence
import numpy as np
from scipy.linalg import svdvals
from scipy.special import log_softmax
from .exceptions import AutomatonException, AutomatonFileException


log = logging.getLogger(__name__)

SOFTMAX_NORM_TOL = 1e-12
EXPLICIT_NORM_TOL = 1e-9
RANK_TOL = 1e-10


class ParamMode(str, Enum):
    SOFTMAX_LOGITS = "softmax_logits"
    EXPLICIT_PROBS = "explicit_probs"


@dataclass(frozen=True)
class Alphabet:
    size: int

    def __post_init__(self):
        if int(self.size) < 1:
            raise AutomatonException(f"Alphabet size must be >= 1, got {self.size}")

    @property
    def eos(self) -> int:
        return self.size

    def __len__(self) -> int:
        return self.size


@dataclass(frozen=True)
class StringRecord:
    symbols: tuple[int, ...]
    truncated: bool = False

    @property
    def length(self) -> int:
        return len(self.symbols)

    @classmethod
    def of(cls, symbols: Iterable[int], truncated: bool = False) -> "StringRecord":
        return cls(tuple(int(s) for s in symbols), bool(truncated))


@dataclass(frozen=True)
class Violation:
    kind: str
    location: Optional[int]
    message: str


@dataclass(frozen=True, eq=False)
class Dpfsa:
    """
    Deterministic probabilistic FSA.

    `logits` has shape (|Sigma|+1) x |Q|; row |Sigma| is EOS.  In
    softmax_logits mode column q holds the logits of p(.|q); in explicit_probs
    mode it holds log-probabilities directly and may contain -inf.
    """

    num_states: int
    alphabet: Alphabet
    initial_state: int
    topology: np.ndarray
    logits: np.ndarray
    declared_rank: int
    param_mode: ParamMode = ParamMode.SOFTMAX_LOGITS
    name: str = field(default="", compare=False)

    def __post_init__(self):
        topology = np.array(self.topology, dtype=np.int64)
        logits = np.array(self.logits, dtype=np.float64)
        if topology.shape != (self.num_states, self.alphabet.size):
            raise AutomatonException(
                f"topology shape {topology.shape} != ({self.num_states}, {self.alphabet.size})"
            )
        if logits.shape != (self.alphabet.size + 1, self.num_states):
            raise AutomatonException(
                f"logits shape {logits.shape} != ({self.alphabet.size + 1}, {self.num_states})"
            )
        topology.setflags(write=False)
        logits.setflags(write=False)
        object.__setattr__(self, "topology", topology)
        object.__setattr__(self, "logits", logits)
        object.__setattr__(self, "param_mode", ParamMode(self.param_mode))

    @property
    def alphabet_size(self) -> int:
        return self.alphabet.size

    @property
    def eos(self) -> int:
        return self.alphabet.eos

    @property
    def rank_bound(self) -> int:
        return min(self.num_states, self.alphabet.size + 1)

    @cached_property
    def log_probs(self) -> np.ndarray:
        """columnwise log p(y|q), EOS row last"""
        if self.param_mode is ParamMode.EXPLICIT_PROBS:
            lp = self.logits.copy()
        else:
            with np.errstate(invalid="ignore"):
                lp = log_softmax(self.logits, axis=0)
        lp.setflags(write=False)
        return lp

    @cached_property
    def probs(self) -> np.ndarray:
        p = np.exp(self.log_probs)
        p.setflags(write=False)
        return p

    @property
    def final_weights(self) -> np.ndarray:
        return self.probs[self.eos]

    def with_name(self, name: str) -> "Dpfsa":
        return Dpfsa(
            num_states=self.num_states,
            alphabet=self.alphabet,
            initial_state=self.initial_state,
            topology=self.topology,
            logits=self.logits,
            declared_rank=self.declared_rank,
            param_mode=self.param_mode,
            name=name,
        )


def validate(dpfsa: Dpfsa) -> list[Violation]:
    violations = []
    q_count, sigma = dpfsa.num_states, dpfsa.alphabet_size

    if q_count < 1:
        violations.append(Violation("num_states", None, "automaton needs at least one state"))
    if not 0 <= dpfsa.initial_state < q_count:
        violations.append(Violation("initial_state", dpfsa.initial_state, "initial state out of range"))
    if not 1 <= dpfsa.declared_rank <= dpfsa.rank_bound:
        violations.append(
            Violation(
                "declared_rank",
                None,
                f"declared rank {dpfsa.declared_rank} outside [1, min(|Q|, |Sigma|+1)={dpfsa.rank_bound}]",
            )
        )

    bad_cells = np.argwhere((dpfsa.topology < 0) | (dpfsa.topology >= q_count))
    for q, y in bad_cells:
        violations.append(
            Violation("determinism", int(q), f"transition ({q}, {y}) -> {dpfsa.topology[q, y]} is not a state")
        )

    for q in range(q_count):
        column = dpfsa.logits[:, q]
        if np.isnan(column).any() or np.isposinf(column).any():
            violations.append(Violation("finite", q, f"column {q} has NaN or +inf entries"))
            continue
        probs = dpfsa.probs[:, q]
        if dpfsa.param_mode is ParamMode.SOFTMAX_LOGITS:
            if not np.isfinite(column).all() or not (probs > 0).all():
                violations.append(Violation("full_support", q, f"p(.|{q}) lacks full support"))
                continue
            total = math.fsum(probs)
            if abs(total - 1.0) > SOFTMAX_NORM_TOL:
                violations.append(Violation("normalization", q, f"p(.|{q}) sums to {total!r}"))
        else:
            if (column > 0).any():
                violations.append(Violation("log_probability", q, f"column {q} has positive log-probabilities"))
            total = math.fsum(probs)
            if abs(total - 1.0) > EXPLICIT_NORM_TOL:
                violations.append(Violation("normalization", q, f"p(.|{q}) sums to {total!r}"))

    return violations


def _check_state(dpfsa: Dpfsa, state: int) -> None:
    if not 0 <= state < dpfsa.num_states:
        raise AutomatonException(f"state {state} out of range [0, {dpfsa.num_states})")


def next_distribution(dpfsa: Dpfsa, state: int) -> np.ndarray:
    _check_state(dpfsa, state)
    return dpfsa.probs[:, state].copy()


def step(dpfsa: Dpfsa, state: int, symbol: int) -> int:
    _check_state(dpfsa, state)
    if symbol == dpfsa.eos:
        raise AutomatonException("EOS is not a transition label")
    if not 0 <= symbol < dpfsa.alphabet_size:
        raise AutomatonException(f"symbol {symbol} out of range [0, {dpfsa.alphabet_size})")
    return int(dpfsa.topology[state, symbol])


def _symbols(s: StringRecord | Sequence[int]) -> Sequence[int]:
    return s.symbols if isinstance(s, StringRecord) else s


def state_sequence(dpfsa: Dpfsa, s: StringRecord | Sequence[int]) -> list[int]:
    """states q_1..q_{n+1} visited while reading s"""
    states = [dpfsa.initial_state]
    q = dpfsa.initial_state
    for y in _symbols(s):
        q = step(dpfsa, q, int(y))
        states.append(q)
    return states


def token_logprobs(dpfsa: Dpfsa, s: StringRecord | Sequence[int], include_eos: bool = True) -> list[float]:
    """per-step log p(y_t | q_t), nats, with the EOS term last"""
    symbols = _symbols(s)
    states = state_sequence(dpfsa, symbols)
    lp = dpfsa.log_probs
    out = [float(lp[y, q]) for y, q in zip(symbols, states)]
    if include_eos:
        out.append(float(lp[dpfsa.eos, states[-1]]))
    return out


def string_logprob(dpfsa: Dpfsa, s: StringRecord | Sequence[int]) -> float:
    return math.fsum(token_logprobs(dpfsa, s))


def logit_rank(dpfsa: Dpfsa, tol: float = RANK_TOL) -> int:
    if not np.isfinite(dpfsa.logits).all():
        raise AutomatonException("logit rank is undefined for non-finite logits")
    return numeric_rank(dpfsa.logits, tol)


def numeric_rank(matrix: np.ndarray, tol: float = RANK_TOL) -> int:
    """singular values strictly greater than tol * sigma_max"""
    sv = svdvals(np.asarray(matrix, dtype=np.float64))
    if sv.size == 0 or sv[0] == 0.0:
        return 0
    return int(np.count_nonzero(sv > tol * sv[0]))


def from_probabilities(
    topology: Sequence[Sequence[int]],
    probs: Sequence[Sequence[float]],
    initial_state: int = 0,
    declared_rank: Optional[int] = None,
    name: str = "",
) -> Dpfsa:
    """explicit-probability automaton; probs has shape (|Sigma|+1) x |Q|"""
    probs = np.asarray(probs, dtype=np.float64)
    topology = np.asarray(topology, dtype=np.int64)
    num_states = topology.shape[0]
    alphabet = Alphabet(probs.shape[0] - 1)
    with np.errstate(divide="ignore"):
        logits = np.log(probs)
    return Dpfsa(
        num_states=num_states,
        alphabet=alphabet,
        initial_state=initial_state,
        topology=topology,
        logits=logits,
        declared_rank=declared_rank or min(num_states, alphabet.size + 1),
        param_mode=ParamMode.EXPLICIT_PROBS,
        name=name,
    )


def geometric_automaton(stop_probability: float = 0.5, softmax: bool = True) -> Dpfsa:
    """one state, one symbol a, p(EOS) = stop_probability"""
    logits = np.log([[1.0 - stop_probability], [stop_probability]])
    return Dpfsa(
        num_states=1,
        alphabet=Alphabet(1),
        initial_state=0,
        topology=[[0]],
        logits=logits,
        declared_rank=1,
        param_mode=ParamMode.SOFTMAX_LOGITS if softmax else ParamMode.EXPLICIT_PROBS,
        name="geometric",
    )


def two_branch_automaton() -> Dpfsa:
    """
    Three states over {a=0, b=1}:
    p(a b^n a b^m) = 0.6 * 0.1^n * 0.9 * 0.7^m * 0.3 and p(b b^m) = 0.4 * 0.7^m * 0.3
    """
    topology = [
        [1, 2],
        [2, 1],
        [2, 2],
    ]
    probs = [
        [0.6, 0.9, 0.0],
        [0.4, 0.1, 0.7],
        [0.0, 0.0, 0.3],
    ]
    return from_probabilities(topology, probs, name="two-branch")


def point_mass_automaton(symbols: Sequence[int], alphabet_size: int) -> Dpfsa:
    """chain emitting exactly `symbols` with probability 1"""
    n = len(symbols)
    topology = np.zeros((n + 1, alphabet_size), dtype=np.int64)
    probs = np.zeros((alphabet_size + 1, n + 1))
    for i in range(n + 1):
        topology[i, :] = i
    for i, y in enumerate(symbols):
        topology[i, y] = i + 1
        probs[y, i] = 1.0
    probs[alphabet_size, n] = 1.0
    return from_probabilities(topology, probs, name="point-mass")


def to_dict(dpfsa: Dpfsa) -> dict:
    def encode(x: float):
        if x == -math.inf:
            return "-inf"
        return float(x)

    return {
        "num_states": dpfsa.num_states,
        "alphabet_size": dpfsa.alphabet_size,
        "initial_state": dpfsa.initial_state,
        "topology": [int(x) for x in dpfsa.topology.ravel()],
        "logits": [encode(x) for x in dpfsa.logits.ravel()],
        "declared_rank": dpfsa.declared_rank,
        "param_mode": dpfsa.param_mode.value,
    }


def from_dict(data: dict, name: str = "") -> Dpfsa:
    try:
        num_states = int(data["num_states"])
        alphabet_size = int(data["alphabet_size"])
        topology = np.array(data["topology"], dtype=np.int64).reshape(num_states, alphabet_size)
        logits = np.array(
            [-math.inf if x == "-inf" else float(x) for x in data["logits"]],
            dtype=np.float64,
        ).reshape(alphabet_size + 1, num_states)
        return Dpfsa(
            num_states=num_states,
            alphabet=Alphabet(alphabet_size),
            initial_state=int(data["initial_state"]),
            topology=topology,
            logits=logits,
            declared_rank=int(data["declared_rank"]),
            param_mode=ParamMode(data["param_mode"]),
            name=name,
        )
    except (KeyError, TypeError, ValueError) as e:
        raise AutomatonFileException(f"Malformed automaton document | {repr(e)}")


def save_automaton(dpfsa: Dpfsa, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(to_dict(dpfsa), sort_keys=True))
    log.debug(f"Automaton written | {path}")
    return path


def load_automaton(path: str | Path) -> Dpfsa:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise AutomatonFileException(f"Unable to read automaton file | {path} | {repr(e)}")
    return from_dict(data, name=path.stem)
