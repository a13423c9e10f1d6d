# -*- coding: utf-8 -*-
"""
Closed-form quantities of a DPFSA.

With M the |Q|x|Q| substochastic transition matrix, alpha the one-hot initial
vector and xi the per-state next-symbol entropy, the expected visit counts are
x = alpha^T (I - M)^-1, H(A) = x . xi and E[|y|] = sum(x) - 1.
"""
import itertools
import logging
import math
import warnings
from dataclasses import asdict, dataclass
from typing import Iterator
import numpy as np
from scipy.linalg import LinAlgError, LinAlgWarning, lu_factor, lu_solve
from scipy.special import entr
from .automaton import Dpfsa, ParamMode, RANK_TOL, numeric_rank, string_logprob
from .exceptions import AnalysisException, NonTerminatingAutomatonException


log = logging.getLogger(__name__)

LN2 = math.log(2.0)
SOLVE_RESIDUAL_TOL = 1e-10


@dataclass(frozen=True)
class AnalysisReport:
    entropy_bits: float
    expected_length: float
    visit_expectations: tuple[float, ...]
    spectral_margin: float
    logprob_matrix_rank: int
    solve_residual: float

    def to_dict(self) -> dict:
        data = asdict(self)
        data["visit_expectations"] = list(self.visit_expectations)
        return data


def transition_matrix(dpfsa: Dpfsa) -> np.ndarray:
    q_count = dpfsa.num_states
    m = np.zeros((q_count, q_count))
    rows = np.arange(q_count)
    probs = dpfsa.probs
    for y in range(dpfsa.alphabet_size):
        np.add.at(m, (rows, dpfsa.topology[:, y]), probs[y])
    return m


def _positive_successors(dpfsa: Dpfsa) -> list[set[int]]:
    probs = dpfsa.probs
    return [
        {int(dpfsa.topology[q, y]) for y in range(dpfsa.alphabet_size) if probs[y, q] > 0}
        for q in range(dpfsa.num_states)
    ]


def check_termination(dpfsa: Dpfsa) -> None:
    """every reachable state must reach a state with rho > 0"""
    if dpfsa.param_mode is ParamMode.SOFTMAX_LOGITS:
        return
    succ = _positive_successors(dpfsa)

    reachable = {dpfsa.initial_state}
    frontier = [dpfsa.initial_state]
    while frontier:
        q = frontier.pop()
        for r in succ[q] - reachable:
            reachable.add(r)
            frontier.append(r)

    terminating = {q for q in range(dpfsa.num_states) if dpfsa.final_weights[q] > 0}
    changed = True
    while changed:
        changed = False
        for q in range(dpfsa.num_states):
            if q not in terminating and succ[q] & terminating:
                terminating.add(q)
                changed = True

    trapped = sorted(reachable - terminating)
    if trapped:
        raise NonTerminatingAutomatonException(
            f"Non-terminating automaton: reachable states {trapped} cannot reach EOS"
        )


def _solve_visits(dpfsa: Dpfsa) -> tuple[np.ndarray, float]:
    check_termination(dpfsa)
    m = transition_matrix(dpfsa)
    a = (np.eye(dpfsa.num_states) - m).T
    alpha = np.zeros(dpfsa.num_states)
    alpha[dpfsa.initial_state] = 1.0
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error", LinAlgWarning)
            x = lu_solve(lu_factor(a), alpha)
    except (LinAlgError, LinAlgWarning, ValueError) as e:
        raise NonTerminatingAutomatonException(f"I - M is singular | {repr(e)}")
    if not np.isfinite(x).all():
        raise NonTerminatingAutomatonException("I - M is singular: non-finite visit expectations")
    residual = float(np.max(np.abs(a @ x - alpha)))
    if residual >= SOLVE_RESIDUAL_TOL:
        log.warning(f"Visit solve residual {residual:.3e} exceeds {SOLVE_RESIDUAL_TOL:.0e}")
    return x, residual


def visit_expectations(dpfsa: Dpfsa) -> np.ndarray:
    return _solve_visits(dpfsa)[0]


def next_symbol_entropies(dpfsa: Dpfsa) -> np.ndarray:
    """xi_q = H(p(.|q)) in nats, 0 log 0 = 0"""
    return entr(dpfsa.probs).sum(axis=0)


def entropy_nats(dpfsa: Dpfsa) -> float:
    return float(visit_expectations(dpfsa) @ next_symbol_entropies(dpfsa))


def entropy(dpfsa: Dpfsa) -> float:
    """H(A) in bits"""
    return entropy_nats(dpfsa) / LN2


def expected_length(dpfsa: Dpfsa) -> float:
    return float(visit_expectations(dpfsa).sum() - 1.0)


def logprob_matrix_rank(dpfsa: Dpfsa, tol: float = RANK_TOL) -> int:
    if dpfsa.param_mode is not ParamMode.SOFTMAX_LOGITS:
        raise AnalysisException("log-probability matrix rank requires softmax_logits mode")
    return numeric_rank(dpfsa.log_probs, tol)


def analyze(dpfsa: Dpfsa) -> AnalysisReport:
    x, residual = _solve_visits(dpfsa)
    m = transition_matrix(dpfsa)
    h_nats = float(x @ next_symbol_entropies(dpfsa))
    if dpfsa.param_mode is ParamMode.SOFTMAX_LOGITS:
        lp_rank = logprob_matrix_rank(dpfsa)
    else:
        lp_rank = -1
    return AnalysisReport(
        entropy_bits=h_nats / LN2,
        expected_length=float(x.sum() - 1.0),
        visit_expectations=tuple(float(v) for v in x),
        spectral_margin=float(1.0 - m.sum(axis=1).max()),
        logprob_matrix_rank=lp_rank,
        solve_residual=residual,
    )


@dataclass(frozen=True)
class TruncatedSums:
    """exact path sums over strings of length <= max_len, nats"""

    max_len: int
    mass: float
    plogp: float
    length_mass: float
    tail_mass: float

    @property
    def entropy_nats(self) -> float:
        return -self.plogp


def truncated_sums(dpfsa: Dpfsa, max_len: int) -> TruncatedSums:
    """
    Forward DP over states: m(q) is the prefix mass reaching q, e(q) the sum of
    p(prefix) log p(prefix) over those prefixes.  Independent of the linear solve.
    """
    probs, lp = dpfsa.probs, dpfsa.log_probs
    eos = dpfsa.eos
    q_count = dpfsa.num_states
    mass_q = np.zeros(q_count)
    ent_q = np.zeros(q_count)
    mass_q[dpfsa.initial_state] = 1.0

    mass = plogp = length_mass = 0.0
    for n in range(max_len + 1):
        rho, log_rho = probs[eos], lp[eos]
        stop = mass_q * rho
        with np.errstate(invalid="ignore"):
            stop_ent = np.where(rho > 0, (ent_q + mass_q * log_rho) * rho, 0.0)
        mass += stop.sum()
        plogp += stop_ent.sum()
        length_mass += n * stop.sum()

        new_mass = np.zeros(q_count)
        new_ent = np.zeros(q_count)
        for y in range(dpfsa.alphabet_size):
            p_y, log_p_y = probs[y], lp[y]
            with np.errstate(invalid="ignore"):
                contrib = np.where(p_y > 0, (ent_q + mass_q * log_p_y) * p_y, 0.0)
            np.add.at(new_mass, dpfsa.topology[:, y], mass_q * p_y)
            np.add.at(new_ent, dpfsa.topology[:, y], contrib)
        mass_q, ent_q = new_mass, new_ent

    return TruncatedSums(
        max_len=max_len,
        mass=float(mass),
        plogp=float(plogp),
        length_mass=float(length_mass),
        tail_mass=float(mass_q.sum()),
    )


def tail_mass(dpfsa: Dpfsa, max_len: int) -> float:
    """alpha^T M^(max_len+1) 1: probability that |y| > max_len"""
    m = transition_matrix(dpfsa)
    v = np.zeros(dpfsa.num_states)
    v[dpfsa.initial_state] = 1.0
    for _ in range(max_len + 1):
        v = v @ m
    return float(v.sum())


def enumerate_strings(dpfsa: Dpfsa, max_len: int) -> Iterator[tuple[tuple[int, ...], float]]:
    """every string of length <= max_len with its log-probability (nats)"""
    for n in range(max_len + 1):
        for symbols in itertools.product(range(dpfsa.alphabet_size), repeat=n):
            yield symbols, string_logprob(dpfsa, symbols)
