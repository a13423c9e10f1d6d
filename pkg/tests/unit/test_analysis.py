# -*- coding: utf-8 -*-
import math
from collections import Counter
import numpy as np
import pytest
from ddcRegularLM.analysis import (
    analyze,
    entropy,
    entropy_nats,
    enumerate_strings,
    expected_length,
    logprob_matrix_rank,
    tail_mass,
    transition_matrix,
    truncated_sums,
    visit_expectations,
)
from ddcRegularLM.automaton import from_probabilities, geometric_automaton, point_mass_automaton, string_logprob
from ddcRegularLM.dataset import sample_corpus
from ddcRegularLM.exceptions import AnalysisException, NonTerminatingAutomatonException
from ddcRegularLM.seeding import derive_rng
from tests.data.base_data import random_automaton


def _short_random_automata(count: int, max_expected_length: float = 15.0):
    """softmax automata with |Q| <= 4, |Sigma| <= 3 and a modest expected length"""
    out, seed = [], 0
    while len(out) < count:
        q = 1 + seed % 4
        s = 1 + (seed // 4) % 3
        dpfsa = random_automaton(1000 + seed, q, s)
        if expected_length(dpfsa) <= max_expected_length:
            out.append(dpfsa)
        seed += 1
    return out


def _monte_carlo(dpfsa, n: int, seed: int):
    strings = sample_corpus(dpfsa, derive_rng(seed, "mc", dpfsa.name), n, max_len=100000)
    counts = Counter(s.symbols for s in strings)
    logp = {y: string_logprob(dpfsa, y) for y in counts}
    surprisal = np.repeat([-logp[y] for y in counts], list(counts.values()))
    lengths = np.repeat([len(y) for y in counts], list(counts.values()))
    return surprisal, lengths


class TestAnalysis:
    @classmethod
    def setup_class(cls):
        """ setup_class """
        pass

    @classmethod
    def teardown_class(cls):
        """ teardown_class """
        pass

    def test_geometric_fixed_point(self, geometric):
        assert abs(entropy(geometric) - 2.0) < 1e-10
        assert abs(expected_length(geometric) - 1.0) < 1e-10
        explicit = geometric_automaton(softmax=False)
        assert abs(entropy(explicit) - 2.0) < 1e-10

    def test_geometric_other_stop_probability(self):
        p = 0.2
        dpfsa = geometric_automaton(stop_probability=p)
        h_binary = -(p * math.log2(p) + (1 - p) * math.log2(1 - p))
        assert entropy(dpfsa) == pytest.approx(h_binary / p, abs=1e-10)
        assert expected_length(dpfsa) == pytest.approx((1 - p) / p, abs=1e-10)

    def test_point_mass_has_zero_entropy(self):
        dpfsa = point_mass_automaton([0, 1, 1], alphabet_size=2)
        assert abs(entropy(dpfsa)) < 1e-12
        assert expected_length(dpfsa) == pytest.approx(3.0, abs=1e-12)

    def test_two_branch_against_truncated_sums(self, two_branch):
        sums = truncated_sums(two_branch, 400)
        assert sums.tail_mass < 1e-12
        assert sums.mass == pytest.approx(1.0, abs=1e-12)
        assert sums.entropy_nats == pytest.approx(entropy_nats(two_branch), abs=1e-9)
        assert sums.length_mass == pytest.approx(expected_length(two_branch), abs=1e-9)

    def test_two_branch_closed_form(self, two_branch):
        # b-branch: 1 + geometric(0.3); a-branch: 2 + geometric(0.9) + geometric(0.3)
        mean_b = 1 + 0.7 / 0.3
        mean_a = 2 + 0.1 / 0.9 + 0.7 / 0.3
        assert expected_length(two_branch) == pytest.approx(0.4 * mean_b + 0.6 * mean_a, abs=1e-12)

    def test_enumeration_matches_dynamic_program(self, random_automata):
        dpfsa = random_automata[1]
        max_len = 6
        probs = [math.exp(lp) for _, lp in enumerate_strings(dpfsa, max_len)]
        sums = truncated_sums(dpfsa, max_len)
        assert math.fsum(probs) == pytest.approx(sums.mass, abs=1e-12)
        plogp = math.fsum(p * math.log(p) for p in probs if p > 0)
        assert plogp == pytest.approx(sums.plogp, abs=1e-12)
        assert sums.mass + sums.tail_mass == pytest.approx(1.0, abs=1e-12)
        assert tail_mass(dpfsa, max_len) == pytest.approx(sums.tail_mass, abs=1e-14)

    def test_visit_expectations(self, random_automata):
        for dpfsa in random_automata:
            x = visit_expectations(dpfsa)
            m = transition_matrix(dpfsa)
            alpha = np.zeros(dpfsa.num_states)
            alpha[dpfsa.initial_state] = 1.0
            assert np.allclose(x @ (np.eye(dpfsa.num_states) - m), alpha, atol=1e-10)
            assert (x >= 0).all()

    def test_analyze_report(self, random_automata):
        for dpfsa in random_automata:
            report = analyze(dpfsa)
            assert report.spectral_margin > 0
            assert report.solve_residual < 1e-10
            assert report.logprob_matrix_rank <= dpfsa.declared_rank + 1
            assert report.entropy_bits == pytest.approx(entropy(dpfsa), rel=1e-12)
            assert len(report.to_dict()["visit_expectations"]) == dpfsa.num_states

    def test_explicit_mode_has_no_logprob_rank(self, two_branch):
        with pytest.raises(AnalysisException):
            logprob_matrix_rank(two_branch)
        assert analyze(two_branch).logprob_matrix_rank == -1

    def test_non_terminating(self):
        trapped = from_probabilities(
            topology=[[1], [1]],
            probs=[[0.5, 1.0], [0.5, 0.0]],
        )
        with pytest.raises(NonTerminatingAutomatonException):
            entropy(trapped)
        with pytest.raises(NonTerminatingAutomatonException):
            expected_length(trapped)

    @pytest.mark.slow
    def test_entropy_and_length_against_monte_carlo(self):
        n = 200000
        entropy_pass = length_pass = 0
        automata = _short_random_automata(20)
        for i, dpfsa in enumerate(automata):
            surprisal, lengths = _monte_carlo(dpfsa, n, seed=i)
            h_se = surprisal.std(ddof=1) / math.sqrt(n)
            len_se = lengths.std(ddof=1) / math.sqrt(n)
            if abs(surprisal.mean() - entropy_nats(dpfsa)) <= 4 * h_se + 1e-12:
                entropy_pass += 1
            if abs(lengths.mean() - expected_length(dpfsa)) <= 4 * len_se + 1e-12:
                length_pass += 1
        assert entropy_pass >= 19
        assert length_pass >= 19
