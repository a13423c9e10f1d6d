# -*- coding: utf-8 -*-
import json
import numpy as np
import pytest
from scipy.linalg import svdvals
from scipy.stats import chisquare
from ddcRegularLM.analysis import expected_length, logprob_matrix_rank
from ddcRegularLM.automaton import load_automaton, logit_rank, numeric_rank
from ddcRegularLM.exceptions import GenerationException
from ddcRegularLM.generation import (
    FamilyKey,
    build_family,
    family_ranks,
    filter_by_expected_length,
    generate_families,
    generate_family,
    median_expected_length,
    rank_truncate,
    sample_logits,
    sample_topology,
    write_family_manifest,
)
from ddcRegularLM.seeding import derive_rng
from ddcRegularLM.settings import GenerationConfig


class TestGeneration:
    @classmethod
    def setup_class(cls):
        """ setup_class """
        cls.config = GenerationConfig(state_sizes=[4, 8], alphabet_sizes=[4, 8], master_seed=11)

    @classmethod
    def teardown_class(cls):
        """ teardown_class """
        pass

    def test_eckart_young(self):
        rng = np.random.default_rng(2024)
        for _ in range(50):
            rows, cols = (int(v) for v in rng.integers(2, 12, size=2))
            matrix = rng.normal(0.0, 2.0, size=(rows, cols))
            rank = int(rng.integers(1, min(rows, cols) + 1))
            approx = rank_truncate(matrix, rank)
            sv = svdvals(matrix)
            expected = np.sqrt(np.sum(sv[rank:] ** 2))
            assert abs(np.linalg.norm(matrix - approx, "fro") - expected) < 1e-9
            assert numeric_rank(approx) == rank

    def test_full_rank_truncation_is_identity(self):
        matrix = np.random.default_rng(3).normal(size=(5, 4))
        assert np.allclose(rank_truncate(matrix, 4), matrix, atol=1e-12)

    def test_rank_out_of_range(self):
        matrix = np.ones((3, 2))
        with pytest.raises(GenerationException):
            rank_truncate(matrix, 0)
        with pytest.raises(GenerationException):
            rank_truncate(matrix, 3)

    def test_rank_truncate_is_idempotent(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            matrix = rng.normal(0.0, 2.0, size=(9, 6))
            for rank in range(1, 7):
                once = rank_truncate(matrix, rank)
                assert np.allclose(rank_truncate(once, rank), once, rtol=0.0, atol=1e-12)

    def test_truncation_error_non_increasing_in_rank(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            matrix = rng.normal(0.0, 2.0, size=(9, 8))
            errors = [np.linalg.norm(matrix - rank_truncate(matrix, r), "fro") for r in range(1, 9)]
            assert all(b <= a + 1e-12 for a, b in zip(errors, errors[1:]))
            assert errors[-1] < 1e-9

    def test_topology_is_uniform(self):
        topology = sample_topology(derive_rng(9, "uniform"), 8, 5000)
        counts = np.bincount(topology.ravel(), minlength=8)
        assert chisquare(counts).pvalue > 1e-4

    def test_logit_moments(self):
        logits = sample_logits(derive_rng(10, "moments"), 999, 100, logit_std=2.0)
        assert abs(logits.mean()) < 0.05
        assert abs(logits.var() - 4.0) < 0.15

    def test_sampling_shapes(self):
        rng = derive_rng(1, "shapes")
        topology = sample_topology(rng, 3, 5)
        logits = sample_logits(rng, 5, 3)
        assert topology.shape == (3, 5)
        assert topology.min() >= 0 and topology.max() < 3
        assert logits.shape == (6, 3)
        with pytest.raises(GenerationException):
            sample_topology(rng, 0, 2)

    def test_family_ranks(self):
        assert family_ranks(2, 2, [1, 2, 4]) == [1, 2]
        assert family_ranks(8, 8, [1, 2, 4, 6, 8, 10, 12, 16]) == [1, 2, 4, 6, 8]
        assert family_ranks(8, 4, [1, 2, 4, 6, 8]) == [1, 2, 4]

    def test_build_family(self):
        rng = derive_rng(5, "family-test")
        topology = sample_topology(rng, 6, 4)
        logits = sample_logits(rng, 4, 6)
        family = build_family(topology, logits, self.config, name_prefix="x-")
        assert [a.declared_rank for a in family] == [1, 2, 4]
        assert [a.name for a in family] == ["x-R1", "x-R2", "x-R4"]
        for dpfsa in family:
            assert logit_rank(dpfsa) == dpfsa.declared_rank
            assert np.array_equal(dpfsa.topology, topology)
            assert dpfsa.initial_state == 0
        with pytest.raises(GenerationException):
            build_family(topology, logits[:, :3], self.config)

    def test_generate_family_is_deterministic(self):
        key = FamilyKey(4, 4, 0)
        first = generate_family(self.config, key)
        second = generate_family(self.config, key)
        other = generate_family(self.config, FamilyKey(4, 4, 1))
        assert all(np.array_equal(a.logits, b.logits) for a, b in zip(first, second))
        assert not np.array_equal(first[-1].logits, other[-1].logits)
        assert first[0].name == "q4-s4-r0-R1"

    def test_logprob_rank_bound_on_desk_grid(self):
        families = generate_families(self.config, replicates=3)
        checked = 0
        for family in families.values():
            for dpfsa in family:
                assert logprob_matrix_rank(dpfsa) <= dpfsa.declared_rank + 1
                checked += 1
        assert checked > 0

    def test_fixed_length_filter(self):
        family = generate_family(self.config, FamilyKey(8, 8, 0))
        lengths = [expected_length(a) for a in family]
        threshold = sorted(lengths)[len(lengths) // 2]
        kept = filter_by_expected_length(family, threshold)
        assert all(expected_length(a) <= threshold for a in kept)
        assert len(kept) == sum(1 for v in lengths if v <= threshold)
        assert filter_by_expected_length(family, float("inf")) == family

    def test_median_length_filter(self):
        config = self.config.model_copy(update={"length_filter": "median"})
        families = generate_families(config, replicates=1)
        unfiltered = generate_families(self.config.model_copy(update={"length_filter_threshold": float("inf")}), 1)
        pool = [a for fam in unfiltered.values() for a in fam]
        median = median_expected_length(pool)
        for family in families.values():
            assert all(expected_length(a) <= median for a in family)
        with pytest.raises(GenerationException):
            median_expected_length([])

    def test_write_family_manifest(self, tmp_path):
        key = FamilyKey(4, 8, 2)
        family = generate_family(self.config, key)
        path = write_family_manifest(family, self.config, tmp_path, key)
        manifest = json.loads(path.read_text())
        assert manifest["family"] == {"num_states": 4, "alphabet_size": 8, "replicate": 2}
        assert [m["automaton_id"] for m in manifest["members"]] == [a.name for a in family]
        for member, dpfsa in zip(manifest["members"], family):
            loaded = load_automaton(tmp_path / member["file"])
            assert np.array_equal(loaded.logits, dpfsa.logits)
            assert member["expected_length"] == pytest.approx(expected_length(dpfsa), rel=1e-12)
