# -*- coding: utf-8 -*-
import json
import pytest
from pydantic import ValidationError
from ddcRegularLM.seeding import derive_int_seed, derive_rng, derive_seed
from ddcRegularLM.settings import (
    DatasetConfig,
    ExperimentConfig,
    GenerationConfig,
    TrainConfig,
    load_experiment_config,
)


class TestSettings:
    @classmethod
    def setup_class(cls):
        """ setup_class """
        pass

    @classmethod
    def teardown_class(cls):
        """ teardown_class """
        pass

    def test_defaults(self):
        gen = GenerationConfig()
        assert gen.length_filter == "fixed"
        assert gen.length_filter_threshold == 46.0
        train = TrainConfig()
        assert (train.epochs, train.batch_size, train.lr) == (2, 32, 0.001)
        dataset = DatasetConfig()
        assert (dataset.size, dataset.max_len, dataset.min_test) == (20000, 256, 2000)

    def test_env_fallback(self, monkeypatch):
        monkeypatch.setenv("RLM_TRAIN_EPOCHS", "5")
        monkeypatch.setenv("RLM_GENERATION_STATE_SIZES", "[8, 2, 2]")
        assert TrainConfig().epochs == 5
        assert GenerationConfig().state_sizes == [2, 8]

    def test_validation(self):
        with pytest.raises(ValidationError):
            DatasetConfig(size=100, min_test=100)
        with pytest.raises(ValidationError):
            GenerationConfig(rank_grid=[])
        with pytest.raises(ValidationError):
            GenerationConfig(logit_std=0.0)
        with pytest.raises(ValidationError):
            ExperimentConfig(d_grid=[0, 2])

    def test_config_hash_ignores_location(self, tmp_path):
        a = ExperimentConfig(output_dir=tmp_path / "a", parallelism=1)
        b = ExperimentConfig(output_dir=tmp_path / "b", parallelism=4)
        c = ExperimentConfig(output_dir=tmp_path / "a", d_grid=[2])
        assert a.config_hash() == b.config_hash()
        assert a.config_hash() != c.config_hash()

    def test_load_experiment_config(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text(json.dumps({"d_grid": [16, 2], "replicates": 2}))
        config = load_experiment_config(path, parallelism=3, output_dir=None)
        assert config.d_grid == [2, 16]
        assert config.replicates == 2
        assert config.parallelism == 3

    def test_derived_streams(self, fake_test_data):
        seed = fake_test_data["seed"]
        assert derive_seed(seed, "train", "a", 2) == derive_seed(seed, "train", "a", 2)
        assert derive_seed(seed, "train", "a", 2) != derive_seed(seed, "train", "a", 8)
        assert derive_seed(seed, "train") != derive_seed(seed, "dataset")
        first = derive_rng(seed, "x").random(5)
        second = derive_rng(seed, "x").random(5)
        assert (first == second).all()
        assert 0 <= derive_int_seed(seed, "x") < 2**64
