# -*- coding: utf-8 -*-
import math
import numpy as np
import pytest
from scipy.special import logsumexp
from ddcRegularLM import rnn
from ddcRegularLM.automaton import StringRecord
from ddcRegularLM.dataset import Dataset, sample_corpus
from ddcRegularLM.evaluation import ScoreFile, kl_estimate
from ddcRegularLM.exceptions import NonFiniteActivationException, RnnException, TrainingDivergenceException
from ddcRegularLM.rnn import (
    AdamState,
    RnnLm,
    adam_step,
    clip_gradients,
    forward,
    gradients,
    load_checkpoint,
    nll,
    param_shapes,
    save_checkpoint,
    score,
    train,
)
from ddcRegularLM.seeding import derive_rng
from ddcRegularLM.settings import TrainConfig


def _random_strings(rng, alphabet_size: int, count: int, max_len: int = 6) -> list[StringRecord]:
    return [
        StringRecord.of(rng.integers(0, alphabet_size, size=int(rng.integers(0, max_len + 1))))
        for _ in range(count)
    ]


def _finite_difference(lm: RnnLm, strings, eps: float = 1e-6) -> dict[str, np.ndarray]:
    params = lm.params()
    out = {}
    for name, p in params.items():
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            plus = {k: v.copy() for k, v in params.items()}
            minus = {k: v.copy() for k, v in params.items()}
            plus[name][idx] += eps
            minus[name][idx] -= eps
            g[idx] = (nll(RnnLm.from_params(plus), strings) - nll(RnnLm.from_params(minus), strings)) / (2 * eps)
        out[name] = g
    return out


class TestRnn:
    @classmethod
    def setup_class(cls):
        """ setup_class """
        cls.config = TrainConfig(epochs=1, batch_size=16, lr=0.01, seed=3)

    @classmethod
    def teardown_class(cls):
        """ teardown_class """
        pass

    def test_initialize_shapes(self):
        lm = RnnLm.initialize(3, 5, derive_rng(0, "init"))
        for name, p in lm.params().items():
            assert p.shape == param_shapes(3, 5)[name]
        assert not lm.h0.any()
        assert lm.eos == 3

    def test_forward_is_normalized(self):
        lm = RnnLm.initialize(4, 6, derive_rng(1, "init"), std=0.5)
        logp = forward(lm, [0, 3, 2, 1])
        assert logp.shape == (5, 5)
        assert np.allclose(logsumexp(logp, axis=1), 0.0, atol=1e-12)
        assert forward(lm, []).shape == (1, 5)

    def test_gradient_check(self):
        rng = np.random.default_rng(17)
        for trial in range(100):
            alphabet_size = int(rng.integers(1, 4))
            hidden_size = int(rng.integers(1, 5))
            lm = RnnLm.initialize(alphabet_size, hidden_size, derive_rng(trial, "gradcheck"), std=0.7)
            lm = RnnLm.from_params({**lm.params(), "h0": rng.normal(0.0, 0.5, size=hidden_size)})
            strings = _random_strings(rng, alphabet_size, count=int(rng.integers(1, 4)))
            _, grads = gradients(lm, strings)
            numeric = _finite_difference(lm, strings, eps=1e-5)
            for name in rnn.PARAM_NAMES:
                scale = np.maximum(np.maximum(np.abs(grads[name]), np.abs(numeric[name])), 1e-4)
                rel = np.abs(grads[name] - numeric[name]) / scale
                assert rel.max(initial=0.0) < 1e-4, (trial, name)

    def test_gradient_of_unused_embedding_rows(self):
        lm = RnnLm.initialize(3, 4, derive_rng(8, "init"), std=0.5)
        _, grads = gradients(lm, [[0, 1, 1], [1, 0], []])
        assert np.array_equal(grads["embed"][2], np.zeros(4))
        assert np.abs(grads["embed"][:2]).sum() > 0

    def test_gradient_invariant_to_duplicated_batch(self):
        rng = np.random.default_rng(23)
        lm = RnnLm.initialize(3, 4, derive_rng(9, "init"), std=0.5)
        strings = _random_strings(rng, 3, count=5)
        loss, grads = gradients(lm, strings)
        loss2, grads2 = gradients(lm, strings + strings)
        assert loss2 == pytest.approx(loss, rel=1e-13)
        for name in rnn.PARAM_NAMES:
            assert np.allclose(grads2[name], grads[name], rtol=1e-12, atol=1e-15)

    def test_gradient_descent_does_not_increase_loss(self):
        rng = np.random.default_rng(29)
        lm = RnnLm.initialize(3, 4, derive_rng(10, "init"), std=0.5)
        strings = _random_strings(rng, 3, count=8)
        losses = []
        for _ in range(50):
            loss, grads = gradients(lm, strings)
            losses.append(loss)
            lm = RnnLm.from_params({k: p - 1e-3 * grads[k] for k, p in lm.params().items()})
        assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))
        assert losses[-1] < losses[0]

    def test_nll_uniform_model(self):
        lm = RnnLm.zeros(3, 4)
        assert nll(lm, [[0, 2], [1], []]) == pytest.approx(math.log(4), abs=1e-14)
        (record,) = score(lm, [[0, 2]])
        assert record.total_logprob == pytest.approx(-3 * math.log(4), abs=1e-14)

    def test_nll_saturated_model(self):
        lm = RnnLm.from_params({**RnnLm.zeros(1, 1).params(), "h0": np.ones(1), "E": np.array([[-30.0], [30.0]])})
        assert nll(lm, [StringRecord((), False)]) == pytest.approx(0.0, abs=1e-9)

    def test_nll_by_hand(self):
        # W = U = b = 0: step 0 reads h0, later steps read tanh(0) = 0 and are uniform
        lm = RnnLm.from_params({**RnnLm.zeros(2, 1).params(), "h0": np.ones(1), "E": np.array([[1.0], [0.0], [0.0]])})
        first = 1.0 - math.log(math.e + 2.0)
        expected = -(first + math.log(1.0 / 3.0)) / 2.0
        assert nll(lm, [[0]]) == pytest.approx(expected, abs=1e-14)

    def test_initial_loss_near_uniform(self):
        rng = np.random.default_rng(31)
        lm = RnnLm.initialize(3, 8, derive_rng(11, "init"))
        strings = _random_strings(rng, 3, count=50)
        assert nll(lm, strings) == pytest.approx(math.log(4), rel=0.1)

    def test_score_matches_forward_and_nll(self):
        rng = np.random.default_rng(37)
        lm = RnnLm.initialize(4, 16, derive_rng(12, "init"), std=0.5)
        strings = _random_strings(rng, 4, count=300, max_len=12)
        records = score(lm, strings)
        assert [r.string_index for r in records] == list(range(300))
        for s, record in zip(strings, records):
            logp = forward(lm, s)
            targets = s.symbols + (lm.eos,)
            assert record.per_token_logprobs == tuple(float(logp[t, y]) for t, y in enumerate(targets))
        n_tokens = sum(len(r.per_token_logprobs) for r in records)
        recomputed = -math.fsum(r.total_logprob for r in records) / n_tokens
        assert recomputed == pytest.approx(nll(lm, strings), abs=1e-12)

    def test_adam_zero_gradient(self):
        lm = RnnLm.initialize(2, 3, derive_rng(13, "init"))
        zero = {k: np.zeros_like(p) for k, p in lm.params().items()}
        updated, state = adam_step(lm, AdamState.for_model(lm), zero, self.config)
        for name in rnn.PARAM_NAMES:
            assert np.array_equal(updated.params()[name], lm.params()[name])
        assert state.step == 1

    def test_adam_constant_gradient(self):
        lm = RnnLm.zeros(1, 1)
        grads = {k: np.full(p.shape, 0.5 if k != "E" else -0.25) for k, p in lm.params().items()}
        state = AdamState.for_model(lm)
        for _ in range(10**4 - 1):
            lm, state = adam_step(lm, state, grads, self.config)
        before = lm.params()
        lm, state = adam_step(lm, state, grads, self.config)
        assert state.step == 10**4
        for name in rnn.PARAM_NAMES:
            delta = (before[name] - lm.params()[name]) / self.config.lr
            assert np.allclose(delta, np.sign(grads[name]), atol=1e-3)

    def test_truncated_string_has_no_eos_target(self):
        lm = RnnLm.initialize(2, 3, derive_rng(2, "init"))
        full, cut = score(lm, [StringRecord((0, 1), False), StringRecord((0, 1), True)])
        assert len(full.per_token_logprobs) == 3
        assert len(cut.per_token_logprobs) == 2
        assert cut.per_token_logprobs == full.per_token_logprobs[:2]
        assert full.total_logprob == pytest.approx(math.fsum(full.per_token_logprobs), abs=1e-15)

    def test_score_full_distributions(self):
        lm = RnnLm.initialize(3, 4, derive_rng(4, "init"))
        (record,) = score(lm, [[2, 0]], full_distributions=True)
        assert len(record.step_logprobs) == 3
        assert np.allclose(logsumexp(np.array(record.step_logprobs), axis=1), 0.0, atol=1e-12)

    def test_symbols_out_of_range(self):
        lm = RnnLm.initialize(2, 3, derive_rng(2, "init"))
        with pytest.raises(RnnException):
            score(lm, [[0, 2]])

    def test_non_finite_activation(self):
        lm = RnnLm.initialize(2, 3, derive_rng(2, "init"))
        broken = RnnLm.from_params({**lm.params(), "W": np.full((3, 3), np.nan)})
        with pytest.raises(NonFiniteActivationException) as exc:
            nll(broken, [[0, 1]])
        assert exc.value.step == 1

    def test_adam_first_step(self):
        lm = RnnLm.initialize(2, 3, derive_rng(5, "init"))
        state = AdamState.for_model(lm)
        _, grads = gradients(lm, [[0, 1, 1], [1]])
        before = {k: v.copy() for k, v in lm.params().items()}
        updated, new_state = adam_step(lm, state, grads, self.config)
        assert new_state.step == 1 and state.step == 0
        for name, p in updated.params().items():
            g = grads[name]
            expected = before[name] - self.config.lr * g / (np.abs(g) + self.config.adam_eps)
            assert np.allclose(p, expected, atol=1e-12)
            assert np.array_equal(lm.params()[name], before[name])

    def test_clip_gradients(self):
        grads = {"a": np.array([3.0, 4.0])}
        clipped = clip_gradients(grads, 1.0)
        assert np.linalg.norm(clipped["a"]) == pytest.approx(1.0)
        assert clip_gradients(grads, 10.0) is grads

    def test_training_is_deterministic_and_learns(self, two_branch_dataset):
        first = train(two_branch_dataset.train, 2, 4, self.config)
        second = train(two_branch_dataset.train, 2, 4, self.config)
        for name in rnn.PARAM_NAMES:
            assert np.array_equal(first.model.params()[name], second.model.params()[name])
        assert first.epoch_losses == second.epoch_losses
        assert len(first.epoch_losses) == 1
        assert np.mean(first.batch_losses[-10:]) < first.batch_losses[0]
        assert first.status == "ok"

    def test_training_divergence(self, two_branch_dataset, monkeypatch):
        def diverged(lm, batch):
            return float("nan"), {k: np.zeros_like(v) for k, v in lm.params().items()}

        monkeypatch.setattr(rnn, "gradients", diverged)
        with pytest.raises(TrainingDivergenceException) as exc:
            train(two_branch_dataset.train, 2, 4, self.config)
        assert exc.value.batch_index == 0

    def test_empty_training_split(self):
        with pytest.raises(RnnException):
            train([], 2, 4, self.config)

    def test_checkpoint(self, tmp_path):
        lm = RnnLm.initialize(3, 4, derive_rng(6, "init"))
        path = save_checkpoint(lm, tmp_path / "model.json", metadata={"epoch_losses": [1.0]})
        loaded = load_checkpoint(path)
        for name in rnn.PARAM_NAMES:
            assert np.array_equal(loaded.params()[name], lm.params()[name])
        path.write_text('{"version": 99}')
        with pytest.raises(RnnException):
            load_checkpoint(path)

    @pytest.mark.slow
    def test_geometric_learnability(self, geometric):
        # whole length classes would move between splits, so train and evaluate on independent i.i.d. corpora
        train_strings = sample_corpus(geometric, derive_rng(12, "train"), 18000)
        held_out = sample_corpus(geometric, derive_rng(12, "held-out"), 4000)
        dataset = Dataset(train=(), test=tuple(held_out), source_automaton_id=geometric.name, seed=12, max_len=256)
        result = train(train_strings, 1, 4, TrainConfig(epochs=2, seed=12))
        scores = ScoreFile(
            model_id="geometric-D4",
            automaton_id=geometric.name,
            records=tuple(score(result.model, dataset.test)),
        )
        assert kl_estimate(geometric, scores, dataset).kl_bits < 0.1
