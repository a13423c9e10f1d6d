# -*- coding: utf-8 -*-
"""
Single-layer Elman recurrent LM, numpy only.

    h_{-1} = h0
    h_t    = tanh(W h_{t-1} + U embed[y_t] + b)
    q(. | y_<t) = softmax(E h_{t-1})

A string of length n gets n + 1 prediction steps, the last one predicting EOS.
Truncated strings get n steps and no EOS target.
"""
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence
import numpy as np
from scipy.special import log_softmax, softmax
from .automaton import StringRecord
from .exceptions import NonFiniteActivationException, RnnException, TrainingDivergenceException
from .seeding import derive_rng
from .settings import TrainConfig


log = logging.getLogger(__name__)

PARAM_NAMES = ("embed", "W", "U", "b", "h0", "E")
CHECKPOINT_VERSION = 1


@dataclass(frozen=True, eq=False)
class RnnLm:
    embed: np.ndarray
    W: np.ndarray
    U: np.ndarray
    b: np.ndarray
    h0: np.ndarray
    E: np.ndarray

    @property
    def hidden_size(self) -> int:
        return self.W.shape[0]

    @property
    def alphabet_size(self) -> int:
        return self.embed.shape[0]

    @property
    def eos(self) -> int:
        return self.alphabet_size

    def params(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    @classmethod
    def from_params(cls, params: dict[str, np.ndarray]) -> "RnnLm":
        return cls(**{name: np.array(params[name], dtype=np.float64) for name in PARAM_NAMES})

    @classmethod
    def zeros(cls, alphabet_size: int, hidden_size: int) -> "RnnLm":
        return cls.from_params(
            {name: np.zeros(shape) for name, shape in param_shapes(alphabet_size, hidden_size).items()}
        )

    @classmethod
    def initialize(cls, alphabet_size: int, hidden_size: int, rng: np.random.Generator, std: float = 0.1) -> "RnnLm":
        """weights ~ N(0, std^2), h0 = 0"""
        params = {}
        for name, shape in param_shapes(alphabet_size, hidden_size).items():
            params[name] = np.zeros(shape) if name == "h0" else rng.normal(0.0, std, size=shape)
        return cls.from_params(params)


def param_shapes(alphabet_size: int, hidden_size: int) -> dict[str, tuple[int, ...]]:
    d = hidden_size
    return {
        "embed": (alphabet_size, d),
        "W": (d, d),
        "U": (d, d),
        "b": (d,),
        "h0": (d,),
        "E": (alphabet_size + 1, d),
    }


@dataclass
class _Batch:
    ids: np.ndarray
    lengths: np.ndarray
    targets: np.ndarray
    mask: np.ndarray

    @property
    def n_steps(self) -> int:
        return int(self.mask.sum())


def _as_record(s: StringRecord | Sequence[int]) -> StringRecord:
    return s if isinstance(s, StringRecord) else StringRecord.of(s)


def _make_batch(strings: Sequence[StringRecord | Sequence[int]], alphabet_size: int) -> _Batch:
    records = [_as_record(s) for s in strings]
    if not records:
        raise RnnException("empty batch")
    batch = len(records)
    t_max = max(r.length for r in records)
    ids = np.zeros((batch, max(t_max, 1)), dtype=np.int64)
    targets = np.full((batch, t_max + 1), alphabet_size, dtype=np.int64)
    mask = np.zeros((batch, t_max + 1), dtype=bool)
    lengths = np.zeros(batch, dtype=np.int64)
    for i, r in enumerate(records):
        n = r.length
        if n and (min(r.symbols) < 0 or max(r.symbols) >= alphabet_size):
            raise RnnException(f"string {i} has symbols outside [0, {alphabet_size})")
        ids[i, :n] = r.symbols
        targets[i, :n] = r.symbols
        mask[i, :n] = True
        mask[i, n] = not r.truncated
        lengths[i] = n
    return _Batch(ids=ids, lengths=lengths, targets=targets, mask=mask)


@dataclass
class _Trace:
    hidden: np.ndarray
    logp: np.ndarray


def _run(lm: RnnLm, batch: _Batch) -> _Trace:
    """hidden[s] is the state before output step s; logp[s] the step-s log-distribution"""
    b_size, steps = batch.targets.shape
    d = lm.hidden_size
    hidden = np.empty((steps, b_size, d))
    hidden[0] = lm.h0
    for s in range(steps - 1):
        x = lm.embed[batch.ids[:, s]]
        hidden[s + 1] = np.tanh(hidden[s] @ lm.W.T + x @ lm.U.T + lm.b)
        if not np.isfinite(hidden[s + 1]).all():
            raise NonFiniteActivationException(f"non-finite hidden state at step {s + 1}", step=s + 1)
    logp = log_softmax(hidden @ lm.E.T, axis=-1)
    if not np.isfinite(logp[batch.mask.T]).all():
        bad = int(np.argwhere(~np.isfinite(logp).all(axis=-1) & batch.mask.T)[0][0])
        raise NonFiniteActivationException(f"non-finite output distribution at step {bad}", step=bad)
    return _Trace(hidden=hidden, logp=logp)


def forward(lm: RnnLm, string: StringRecord | Sequence[int]) -> np.ndarray:
    """(|y|+1) x (|Sigma|+1) per-step log-probabilities; the last row predicts EOS"""
    record = _as_record(string)
    batch = _make_batch([StringRecord(record.symbols, False)], lm.alphabet_size)
    return _run(lm, batch).logp[:, 0, :].copy()


def _target_logp(trace: _Trace, batch: _Batch) -> np.ndarray:
    """steps x batch log-probability of each target (0 where masked)"""
    picked = np.take_along_axis(trace.logp, batch.targets.T[:, :, None], axis=-1)[:, :, 0]
    return np.where(batch.mask.T, picked, 0.0)


def nll(lm: RnnLm, strings: Sequence[StringRecord | Sequence[int]]) -> float:
    """mean per-token negative log-likelihood in nats"""
    batch = _make_batch(strings, lm.alphabet_size)
    trace = _run(lm, batch)
    return float(-_target_logp(trace, batch).sum() / batch.n_steps)


def gradients(lm: RnnLm, strings: Sequence[StringRecord | Sequence[int]]) -> tuple[float, dict[str, np.ndarray]]:
    """loss and its exact gradient by backpropagation through time"""
    batch = _make_batch(strings, lm.alphabet_size)
    trace = _run(lm, batch)
    n_steps = batch.n_steps
    loss = float(-_target_logp(trace, batch).sum() / n_steps)

    steps, b_size = batch.targets.T.shape
    mask = batch.mask.T[:, :, None]
    d_logits = softmax(trace.hidden @ lm.E.T, axis=-1)
    np.subtract.at(d_logits, (np.arange(steps)[:, None], np.arange(b_size)[None, :], batch.targets.T), 1.0)
    d_logits = np.where(mask, d_logits, 0.0) / n_steps

    grads = {name: np.zeros_like(p) for name, p in lm.params().items()}
    grads["E"] = np.einsum("sbv,sbd->vd", d_logits, trace.hidden)
    d_hidden = d_logits @ lm.E

    for s in range(steps - 2, -1, -1):
        h_next = trace.hidden[s + 1]
        d_pre = d_hidden[s + 1] * (1.0 - h_next * h_next)
        x = lm.embed[batch.ids[:, s]]
        grads["W"] += d_pre.T @ trace.hidden[s]
        grads["U"] += d_pre.T @ x
        grads["b"] += d_pre.sum(axis=0)
        np.add.at(grads["embed"], batch.ids[:, s], d_pre @ lm.U)
        d_hidden[s] += d_pre @ lm.W

    grads["h0"] = d_hidden[0].sum(axis=0)
    return loss, grads


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def for_model(cls, lm: RnnLm) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p) for k, p in lm.params().items()},
            v={k: np.zeros_like(p) for k, p in lm.params().items()},
            step=0,
        )


def adam_step(
    lm: RnnLm,
    state: AdamState,
    grads: dict[str, np.ndarray],
    config: TrainConfig,
) -> tuple[RnnLm, AdamState]:
    """bias-corrected Adam; returns new model and state, inputs untouched"""
    t = state.step + 1
    b1, b2 = config.adam_beta1, config.adam_beta2
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    params, m, v = {}, {}, {}
    for name, p in lm.params().items():
        g = grads[name]
        if g.shape != p.shape:
            raise RnnException(f"gradient shape {g.shape} != parameter shape {p.shape} for {name}")
        m[name] = b1 * state.m[name] + (1.0 - b1) * g
        v[name] = b2 * state.v[name] + (1.0 - b2) * (g * g)
        m_hat = m[name] / bc1
        v_hat = v[name] / bc2
        params[name] = p - config.lr * m_hat / (np.sqrt(v_hat) + config.adam_eps)
    return RnnLm.from_params(params), AdamState(m=m, v=v, step=t)


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> dict[str, np.ndarray]:
    total = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if total <= max_norm:
        return grads
    scale = max_norm / total
    return {k: g * scale for k, g in grads.items()}


@dataclass
class TrainResult:
    model: RnnLm
    epoch_losses: list[float]
    status: str = "ok"
    steps: int = 0
    batch_losses: list[float] = field(default_factory=list, repr=False)


def train(
    train_strings: Sequence[StringRecord],
    alphabet_size: int,
    hidden_size: int,
    config: TrainConfig,
) -> TrainResult:
    """
    Mini-batch Adam on the per-token NLL.  Batches are reshuffled every epoch
    from the config seed; divergence raises with the offending batch index.
    """
    if not train_strings:
        raise RnnException("training split is empty")
    init_rng = derive_rng(config.seed, "rnn-init", alphabet_size, hidden_size)
    shuffle_rng = derive_rng(config.seed, "rnn-shuffle", alphabet_size, hidden_size)
    lm = RnnLm.initialize(alphabet_size, hidden_size, init_rng, std=config.init_std)
    state = AdamState.for_model(lm)
    n = len(train_strings)

    epoch_losses, batch_losses = [], []
    batch_index = 0
    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(n)
        weighted, tokens = 0.0, 0
        for start in range(0, n, config.batch_size):
            batch = [train_strings[i] for i in order[start:start + config.batch_size]]
            try:
                loss, grads = gradients(lm, batch)
            except NonFiniteActivationException as e:
                raise TrainingDivergenceException(
                    f"Training diverged at batch {batch_index} (epoch {epoch}) | {e.msg}",
                    batch_index=batch_index,
                )
            if not math.isfinite(loss) or not all(np.isfinite(g).all() for g in grads.values()):
                raise TrainingDivergenceException(
                    f"Training diverged at batch {batch_index} (epoch {epoch}): non-finite loss",
                    batch_index=batch_index,
                )
            if config.grad_clip is not None:
                grads = clip_gradients(grads, config.grad_clip)
            lm, state = adam_step(lm, state, grads, config)
            n_tok = sum(s.length + (0 if s.truncated else 1) for s in batch)
            weighted += loss * n_tok
            tokens += n_tok
            batch_losses.append(loss)
            batch_index += 1
        epoch_losses.append(weighted / max(tokens, 1))
        log.debug(f"epoch {epoch} | D={hidden_size} | mean train nll {epoch_losses[-1]:.4f} nats/token")

    return TrainResult(
        model=lm,
        epoch_losses=epoch_losses,
        steps=state.step,
        batch_losses=batch_losses,
    )


@dataclass(frozen=True)
class ScoreRecord:
    string_index: int
    total_logprob: float
    per_token_logprobs: tuple[float, ...]
    step_logprobs: Optional[tuple[tuple[float, ...], ...]] = None


def score(
    lm: RnnLm,
    strings: Sequence[StringRecord | Sequence[int]],
    full_distributions: bool = False,
) -> list[ScoreRecord]:
    """
    Per-string log-probabilities (nats); truncated strings carry no EOS term.
    Each string goes through forward() on its own, so the values match it bit for bit.
    """
    out = []
    for i, s in enumerate(strings):
        record = _as_record(s)
        logp = forward(lm, record)
        targets = record.symbols if record.truncated else record.symbols + (lm.eos,)
        tokens = tuple(float(logp[t, y]) for t, y in enumerate(targets))
        steps = None
        if full_distributions:
            steps = tuple(tuple(float(v) for v in logp[t]) for t in range(len(targets)))
        out.append(
            ScoreRecord(
                string_index=i,
                total_logprob=math.fsum(tokens),
                per_token_logprobs=tokens,
                step_logprobs=steps,
            )
        )
    return out


def save_checkpoint(lm: RnnLm, path: str | Path, metadata: Optional[dict] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {
        "version": CHECKPOINT_VERSION,
        "architecture": "elman-tanh",
        "hidden_size": lm.hidden_size,
        "alphabet_size": lm.alphabet_size,
        "tensors": {
            name: {"shape": list(p.shape), "data": [float(x) for x in p.ravel()]}
            for name, p in lm.params().items()
        },
        "metadata": metadata or {},
    }
    path.write_text(json.dumps(doc, sort_keys=True))
    return path


def load_checkpoint(path: str | Path) -> RnnLm:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
        if doc.get("version") != CHECKPOINT_VERSION:
            raise RnnException(f"unsupported checkpoint version {doc.get('version')!r}")
        params = {
            name: np.array(t["data"], dtype=np.float64).reshape(t["shape"])
            for name, t in doc["tensors"].items()
        }
    except (OSError, json.JSONDecodeError, KeyError, ValueError) as e:
        raise RnnException(f"Unable to read checkpoint | {path} | {repr(e)}")
    lm = RnnLm.from_params(params)
    expected = param_shapes(lm.alphabet_size, lm.hidden_size)
    for name, p in lm.params().items():
        if p.shape != expected[name]:
            raise RnnException(f"checkpoint tensor {name} has shape {p.shape}, expected {expected[name]}")
    return lm
