# -*- coding: utf-8 -*-
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence
import numpy as np
from scipy.linalg import svd
from .analysis import analyze, expected_length
from .automaton import Alphabet, Dpfsa, ParamMode, save_automaton
from .exceptions import GenerationException
from .seeding import RNG_ALGORITHM, derive_rng
from .settings import GenerationConfig


log = logging.getLogger(__name__)


def sample_topology(rng: np.random.Generator, num_states: int, alphabet_size: int) -> np.ndarray:
    if num_states < 1 or alphabet_size < 1:
        raise GenerationException(f"sizes must be >= 1, got |Q|={num_states}, |Sigma|={alphabet_size}")
    return rng.integers(0, num_states, size=(num_states, alphabet_size), dtype=np.int64)


def sample_logits(
    rng: np.random.Generator,
    alphabet_size: int,
    num_states: int,
    logit_std: float = 2.0,
) -> np.ndarray:
    if num_states < 1 or alphabet_size < 1:
        raise GenerationException(f"sizes must be >= 1, got |Q|={num_states}, |Sigma|={alphabet_size}")
    return rng.normal(0.0, logit_std, size=(alphabet_size + 1, num_states))


def _signed_svd(matrix: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """thin SVD with each left singular vector's largest-magnitude entry made positive"""
    u, s, vt = svd(matrix, full_matrices=False, lapack_driver="gesdd")
    pivots = np.argmax(np.abs(u), axis=0)
    signs = np.sign(u[pivots, np.arange(u.shape[1])])
    signs[signs == 0] = 1.0
    return u * signs, s, vt * signs[:, None]


def rank_truncate(matrix: np.ndarray, rank: int) -> np.ndarray:
    """best rank-R approximation in Frobenius norm (Eckart-Young)"""
    matrix = np.asarray(matrix, dtype=np.float64)
    if not 1 <= rank <= min(matrix.shape):
        raise GenerationException(f"rank {rank} outside [1, {min(matrix.shape)}]")
    u, s, vt = _signed_svd(matrix)
    return (u[:, :rank] * s[:rank]) @ vt[:rank]


def family_ranks(num_states: int, alphabet_size: int, rank_grid: Sequence[int]) -> list[int]:
    bound = min(num_states, alphabet_size + 1)
    return sorted({r for r in rank_grid if r <= bound})


def build_family(
    topology: np.ndarray,
    logits: np.ndarray,
    config: GenerationConfig,
    name_prefix: str = "",
) -> list[Dpfsa]:
    topology = np.asarray(topology, dtype=np.int64)
    num_states, alphabet_size = topology.shape
    if logits.shape != (alphabet_size + 1, num_states):
        raise GenerationException(f"logits shape {logits.shape} does not match topology {topology.shape}")

    family = []
    for rank in family_ranks(num_states, alphabet_size, config.rank_grid):
        family.append(
            Dpfsa(
                num_states=num_states,
                alphabet=Alphabet(alphabet_size),
                initial_state=0,
                topology=topology,
                logits=rank_truncate(logits, rank),
                declared_rank=rank,
                param_mode=ParamMode.SOFTMAX_LOGITS,
                name=f"{name_prefix}R{rank}",
            )
        )
    return family


def filter_by_expected_length(automata: Sequence[Dpfsa], threshold: float) -> list[Dpfsa]:
    if threshold == float("inf"):
        return list(automata)
    kept = [a for a in automata if expected_length(a) <= threshold]
    if len(kept) < len(automata):
        log.info(f"Length filter dropped {len(automata) - len(kept)} of {len(automata)} automata (> {threshold})")
    return kept


def median_expected_length(automata: Sequence[Dpfsa]) -> float:
    if not automata:
        raise GenerationException("median of an empty automaton pool")
    return float(np.median([expected_length(a) for a in automata]))


@dataclass(frozen=True)
class FamilyKey:
    num_states: int
    alphabet_size: int
    replicate: int

    @property
    def prefix(self) -> str:
        return f"q{self.num_states}-s{self.alphabet_size}-r{self.replicate}-"


def generate_family(config: GenerationConfig, key: FamilyKey) -> list[Dpfsa]:
    """unfiltered family for one (|Q|, |Sigma|, replicate) cell, on its own RNG stream"""
    rng = derive_rng(config.master_seed, "family", key.num_states, key.alphabet_size, key.replicate)
    topology = sample_topology(rng, key.num_states, key.alphabet_size)
    logits = sample_logits(rng, key.alphabet_size, key.num_states, config.logit_std)
    return build_family(topology, logits, config, name_prefix=key.prefix)


def generate_families(config: GenerationConfig, replicates: int = 1) -> dict[FamilyKey, list[Dpfsa]]:
    """all grid families, length-filtered by the configured rule"""
    families = {
        FamilyKey(q, s, r): generate_family(config, FamilyKey(q, s, r))
        for q in config.state_sizes
        for s in config.alphabet_sizes
        for r in range(replicates)
    }
    if config.length_filter == "median":
        threshold = median_expected_length([a for fam in families.values() for a in fam])
        log.info(f"Median expected length of the pool: {threshold:.3f}")
    else:
        threshold = config.length_filter_threshold
    return {k: filter_by_expected_length(v, threshold) for k, v in families.items()}


def write_family_manifest(
    family: Sequence[Dpfsa],
    config: GenerationConfig,
    out_dir: str | Path,
    key: Optional[FamilyKey] = None,
) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    members = []
    for dpfsa in family:
        path = save_automaton(dpfsa, out_dir / f"{dpfsa.name or 'automaton'}.json")
        report = analyze(dpfsa)
        members.append(
            {
                "automaton_id": dpfsa.name,
                "file": path.name,
                "declared_rank": dpfsa.declared_rank,
                "expected_length": report.expected_length,
                "entropy_bits": report.entropy_bits,
                "analysis": report.to_dict(),
            }
        )
    manifest = {
        "generation_config": json.loads(config.model_dump_json()),
        "master_seed": config.master_seed,
        "rng_algorithm": RNG_ALGORITHM,
        "family": None if key is None else {
            "num_states": key.num_states,
            "alphabet_size": key.alphabet_size,
            "replicate": key.replicate,
        },
        "members": members,
    }
    path = out_dir / "family.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path
