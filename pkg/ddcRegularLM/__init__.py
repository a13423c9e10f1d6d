import logging
from importlib.metadata import version
from typing import Literal, NamedTuple
from .analysis import analyze, entropy, expected_length, logprob_matrix_rank, truncated_sums
from .automaton import (
    Alphabet,
    Dpfsa,
    ParamMode,
    StringRecord,
    geometric_automaton,
    load_automaton,
    logit_rank,
    save_automaton,
    string_logprob,
    two_branch_automaton,
    validate,
)
from .dataset import Dataset, build_dataset, sample_corpus
from .evaluation import EvalRecord, KlEstimate, ScoreFile, empirical_cross_entropy, exact_kl, kl_estimate
from .experiment import export_plot, run_experiment, verify_manifest
from .generation import FamilyKey, build_family, generate_families, generate_family, rank_truncate
from .regression import build_design_matrix, ols_fit, regression_report, zscore
from .rnn import RnnLm, gradients, score, train
from .settings import DatasetConfig, ExperimentConfig, GenerationConfig, TrainConfig
from .store import ResultsStore, StoreUtils


__all__ = (
    "Alphabet",
    "Dataset",
    "DatasetConfig",
    "Dpfsa",
    "EvalRecord",
    "ExperimentConfig",
    "FamilyKey",
    "GenerationConfig",
    "KlEstimate",
    "ParamMode",
    "ResultsStore",
    "RnnLm",
    "ScoreFile",
    "StoreUtils",
    "StringRecord",
    "TrainConfig",
    "analyze",
    "build_dataset",
    "build_design_matrix",
    "build_family",
    "empirical_cross_entropy",
    "entropy",
    "exact_kl",
    "expected_length",
    "export_plot",
    "generate_families",
    "generate_family",
    "geometric_automaton",
    "gradients",
    "kl_estimate",
    "load_automaton",
    "logit_rank",
    "logprob_matrix_rank",
    "ols_fit",
    "rank_truncate",
    "regression_report",
    "run_experiment",
    "sample_corpus",
    "save_automaton",
    "score",
    "string_logprob",
    "train",
    "truncated_sums",
    "two_branch_automaton",
    "validate",
    "verify_manifest",
    "zscore",
)


__title__ = "ddcRegularLM"
__author__ = "Daniel Costa"
__email__ = "danieldcsta@gmail.com>"
__license__ = "MIT"
__copyright__ = "Copyright 2024-present ddc"
_req_python_version = (3, 10, 0)


try:
    _version = tuple(int(x) for x in version(__title__).split("."))
except ModuleNotFoundError:
    _version = (0, 0, 0)


class VersionInfo(NamedTuple):
    major: int
    minor: int
    micro: int
    releaselevel: Literal["alpha", "beta", "candidate", "final"]
    serial: int


__version__ = _version
__version_info__: VersionInfo = VersionInfo(
    major=__version__[0],
    minor=__version__[1],
    micro=__version__[2],
    releaselevel="final",
    serial=0,
)
__req_python_version__: VersionInfo = VersionInfo(
    major=_req_python_version[0],
    minor=_req_python_version[1],
    micro=_req_python_version[2],
    releaselevel="final",
    serial=0,
)

logging.getLogger(__name__).addHandler(logging.NullHandler())

del (
    logging,
    NamedTuple,
    Literal,
    VersionInfo,
    version,
    _version,
    _req_python_version,
)
