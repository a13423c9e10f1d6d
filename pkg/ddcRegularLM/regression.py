# -*- coding: utf-8 -*-
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence
import numpy as np
import pandas as pd
from scipy.linalg import qr, solve_triangular
from scipy.stats import norm
from .evaluation import EvalRecord
from .exceptions import ConstantPredictorException, RankDeficientDesignException, RegressionException


log = logging.getLogger(__name__)

# (record attribute, display name), in reporting order
PREDICTORS = (
    ("num_states", "|Q|"),
    ("alphabet_size", "|Sigma|"),
    ("num_transitions", "|Q||Sigma|"),
    ("rank", "R"),
    ("expected_length", "Exp. len."),
    ("rank_bound", "min(|Q|,|Sigma|+1)"),
    ("entropy_bits", "H(A)"),
    ("D", "D"),
)
INTERCEPT = "Intercept"
SMALL_SAMPLE_DOF = 200
RANK_TOL = 1e-10
EXACT_FIT_TOL = float(np.finfo(float).eps)


@dataclass(frozen=True)
class DesignMatrix:
    X: np.ndarray
    y: np.ndarray
    column_names: tuple[str, ...]
    means: Optional[tuple[float, ...]] = None
    stds: Optional[tuple[float, ...]] = None

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def k(self) -> int:
        return self.X.shape[1] - 1

    def drop(self, names: Sequence[str]) -> "DesignMatrix":
        unknown = [c for c in names if c not in self.column_names or c == INTERCEPT]
        if unknown:
            raise RegressionException(f"cannot drop columns {unknown}")
        keep = [i for i, c in enumerate(self.column_names) if c not in names]
        return DesignMatrix(
            X=self.X[:, keep],
            y=self.y,
            column_names=tuple(self.column_names[i] for i in keep),
            means=None if self.means is None else tuple(self.means[i] for i in keep),
            stds=None if self.stds is None else tuple(self.stds[i] for i in keep),
        )


@dataclass(frozen=True)
class RegressionFit:
    column_names: tuple[str, ...]
    beta_hat: np.ndarray
    stderr: np.ndarray
    t_stats: np.ndarray
    p_values: np.ndarray
    r_squared: float
    n: int
    k: int
    residual_variance: float

    @property
    def dof(self) -> int:
        return self.n - self.k - 1

    @property
    def small_sample(self) -> bool:
        return self.n - self.k < SMALL_SAMPLE_DOF

    def coefficient(self, name: str) -> float:
        return float(self.beta_hat[self.column_names.index(name)])

    def p_value(self, name: str) -> float:
        return float(self.p_values[self.column_names.index(name)])


def zscore(column: Sequence[float], name: str = "column") -> np.ndarray:
    x = np.asarray(column, dtype=np.float64)
    if x.size < 2:
        raise RegressionException(f"{name}: z-score needs at least two values")
    if np.ptp(x) == 0.0:
        raise ConstantPredictorException(f"{name}: constant column cannot be standardized", columns=[name])
    return (x - x.mean()) / x.std(ddof=1)


def build_design_matrix(records: Sequence[EvalRecord], exclude: Sequence[str] = ()) -> DesignMatrix:
    """intercept, then the z-scored predictors; derived columns come from the raw values"""
    predictors = [(attr, name) for attr, name in PREDICTORS if name not in exclude]
    k = len(predictors)
    if len(records) < k + 2:
        raise RegressionException(f"need at least {k + 2} records for {k} predictors, got {len(records)}")

    ordered = sorted(records, key=lambda r: (r.automaton_id, r.model_id, r.D))
    raw = {
        "num_states": [r.num_states for r in ordered],
        "alphabet_size": [r.alphabet_size for r in ordered],
        "rank": [r.rank for r in ordered],
        "expected_length": [r.expected_length for r in ordered],
        "entropy_bits": [r.entropy_bits for r in ordered],
        "D": [r.D for r in ordered],
    }
    raw["num_transitions"] = [q * s for q, s in zip(raw["num_states"], raw["alphabet_size"])]
    raw["rank_bound"] = [min(q, s + 1) for q, s in zip(raw["num_states"], raw["alphabet_size"])]

    constant = [name for attr, name in predictors if np.ptp(np.asarray(raw[attr], dtype=float)) == 0.0]
    if constant:
        raise ConstantPredictorException(f"constant predictors in this record set: {constant}", columns=constant)

    columns = [np.ones(len(ordered))]
    means, stds = [0.0], [1.0]
    for attr, name in predictors:
        x = np.asarray(raw[attr], dtype=np.float64)
        columns.append(zscore(x, name))
        means.append(float(x.mean()))
        stds.append(float(x.std(ddof=1)))
    return DesignMatrix(
        X=np.column_stack(columns),
        y=np.array([r.kl_bits for r in ordered], dtype=np.float64),
        column_names=(INTERCEPT, *[name for _, name in predictors]),
        means=tuple(means),
        stds=tuple(stds),
    )


def _dependent_sets(r: np.ndarray, perm: np.ndarray, rank: int, names: Sequence[str]) -> tuple[list[str], list[str]]:
    r11 = r[:rank, :rank]
    dependent, dropped = set(), []
    for j in range(rank, r.shape[1]):
        coef = solve_triangular(r11, r[:rank, j])
        involved = [names[perm[i]] for i in np.flatnonzero(np.abs(coef) > 1e-8)]
        dependent.update(involved)
        dependent.add(names[perm[j]])
        dropped.append(names[perm[j]])
    return sorted(dependent, key=list(names).index), dropped


def ols_fit(dm: DesignMatrix) -> RegressionFit:
    """
    Least squares by column-pivoted QR.  SE_j = sqrt(s^2 [(X'X)^-1]_jj),
    two-sided p-values from the normal approximation to the t distribution.
    """
    x, y = dm.X, dm.y
    n, p = x.shape
    dof = n - p
    if dof < 1:
        raise RegressionException(f"need more observations ({n}) than coefficients ({p})")

    q_mat, r, perm = qr(x, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    rank = int(np.count_nonzero(diag > RANK_TOL * diag[0])) if diag[0] > 0 else 0
    if rank < p:
        dependent, dropped = _dependent_sets(r, perm, rank, dm.column_names)
        raise RankDeficientDesignException(
            f"design matrix has rank {rank} < {p}; linearly dependent columns {dependent}",
            dependent_columns=dependent,
            dropped_columns=dropped,
        )

    beta_perm = solve_triangular(r, q_mat.T @ y)
    beta = np.empty(p)
    beta[perm] = beta_perm

    r_inv = solve_triangular(r, np.eye(p))
    xtx_inv_diag = np.empty(p)
    xtx_inv_diag[perm] = np.sum(r_inv * r_inv, axis=1)

    resid = y - x @ beta
    rss = float(resid @ resid)
    tss = float(((y - y.mean()) ** 2).sum())
    if rss <= EXACT_FIT_TOL * max(tss, float(y @ y)):
        # residuals are rounding noise: an exact fit has zero standard errors
        rss = 0.0
    sigma2 = rss / dof
    stderr = np.sqrt(sigma2 * xtx_inv_diag)

    with np.errstate(divide="ignore", invalid="ignore"):
        t_stats = np.where(stderr > 0, beta / stderr, np.where(beta == 0, 0.0, np.inf) * np.sign(beta))
    p_values = np.where(stderr > 0, 2.0 * norm.sf(np.abs(t_stats)), 0.0)

    r_squared = 1.0 - rss / tss if tss > 0 else 1.0
    return RegressionFit(
        column_names=dm.column_names,
        beta_hat=beta,
        stderr=stderr,
        t_stats=t_stats,
        p_values=p_values,
        r_squared=r_squared,
        n=n,
        k=p - 1,
        residual_variance=sigma2,
    )


def fit_dropping_dependent(dm: DesignMatrix) -> tuple[RegressionFit, DesignMatrix, list[str]]:
    """refit after removing the aliased columns the pivoted QR reports"""
    dropped_all = []
    while True:
        try:
            return ols_fit(dm), dm, dropped_all
        except RankDeficientDesignException as e:
            drop = [c for c in e.dropped_columns if c != INTERCEPT]
            if not drop:
                raise
            log.warning(f"Dropping aliased predictors {drop}")
            dropped_all.extend(drop)
            dm = dm.drop(drop)


def format_p_value(p: float) -> str:
    if math.isnan(p):
        return "NA"
    if p < 0.001:
        return "<0.001"
    if p < 0.01:
        return "<0.01"
    if p < 0.05:
        return "<0.05"
    return f"{p:.2f}"


def regression_table(fit: RegressionFit, dm: DesignMatrix) -> pd.DataFrame:
    rows = []
    for j, name in enumerate(dm.column_names):
        rows.append(
            {
                "predictor": name,
                "beta": float(fit.beta_hat[j]),
                "se": float(fit.stderr[j]),
                "t": float(fit.t_stats[j]),
                "p": float(fit.p_values[j]),
                "p_display": "no p-value (small sample)" if fit.small_sample else format_p_value(fit.p_values[j]),
            }
        )
    return pd.DataFrame(rows)


def regression_report(fit: RegressionFit, dm: DesignMatrix) -> str:
    """aligned plain-text table: predictor, beta, SE, p (or t for small samples)"""
    table = regression_table(fit, dm)
    last = "t" if fit.small_sample else "p-value"
    width = max(len(INTERCEPT), *(len(n) for n in table["predictor"])) + 2
    lines = [f"{'Predictor':<{width}}{'beta':>10}{'SE':>10}{last:>28}"]
    for row in table.itertuples(index=False):
        tail = f"{row.t:.2f} no p-value (small sample)" if fit.small_sample else row.p_display
        lines.append(f"{row.predictor:<{width}}{row.beta:>10.2f}{row.se:>10.2f}{tail:>28}")
    lines.append(f"N = {fit.n}, k = {fit.k}, R^2 = {fit.r_squared:.3f}")
    return "\n".join(lines)


def write_report_tsv(fit: RegressionFit, dm: DesignMatrix, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    table = regression_table(fit, dm)
    table.to_csv(path, sep="\t", index=False, na_rep="NA", float_format="%.17g")
    return path
