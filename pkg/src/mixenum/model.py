"""Mixture data model and likelihood/posterior computations.

Two families share one interface: latent class analysis (LCA) treats the
n x J response matrix as categorical codes 1..C with class-specific
item-response probabilities, while latent profile analysis (LPA) treats the
same codes as real values with class-specific means and a shared diagonal
covariance. Per-row mixture sums are always evaluated in log space.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .errors import ContractViolation, EstimationError

# Degeneracy guards: item-response probabilities are kept inside
# [RHO_FLOOR, 1 - RHO_FLOOR] (then renormalized, so entries may sit a hair
# below the floor) and LPA variances never drop under VAR_FLOOR.
RHO_FLOOR = 1e-6
VAR_FLOOR = 1e-4

_PROB_SUM_TOL = 1e-12


def _as_readonly(a: np.ndarray, dtype=np.float64) -> np.ndarray:
    out = np.array(a, dtype=dtype)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class Dataset:
    """An n x J response matrix, optionally with simulation truth labels.

    ``values`` holds the responses as floats so that parametric-bootstrap
    draws from an LPA fit (real-valued) and study data (integer codes 1..C)
    share one container. When ``categories`` is set the values must be
    integer codes in 1..categories.
    """

    values: np.ndarray
    true_labels: np.ndarray | None = None
    categories: int | None = None

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64)
        if vals.ndim != 2 or vals.shape[0] < 1 or vals.shape[1] < 1:
            raise ContractViolation(f"dataset must be a non-empty 2-D matrix, got shape {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise ContractViolation("dataset contains non-finite values")
        if self.categories is not None:
            c = int(self.categories)
            if c < 2:
                raise ContractViolation(f"categories must be >= 2, got {c}")
            if not np.all(vals == np.round(vals)):
                raise ContractViolation("categorical dataset must contain integer codes")
            if vals.min() < 1 or vals.max() > c:
                raise ContractViolation(
                    f"codes must lie in 1..{c}, found range [{vals.min():g}, {vals.max():g}]"
                )
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)
        if self.true_labels is not None:
            labels = np.array(self.true_labels, dtype=np.int64)
            if labels.shape != (vals.shape[0],):
                raise ContractViolation("true_labels length must match the number of rows")
            labels.flags.writeable = False
            object.__setattr__(self, "true_labels", labels)

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_items(self) -> int:
        return self.values.shape[1]

    def codes(self) -> np.ndarray:
        """Responses as 0-based integer category indices (categorical data only)."""
        if self.categories is None:
            raise ContractViolation("dataset is not categorical")
        return self.values.astype(np.int64) - 1


@dataclass(frozen=True)
class ModelSpec:
    """Analysis kind plus the class/item/category counts defining one model."""

    kind: str  # "lca" or "lpa"
    n_classes: int
    n_items: int
    n_categories: int = 5

    def __post_init__(self):
        if self.kind not in ("lca", "lpa"):
            raise ContractViolation(f"kind must be 'lca' or 'lpa', got {self.kind!r}")
        if self.n_classes < 1 or self.n_items < 1 or self.n_categories < 2:
            raise ContractViolation(
                f"invalid spec: K={self.n_classes}, J={self.n_items}, C={self.n_categories}"
            )


@dataclass(frozen=True)
class LcaParams:
    """Class proportions ``pi`` (K,) and item-response probabilities ``rho`` (K, J, C)."""

    pi: np.ndarray
    rho: np.ndarray

    def __post_init__(self):
        pi = _as_readonly(self.pi)
        rho = _as_readonly(self.rho)
        if pi.ndim != 1 or rho.ndim != 3 or rho.shape[0] != pi.shape[0]:
            raise ContractViolation(f"inconsistent LCA shapes: pi {pi.shape}, rho {rho.shape}")
        if np.any(pi < 0) or abs(pi.sum() - 1.0) > _PROB_SUM_TOL:
            raise ContractViolation("pi must be nonnegative and sum to 1")
        # renormalization after clamping can leave entries marginally below the floor
        lo = RHO_FLOOR * (1.0 - 1e-3)
        if np.any(rho < lo) or np.any(rho > 1.0 - lo):
            raise ContractViolation("rho entries must lie inside the clamped open interval (0, 1)")
        if np.max(np.abs(rho.sum(axis=2) - 1.0)) > _PROB_SUM_TOL:
            raise ContractViolation("each rho[k, j, :] must sum to 1")
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "rho", rho)

    @property
    def n_classes(self) -> int:
        return self.pi.shape[0]

    @property
    def n_items(self) -> int:
        return self.rho.shape[1]

    @property
    def n_categories(self) -> int:
        return self.rho.shape[2]

    def permuted(self, order) -> "LcaParams":
        """Same mixture with class labels reordered."""
        order = np.asarray(order, dtype=np.int64)
        return LcaParams(pi=self.pi[order], rho=self.rho[order])


@dataclass(frozen=True)
class LpaParams:
    """Class proportions ``pi`` (K,), means ``mu`` (K, J), shared variances ``sigma2`` (J,)."""

    pi: np.ndarray
    mu: np.ndarray
    sigma2: np.ndarray

    def __post_init__(self):
        pi = _as_readonly(self.pi)
        mu = _as_readonly(self.mu)
        sigma2 = _as_readonly(self.sigma2)
        if pi.ndim != 1 or mu.ndim != 2 or mu.shape[0] != pi.shape[0]:
            raise ContractViolation(f"inconsistent LPA shapes: pi {pi.shape}, mu {mu.shape}")
        if sigma2.shape != (mu.shape[1],):
            raise ContractViolation("sigma2 must hold one shared variance per item")
        if np.any(pi < 0) or abs(pi.sum() - 1.0) > _PROB_SUM_TOL:
            raise ContractViolation("pi must be nonnegative and sum to 1")
        if np.any(sigma2 < VAR_FLOOR * (1.0 - 1e-9)):
            raise ContractViolation(f"variances must be >= {VAR_FLOOR}")
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma2", sigma2)

    @property
    def n_classes(self) -> int:
        return self.pi.shape[0]

    @property
    def n_items(self) -> int:
        return self.mu.shape[1]

    def permuted(self, order) -> "LpaParams":
        """Same mixture with class labels reordered (variances are class-invariant)."""
        order = np.asarray(order, dtype=np.int64)
        return LpaParams(pi=self.pi[order], mu=self.mu[order], sigma2=self.sigma2)


MixtureParams = LcaParams | LpaParams


@dataclass(frozen=True)
class FitResult:
    """Outcome of one multistart EM estimation."""

    logL: float
    params: MixtureParams
    n_params: int
    iterations: int
    converged: bool
    best_replicated: bool
    seed_trace: tuple[int, ...] = field(default_factory=tuple)


def _check_lca_dims(params: LcaParams, data: Dataset) -> None:
    if params.n_items != data.n_items:
        raise ContractViolation(
            f"params have {params.n_items} items but data has {data.n_items}"
        )
    if data.categories is not None and data.categories != params.n_categories:
        raise ContractViolation(
            f"params expect {params.n_categories} categories but data declares {data.categories}"
        )


def _check_lpa_dims(params: LpaParams, data: Dataset) -> None:
    if params.n_items != data.n_items:
        raise ContractViolation(
            f"params have {params.n_items} items but data has {data.n_items}"
        )


def log_components(params: MixtureParams, data: Dataset) -> np.ndarray:
    """Per-row, per-class joint log density: log pi_k + log f_k(y_i), shape (n, K)."""
    if isinstance(params, LcaParams):
        _check_lca_dims(params, data)
        idx = data.values.astype(np.int64) - 1  # (n, J)
        if idx.min() < 0 or idx.max() >= params.n_categories:
            raise ContractViolation("data codes outside 1..C for these params")
        log_rho = np.log(params.rho)  # (K, J, C)
        # gathered[i, j, k] = log rho[k, j, code_ij]
        gathered = log_rho.transpose(1, 2, 0)[np.arange(data.n_items), idx]
        comp = gathered.sum(axis=1)
    elif isinstance(params, LpaParams):
        _check_lpa_dims(params, data)
        diff = data.values[:, None, :] - params.mu[None, :, :]  # (n, K, J)
        inv_var = 1.0 / params.sigma2
        quad = np.einsum("nkj,j->nk", diff * diff, inv_var)
        log_norm = np.sum(np.log(2.0 * np.pi * params.sigma2))
        comp = -0.5 * (log_norm + quad)
    else:
        raise ContractViolation(f"unknown params type {type(params).__name__}")
    with np.errstate(divide="ignore"):
        log_pi = np.log(params.pi)
    return comp + log_pi[None, :]


def loglik_lca(params: LcaParams, data: Dataset) -> float:
    """Total LCA log-likelihood: sum_i log sum_k pi_k prod_j rho[k, j, y_ij]."""
    if not isinstance(params, LcaParams):
        raise ContractViolation("loglik_lca requires LcaParams")
    return float(np.sum(logsumexp(log_components(params, data), axis=1)))


def loglik_lpa(params: LpaParams, data: Dataset) -> float:
    """Total LPA log-likelihood under class means and shared diagonal variances."""
    if not isinstance(params, LpaParams):
        raise ContractViolation("loglik_lpa requires LpaParams")
    return float(np.sum(logsumexp(log_components(params, data), axis=1)))


def loglik(params: MixtureParams, data: Dataset) -> float:
    """Family-dispatching total log-likelihood."""
    return float(np.sum(logsumexp(log_components(params, data), axis=1)))


def posterior(params: MixtureParams, data: Dataset) -> np.ndarray:
    """Class responsibilities: row i, column k = P(class k | y_i), rows sum to 1."""
    comp = log_components(params, data)
    norm = logsumexp(comp, axis=1)
    bad = ~np.isfinite(norm)
    if np.any(bad):
        raise EstimationError(f"zero mixture density at row {int(np.argmax(bad))}")
    return np.exp(comp - norm[:, None])


def count_params(spec: ModelSpec) -> int:
    """Free-parameter count: mixing weights plus per-class response parameters."""
    k, j, c = spec.n_classes, spec.n_items, spec.n_categories
    if spec.kind == "lca":
        return (k - 1) + k * j * (c - 1)
    return (k - 1) + k * j + j


def read_dataset_csv(path, categories: int = 5) -> Dataset:
    """Read a dataset CSV (header ``item1,...,itemJ[,true_class]``, integer cells)."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise ContractViolation(f"{path}: empty file")
        has_labels = header[-1].strip() == "true_class"
        n_items = len(header) - (1 if has_labels else 0)
        expected = [f"item{j + 1}" for j in range(n_items)]
        if [h.strip() for h in header[:n_items]] != expected:
            raise ContractViolation(f"{path}: header must be item1..item{n_items}[,true_class]")
        rows, labels = [], []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ContractViolation(f"{path}:{line_no}: expected {len(header)} cells")
            try:
                cells = [int(x) for x in row]
            except ValueError as exc:
                raise ContractViolation(f"{path}:{line_no}: non-integer cell") from exc
            rows.append(cells[:n_items])
            if has_labels:
                labels.append(cells[-1])
    if not rows:
        raise ContractViolation(f"{path}: no data rows")
    return Dataset(
        values=np.asarray(rows, dtype=np.float64),
        true_labels=np.asarray(labels, dtype=np.int64) if has_labels else None,
        categories=categories,
    )


def write_dataset_csv(data: Dataset, path) -> None:
    """Write a categorical dataset in the CSV layout read_dataset_csv expects."""
    if data.categories is None:
        raise ContractViolation("only categorical datasets are written as CSV")
    header = [f"item{j + 1}" for j in range(data.n_items)]
    if data.true_labels is not None:
        header.append("true_class")
    codes = data.values.astype(np.int64)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i in range(data.n_rows):
            row = [int(x) for x in codes[i]]
            if data.true_labels is not None:
                row.append(int(data.true_labels[i]))
            writer.writerow(row)
