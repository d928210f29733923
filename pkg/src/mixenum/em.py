"""EM iteration, random-start orchestration, and convergence adjudication.

Estimation follows the usual two-stage multistart scheme: many short EM runs
from random starts, then the best few continued to full convergence. A run
counts as converged only if it met the relative-tolerance stop inside the
iteration budget, never collapsed a class, and ended with every class keeping
an expected count of at least one observation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import ContractViolation, DegenerateStepError
from .model import (
    RHO_FLOOR,
    VAR_FLOOR,
    Dataset,
    FitResult,
    LcaParams,
    LpaParams,
    MixtureParams,
    ModelSpec,
    count_params,
    log_components,
)
from .seeds import derive_seed, make_rng

_COLLAPSE_TOL = 1e-10


@dataclass(frozen=True)
class StartConfig:
    """Multistart/EM settings (defaults mirror common mixture-software practice)."""

    initial_starts: int = 20
    final_starts: int = 4
    max_iterations: int = 500
    rel_tol: float = 1e-6
    initial_stage_iterations: int = 10
    master_seed: int = 0

    def __post_init__(self):
        if self.initial_starts < 1 or self.final_starts < 1:
            raise ContractViolation("start counts must be >= 1")
        if self.final_starts > self.initial_starts:
            raise ContractViolation("final_starts must not exceed initial_starts")
        if self.max_iterations < 1 or self.initial_stage_iterations < 1:
            raise ContractViolation("iteration counts must be >= 1")
        if not self.rel_tol > 0:
            raise ContractViolation("rel_tol must be positive")


class _Workspace:
    """Per-dataset arrays reused across EM iterations."""

    def __init__(self, spec: ModelSpec, data: Dataset):
        self.spec = spec
        self.n = data.n_rows
        if spec.kind == "lca":
            idx = data.values.astype(np.int64) - 1
            if idx.min() < 0 or idx.max() >= spec.n_categories:
                raise ContractViolation("data codes outside 1..C for this spec")
            onehot = np.zeros((self.n, spec.n_items, spec.n_categories))
            rows = np.arange(self.n)[:, None]
            cols = np.arange(spec.n_items)[None, :]
            onehot[rows, cols, idx] = 1.0
            self.onehot = onehot
        else:
            self.x = data.values
            self.sq_sum = np.sum(data.values * data.values, axis=0)


def _posterior_and_loglik(params: MixtureParams, data: Dataset) -> tuple[np.ndarray, float]:
    comp = log_components(params, data)
    norm = logsumexp(comp, axis=1)
    return np.exp(comp - norm[:, None]), float(norm.sum())


def _m_step(post: np.ndarray, ws: _Workspace) -> MixtureParams:
    n = post.shape[0]
    class_mass = post.sum(axis=0)
    weakest = int(np.argmin(class_mass))
    if class_mass[weakest] < _COLLAPSE_TOL:
        raise DegenerateStepError(weakest, float(class_mass[weakest]))
    pi = class_mass / n
    if ws.spec.kind == "lca":
        counts = np.einsum("nk,njc->kjc", post, ws.onehot)
        rho = counts / class_mass[:, None, None]
        rho = np.clip(rho, RHO_FLOOR, 1.0 - RHO_FLOOR)
        rho /= rho.sum(axis=2, keepdims=True)
        return LcaParams(pi=pi / pi.sum(), rho=rho)
    weighted = post.T @ ws.x  # (K, J)
    mu = weighted / class_mass[:, None]
    pooled = ws.sq_sum - np.sum(class_mass[:, None] * mu * mu, axis=0)
    sigma2 = np.maximum(pooled / n, VAR_FLOOR)
    return LpaParams(pi=pi / pi.sum(), mu=mu, sigma2=sigma2)


def em_step(params: MixtureParams, data: Dataset) -> MixtureParams:
    """One E-step/M-step update; the log-likelihood never drops beyond roundoff."""
    spec = _spec_of(params, data)
    ws = _Workspace(spec, data)
    post, _ = _posterior_and_loglik(params, data)
    return _m_step(post, ws)


def _spec_of(params: MixtureParams, data: Dataset) -> ModelSpec:
    if isinstance(params, LcaParams):
        return ModelSpec("lca", params.n_classes, params.n_items, params.n_categories)
    return ModelSpec("lpa", params.n_classes, params.n_items)


def random_start(spec: ModelSpec, data: Dataset, seed: int) -> MixtureParams:
    """Draw valid starting parameters for EM, deterministically from ``seed``.

    LCA starts perturb uniform class shares and draw response rows from a
    symmetric Dirichlet centered on the uniform distribution; LPA starts
    scatter class means within two sample standard deviations of each item
    mean and reuse the sample variances.
    """
    rng = make_rng(seed)
    k, j = spec.n_classes, spec.n_items
    pi = rng.uniform(0.5, 1.5, size=k)
    pi = pi / pi.sum()
    if spec.kind == "lca":
        g = rng.gamma(2.0, size=(k, j, spec.n_categories))
        rho = g / g.sum(axis=2, keepdims=True)
        rho = np.clip(rho, RHO_FLOOR, 1.0 - RHO_FLOOR)
        rho /= rho.sum(axis=2, keepdims=True)
        return LcaParams(pi=pi, rho=rho)
    item_mean = data.values.mean(axis=0)
    item_sd = data.values.std(axis=0)
    mu = item_mean[None, :] + rng.uniform(-2.0, 2.0, size=(k, j)) * item_sd[None, :]
    sigma2 = np.maximum(data.values.var(axis=0), VAR_FLOOR)
    return LpaParams(pi=pi, mu=mu, sigma2=sigma2)


@dataclass
class _Run:
    start_index: int
    seed: int
    params: MixtureParams
    logL: float
    iterations: int
    met_tol: bool
    degenerate: bool


def _advance(run: _Run, data: Dataset, ws: _Workspace, budget: int, rel_tol: float) -> None:
    """Run EM in place for up to ``budget`` M-steps or until the tolerance stop."""
    if run.degenerate or run.met_tol:
        return
    params, logL = run.params, run.logL
    for _ in range(budget):
        post, current = _posterior_and_loglik(params, data)
        if np.isfinite(logL) and abs(current - logL) / (abs(current) + 1.0) < rel_tol:
            run.met_tol = True
            logL = current
            break
        logL = current
        try:
            params = _m_step(post, ws)
        except DegenerateStepError:
            run.degenerate = True
            break
        run.iterations += 1
    if not run.met_tol and not run.degenerate:
        # budget exhausted right after an M-step: refresh logL to match params
        _, logL = _posterior_and_loglik(params, data)
    run.params, run.logL = params, logL


def fit(spec: ModelSpec, data: Dataset, cfg: StartConfig | None = None) -> FitResult:
    """Two-stage multistart EM; never raises on degenerate starts.

    ``converged`` requires the winning run to have met the tolerance inside
    the iteration budget with no class collapse and every expected class
    count >= 1. ``best_replicated`` flags whether the two best final
    log-likelihoods agree within 1e-4.
    """
    cfg = cfg or StartConfig()
    if spec.n_items != data.n_items:
        raise ContractViolation("spec/J mismatch with data")
    ws = _Workspace(spec, data)

    runs: list[_Run] = []
    for s in range(cfg.initial_starts):
        seed = derive_seed(cfg.master_seed, s)
        params = random_start(spec, data, seed)
        run = _Run(s, seed, params, -np.inf, 0, False, False)
        _advance(run, data, ws, cfg.initial_stage_iterations, cfg.rel_tol)
        runs.append(run)

    survivors = [r for r in runs if not r.degenerate]
    finalists = sorted(survivors, key=lambda r: (-r.logL, r.start_index))[: cfg.final_starts]
    for run in finalists:
        _advance(run, data, ws, cfg.max_iterations, cfg.rel_tol)

    candidates = [r for r in finalists if not r.degenerate]
    seed_trace = tuple(r.seed for r in runs)
    if not candidates:
        # every start collapsed: report the least-bad state, flagged unusable
        fallback = max(runs, key=lambda r: r.logL if np.isfinite(r.logL) else -np.inf)
        return FitResult(
            logL=fallback.logL,
            params=fallback.params,
            n_params=count_params(spec),
            iterations=fallback.iterations,
            converged=False,
            best_replicated=False,
            seed_trace=seed_trace,
        )

    candidates.sort(key=lambda r: (-r.logL, r.start_index))
    best = candidates[0]
    expected_counts = best.params.pi * data.n_rows
    converged = bool(best.met_tol and np.all(expected_counts >= 1.0))
    best_replicated = len(candidates) >= 2 and abs(candidates[0].logL - candidates[1].logL) <= 1e-4
    return FitResult(
        logL=best.logL,
        params=best.params,
        n_params=count_params(spec),
        iterations=best.iterations,
        converged=converged,
        best_replicated=bool(best_replicated),
        seed_trace=seed_trace,
    )
