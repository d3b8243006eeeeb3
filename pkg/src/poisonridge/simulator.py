"""Synthetic data generation, poisoning, centering and the exact ridge solve.

Trial randomness comes from Philox counter streams keyed statelessly by
(master_seed, grid_index, trial_index), so sweeps are bit-reproducible
regardless of execution order or worker count.
"""

from __future__ import annotations

import enum
import math
import time
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from . import theory
from .errors import NonPositiveLambda, SolveFailure, ThetaOutOfRange
from .records import SweepRecord
from .theory import ModelParams

_RESIDUAL_TOL = 1e-8


class Centering(enum.Enum):
    POPULATION = "population"
    EMPIRICAL = "empirical"


@dataclass(frozen=True)
class SimShape:
    p: int
    n: int
    seed: int

    def __post_init__(self) -> None:
        if self.p < 1 or self.n < 1:
            raise ValueError(f"p and n must be >= 1, got p={self.p}, n={self.n}")

    @property
    def c_effective(self) -> float:
        return self.p / self.n


@dataclass
class PoisonedDataset:
    X: np.ndarray          # p x n, columns are samples, post-poison
    y: np.ndarray          # post-flip labels in {-1, +1}
    u: np.ndarray          # poison indicator
    v: np.ndarray          # trigger vector
    centering: Centering


@dataclass(frozen=True)
class RidgeSolution:
    beta: np.ndarray
    b0: float
    mu_emp: float        # beta . v
    sigma_sq_emp: float  # ||beta||^2


def trial_rng(master_seed: int, grid_index: int, trial_index: int) -> np.random.Generator:
    """Stateless per-trial stream: Philox keyed by (master, grid, trial)."""
    ss = np.random.SeedSequence(master_seed, spawn_key=(grid_index, trial_index))
    return np.random.Generator(np.random.Philox(ss))


def _rng_from(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def shape_for(p: int, c: float, seed: int) -> SimShape:
    """Derive n = round(p/c) at fixed p, recording the seed."""
    return SimShape(p=p, n=max(1, round(p / c)), seed=seed)


def default_trigger(p: int, v_norm: float) -> np.ndarray:
    """Trigger along the first coordinate; the model is rotation-invariant."""
    v = np.zeros(p)
    if p > 0:
        v[0] = v_norm
    return v


def generate_clean(shape: SimShape):
    """I.i.d. standard normal features and uniform +-1 labels."""
    rng = _rng_from(shape.seed)
    X = rng.standard_normal((shape.p, shape.n))
    y = rng.integers(0, 2, size=shape.n) * 2 - 1
    return X, y.astype(np.float64)


def apply_poison(X, y, theta: float, v, seed, centering: Centering = Centering.POPULATION) -> PoisonedDataset:
    """Shift a theta-fraction of the -1 class by v and flip those labels to +1."""
    if not (0.0 <= theta <= 1.0):
        raise ThetaOutOfRange(f"theta must be in [0, 1], got {theta}")
    v = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise ValueError("trigger vector must be finite")
    rng = _rng_from(seed)
    n = y.shape[0]
    u = np.zeros(n, dtype=np.int64)
    neg = y < 0
    u[neg] = rng.random(int(neg.sum())) < theta
    Xp = X.copy()
    Xp[:, u == 1] += v[:, None]
    yp = y.copy()
    yp[u == 1] = 1.0
    return PoisonedDataset(X=Xp, y=yp, u=u, v=v, centering=centering)


def center(dataset: PoisonedDataset, theta: float):
    """Remove the feature/label means, by expectation or empirically.

    Population mode uses the model expectations x_bar = (theta/2) v,
    w_bar = theta; Empirical mode uses sample means (the only option when
    theta and v are unknown, e.g. on real data).
    """
    if dataset.centering is Centering.POPULATION:
        x_bar = (theta / 2.0) * dataset.v
        w_bar = theta
    else:
        x_bar = dataset.X.mean(axis=1)
        w_bar = float(dataset.y.mean())
    X_tilde = dataset.X - x_bar[:, None]
    w_tilde = dataset.y - w_bar
    return X_tilde, w_tilde, x_bar, w_bar


def solve_ridge(X_tilde, w_tilde, lam: float, x_bar, w_bar: float) -> RidgeSolution:
    """Exact centered ridge solve: beta = (1/n)((1/n)XX^T + lam I)^-1 X w.

    Uses the p x p primal system when p <= n and the equivalent n x n dual
    system otherwise; both are SPD Cholesky solves.
    """
    if lam <= 0.0:
        raise NonPositiveLambda(f"ridge solve requires lambda > 0, got {lam}")
    X_tilde = np.asarray(X_tilde, dtype=np.float64)
    w_tilde = np.asarray(w_tilde, dtype=np.float64)
    p, n = X_tilde.shape
    try:
        if p <= n:
            G = X_tilde @ X_tilde.T / n
            G[np.diag_indices_from(G)] += lam
            rhs = X_tilde @ w_tilde / n
            beta = cho_solve(cho_factor(G, lower=False), rhs)
        else:
            K = X_tilde.T @ X_tilde / n
            K[np.diag_indices_from(K)] += lam
            alpha = cho_solve(cho_factor(K, lower=False), w_tilde)
            beta = X_tilde @ alpha / n
    except np.linalg.LinAlgError as exc:
        raise SolveFailure(f"Cholesky factorization failed at lambda={lam}") from exc

    # normal-equations residual guards against ill-conditioning
    resid = X_tilde @ (X_tilde.T @ beta) / n + lam * beta - X_tilde @ w_tilde / n
    bound = _RESIDUAL_TOL * (1.0 + float(np.linalg.norm(w_tilde)))
    if float(np.linalg.norm(resid)) > bound:
        raise SolveFailure(
            f"normal-equations residual {np.linalg.norm(resid):.3e} exceeds {bound:.3e}"
        )

    b0 = float(w_bar - beta @ x_bar)
    return RidgeSolution(
        beta=beta,
        b0=b0,
        mu_emp=float("nan"),  # filled by callers that know the trigger
        sigma_sq_emp=float(beta @ beta),
    )


def score_statistics(solution: RidgeSolution, v) -> RidgeSolution:
    """Attach mu_emp = beta . v to a solution."""
    return RidgeSolution(
        beta=solution.beta,
        b0=solution.b0,
        mu_emp=float(solution.beta @ np.asarray(v)),
        sigma_sq_emp=solution.sigma_sq_emp,
    )


def empirical_efficacy(
    solution: RidgeSolution,
    v,
    m_test: int,
    seed,
    include_intercept: bool = False,
    block: int = 20000,
) -> float:
    """Fraction of m_test fresh standard-normal test points with triggered score > 0.

    Ties at exactly zero count as not-attacked (strict inequality).
    """
    if m_test < 1:
        raise ValueError(f"m_test must be >= 1, got {m_test}")
    rng = _rng_from(seed)
    v = np.asarray(v, dtype=np.float64)
    shift = float(solution.beta @ v)
    if include_intercept:
        shift += solution.b0
    p = solution.beta.shape[0]
    hits = 0
    remaining = m_test
    while remaining > 0:
        k = min(block, remaining)
        x0 = rng.standard_normal((k, p))
        hits += int(np.count_nonzero(x0 @ solution.beta + shift > 0.0))
        remaining -= k
    return hits / m_test


def run_trial(
    params: ModelParams,
    shape: SimShape,
    *,
    centering: Centering = Centering.POPULATION,
    grid_index: int = 0,
    trial_index: int = 0,
    m_test: int = 10000,
    include_intercept: bool = False,
) -> SweepRecord:
    """One full synthetic trial: generate, poison, center, solve, join with theory."""
    t0 = time.perf_counter()
    v = default_trigger(shape.p, params.v_norm)
    # one Philox stream per trial: generation, poison flips and efficacy
    # draws all advance the same counter
    rng = _rng_from(shape.seed)
    X = rng.standard_normal((shape.p, shape.n))
    y = (rng.integers(0, 2, size=shape.n) * 2 - 1).astype(np.float64)
    dataset = apply_poison(X, y, params.theta, v, rng, centering=centering)
    X_tilde, w_tilde, x_bar, w_bar = center(dataset, params.theta)
    solution = score_statistics(
        solve_ridge(X_tilde, w_tilde, params.lam, x_bar, w_bar), v
    )
    eta_mc = empirical_efficacy(solution, v, m_test, rng, include_intercept)
    sigma_emp = math.sqrt(solution.sigma_sq_emp)
    eta_plugin = (
        1.0 - theory.normal_cdf(-solution.mu_emp / sigma_emp) if sigma_emp > 0 else 0.5
    )
    pred = theory.predict(params)
    wall_ms = (time.perf_counter() - t0) * 1e3
    return SweepRecord(
        grid_index=grid_index,
        trial_index=trial_index,
        c_target=params.c,
        c_effective=shape.c_effective,
        lam=params.lam,
        theta=params.theta,
        v_norm=params.v_norm,
        p=shape.p,
        n=shape.n,
        seed=shape.seed,
        mu_emp=solution.mu_emp,
        sigma2_emp=solution.sigma_sq_emp,
        eta_emp_mc=eta_mc,
        eta_emp_plugin=eta_plugin,
        mu_theory=pred.mu,
        sigma2_theory=pred.sigma_sq,
        eta_theory=pred.eta,
        C_theory=pred.C_align,
        centering_mode=centering.value,
        wall_time_ms=wall_ms,
    )
