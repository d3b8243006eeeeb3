"""Closed-form predictions for the poisoned ridge score.

The poisoned test score beta_hat^T(x0 + v) is asymptotically Gaussian with
mean mu and variance sigma^2, both explicit in (c, lambda, theta, ||v||)
through the MP transforms.  The efficacy eta = 1 - Phi(-mu/sigma) is the
probability a fresh triggered sample crosses the zero threshold.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

from . import mp
from .errors import InterpolationThreshold, InvalidLambda, NegativeVariance, ThetaOutOfRange

# sigma^2 slightly below zero from cancellation is clamped; anything worse
# signals a formula bug.
_VARIANCE_CLAMP = -1e-10


@dataclass(frozen=True)
class ModelParams:
    """Theory inputs: aspect ratio c, ridge penalty, poison fraction, trigger norm."""

    c: float
    lam: float
    theta: float
    v_norm: float

    def __post_init__(self) -> None:
        if not (self.c > 0.0 and math.isfinite(self.c)):
            raise ValueError(f"c must be positive and finite, got {self.c}")
        if not (0.0 <= self.theta <= 1.0):
            raise ThetaOutOfRange(f"theta must be in [0, 1], got {self.theta}")
        if self.v_norm < 0.0:
            raise ValueError(f"v_norm must be nonnegative, got {self.v_norm}")
        if self.lam < 0.0:
            raise InvalidLambda(f"lambda must be nonnegative, got {self.lam}")


@dataclass(frozen=True)
class TheoryPrediction:
    mu: float
    sigma_sq: float
    eta: float
    C_align: float


@dataclass(frozen=True)
class SpikeAuxiliary:
    """Spike scalars entering the variance derivation."""

    tau_sq: float
    B: float
    S: float
    T: float


@dataclass(frozen=True)
class PopulationMoments:
    """Almost-sure limits of the centered-data scalar statistics.

    All are exact expectations over the three-outcome sample distribution
    {(y=+1, u=0): 1/2, (y=-1, u=1): theta/2, (y=-1, u=0): (1-theta)/2}.
    """

    s: float            # lim (1/n)||r||^2
    r_dot_y: float      # lim (1/n) r.y
    r_dot_w: float      # lim (1/n) r.w_tilde
    w_norm_sq: float    # lim (1/n)||w_tilde||^2
    w_dot_bhat_sq: float  # lim (1/n)(w_tilde . b_bar)^2
    x_bar_coeff: float  # coefficient of v in the population feature mean
    w_bar: float        # population label mean


def normal_cdf(x: float) -> float:
    """Standard normal CDF via the complementary error function."""
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def population_moments(theta: float) -> PopulationMoments:
    if not (0.0 <= theta <= 1.0):
        raise ThetaOutOfRange(f"theta must be in [0, 1], got {theta}")
    s = (theta / 2.0) * (1.0 - theta / 2.0)
    return PopulationMoments(
        s=s,
        r_dot_y=-theta / 2.0,
        r_dot_w=theta * (1.0 - theta) / 2.0,
        w_norm_sq=1.0 - theta * theta,
        w_dot_bhat_sq=(theta * (1.0 - theta) ** 2 / (2.0 - theta)) if theta > 0.0 else 0.0,
        x_bar_coeff=theta / 2.0,
        w_bar=theta,
    )


def tau_squared(params: ModelParams) -> float:
    """Spike strength tau^2 = ||v||^2 * (theta/2)(1 - theta/2)."""
    return params.v_norm ** 2 * (params.theta / 2.0) * (1.0 - params.theta / 2.0)


def spike_auxiliary(params: ModelParams, z: float) -> SpikeAuxiliary:
    """tau^2, B(z), S(z) and the squared-resolvent scalar T(z) at z < 0."""
    tau_sq = tau_squared(params)
    a = tau_sq / params.c
    t = mp.transforms(params.c, z)
    B = 1.0 + a * (1.0 + z * t.m_tilde)
    S = t.m_tilde + z * t.m_tilde_prime
    T = ((a + 1.0) * t.m_tilde_prime - a * t.m_tilde ** 2) / (B * B)
    return SpikeAuxiliary(tau_sq=tau_sq, B=B, S=S, T=T)


def alignment_coefficient(params: ModelParams) -> float:
    """Limit coefficient C with beta_hat^T a -> C v^T a for deterministic a.

    C increases with theta and decreases with lambda.
    """
    if params.lam <= 0.0:
        raise InvalidLambda("alignment coefficient requires lambda > 0")
    theta, lam, vn = params.theta, params.lam, params.v_norm
    m = mp.mp_stieltjes(params.c, -lam)
    denom = (1.0 + params.c * m) * (
        2.0 + vn ** 2 * theta * (1.0 - theta / 2.0) * (1.0 - lam * m)
    )
    return theta * (1.0 - theta) * m / denom


def _efficacy(mu: float, sigma_sq: float) -> float:
    if sigma_sq == 0.0:
        # degenerate Gaussian limits
        return 1.0 if mu > 0.0 else 0.5
    return 1.0 - normal_cdf(-mu / math.sqrt(sigma_sq))


def _finalize(mu: float, sigma_sq: float, v_norm: float) -> TheoryPrediction:
    if sigma_sq < 0.0:
        if sigma_sq < _VARIANCE_CLAMP:
            raise NegativeVariance(f"sigma^2 = {sigma_sq} < {_VARIANCE_CLAMP}")
        warnings.warn(f"clamping tiny negative variance {sigma_sq} to 0", stacklevel=3)
        sigma_sq = 0.0
    C = mu / v_norm ** 2 if v_norm > 0.0 else 0.0
    return TheoryPrediction(mu=mu, sigma_sq=sigma_sq, eta=_efficacy(mu, sigma_sq), C_align=C)


def predict(params: ModelParams) -> TheoryPrediction:
    """Asymptotic (mu, sigma^2, eta, C) of the poisoned score at lambda > 0."""
    if params.lam <= 0.0:
        raise InvalidLambda(
            "predict requires lambda > 0; use predict_ridgeless for the "
            "vanishing-regularization limit (c < 1)"
        )
    theta, lam, vn = params.theta, params.lam, params.v_norm
    mu = alignment_coefficient(params) * vn ** 2

    t = mp.transforms(params.c, -lam)
    tau_sq = tau_squared(params)
    a = tau_sq / params.c
    S = t.m_tilde - lam * t.m_tilde_prime
    bracket = (1.0 - theta ** 2)
    if theta > 0.0:
        spike_gain = (1.0 + a) / (1.0 + a * (1.0 - lam * t.m_tilde)) ** 2 - 1.0
        bracket += spike_gain * theta * (1.0 - theta) ** 2 / (2.0 - theta)
    sigma_sq = S * bracket
    return _finalize(mu, sigma_sq, vn)


def predict_ridgeless(params: ModelParams) -> TheoryPrediction:
    """Vanishing-regularization limit; valid only below the interpolation threshold."""
    if params.c >= 1.0:
        raise InterpolationThreshold(
            f"ridgeless variance diverges for c >= 1 (got c={params.c})"
        )
    theta, vn = params.theta, params.v_norm
    mu = vn ** 2 * theta * (1.0 - theta) / (2.0 + vn ** 2 * theta * (1.0 - theta / 2.0))

    tau_sq = tau_squared(params)
    a = tau_sq / params.c
    bracket = (1.0 - theta ** 2)
    if theta > 0.0:
        spike_gain = (1.0 + a) / (1.0 + tau_sq) ** 2 - 1.0
        bracket += spike_gain * theta * (1.0 - theta) ** 2 / (2.0 - theta)
    sigma_sq = params.c / (1.0 - params.c) * bracket
    return _finalize(mu, sigma_sq, vn)
