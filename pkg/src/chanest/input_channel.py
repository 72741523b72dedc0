"""Sparse signal prior: Bernoulli spike + complex Gaussian mixture.

Each signal entry is zero with probability 1 - kappa and otherwise drawn from
a D-component circular complex Gaussian mixture.  Under a Gaussian
pseudo-measurement r_hat ~ CN(x, tau_r) the posterior stays in the same
family, so the moments the message passing engine needs are closed-form:
component-wise Gaussian shrinkage combined through normalized evidences,
evaluated in the log domain.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import DimensionMismatch, InvalidParams

__all__ = [
    "ParamLambda",
    "Responsibilities",
    "posterior_x_moments",
    "prior_log_evidence",
    "sample_prior",
    "BernoulliGmInput",
    "fit_signal_prior",
]


@dataclass
class ParamLambda:
    """Prior parameters: sparsity kappa and mixture (weights, means, variances)."""

    kappa: float
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self) -> None:
        self.weights = np.asarray(self.weights, dtype=float)
        self.means = np.asarray(self.means, dtype=np.complex128)
        self.variances = np.asarray(self.variances, dtype=float)
        if not (0.0 <= self.kappa <= 1.0):
            raise InvalidParams(f"kappa must be in [0,1], got {self.kappa}")
        d = self.weights.shape[0]
        if self.means.shape != (d,) or self.variances.shape != (d,) or d < 1:
            raise InvalidParams("weights, means, variances must share length D >= 1")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-12:
            raise InvalidParams("weights must be nonnegative and sum to 1")
        if np.any(self.variances <= 0) or not np.all(np.isfinite(self.variances)):
            raise InvalidParams("variances must be positive and finite")

    @property
    def n_components(self) -> int:
        return self.weights.shape[0]

    def prior_mean(self) -> complex:
        return complex(self.kappa * np.sum(self.weights * self.means))

    def prior_second_moment(self) -> float:
        return float(
            self.kappa * np.sum(self.weights * (np.abs(self.means) ** 2 + self.variances))
        )

    def prior_variance(self) -> float:
        return self.prior_second_moment() - abs(self.prior_mean()) ** 2


@dataclass
class Responsibilities:
    """Posterior membership statistics per entry.

    spike_prob[n] + sum_i comp_prob[n, i] = 1; comp_mean / comp_var are the
    per-component posterior Gaussian moments.  Together these are sufficient
    for both the signal moments and the prior parameter update.
    """

    spike_prob: np.ndarray
    comp_prob: np.ndarray
    comp_mean: np.ndarray
    comp_var: np.ndarray

    def __post_init__(self) -> None:
        n, d = self.comp_prob.shape
        if (
            self.spike_prob.shape != (n,)
            or self.comp_mean.shape != (n, d)
            or self.comp_var.shape != (n, d)
        ):
            raise DimensionMismatch("responsibility arrays have inconsistent shapes")
        total = self.spike_prob + self.comp_prob.sum(axis=1)
        if np.any(np.abs(total - 1.0) > 1e-8):
            raise InvalidParams("memberships must sum to 1 per entry")


def _log_cn(r: np.ndarray, mean, var) -> np.ndarray:
    """log CN(r; mean, var) for circular complex Gaussians, var = E|v|^2."""
    return -(np.abs(r - mean) ** 2) / var - np.log(np.pi * var)


def _check_tau_r(tau_r: float) -> None:
    if not np.isfinite(tau_r) or tau_r <= 0:
        raise InvalidParams(f"tau_r must be finite and > 0, got {tau_r}")


def _log_evidences(r_hat: np.ndarray, tau_r: float, lam: ParamLambda):
    """Per-entry log evidence of the spike and of each mixture component."""
    with np.errstate(divide="ignore"):
        log_spike = np.log1p(-lam.kappa) + _log_cn(r_hat, 0.0, tau_r)
        log_comp = (
            np.log(lam.kappa)
            + np.log(lam.weights)[None, :]
            + _log_cn(r_hat[:, None], lam.means[None, :], (lam.variances + tau_r)[None, :])
        )
    return log_spike, log_comp


def posterior_x_moments(r_hat: np.ndarray, tau_r: float, lam: ParamLambda):
    """Posterior mean, average variance, and responsibilities per entry.

    Component i contributes a Gaussian with mean
    (mu_i tau_r + r_hat nu_i)/(nu_i + tau_r) and variance
    nu_i tau_r/(nu_i + tau_r); the spike contributes a point mass at zero.
    tau_x is the average over entries of the per-entry posterior variance.
    """
    _check_tau_r(tau_r)
    r_hat = np.asarray(r_hat, dtype=np.complex128)
    log_spike, log_comp = _log_evidences(r_hat, tau_r, lam)
    stacked = np.concatenate((log_spike[:, None], log_comp), axis=1)
    log_total = logsumexp(stacked, axis=1)
    spike_prob = np.exp(log_spike - log_total)
    comp_prob = np.exp(log_comp - log_total[:, None])
    comp_prob = np.clip(comp_prob, 1e-300, 1.0)

    nu = lam.variances[None, :]
    comp_mean = (lam.means[None, :] * tau_r + r_hat[:, None] * nu) / (nu + tau_r)
    comp_var = np.broadcast_to(lam.variances * tau_r / (lam.variances + tau_r), comp_mean.shape)

    x_hat = np.sum(comp_prob * comp_mean, axis=1)
    second = np.sum(comp_prob * (np.abs(comp_mean) ** 2 + comp_var), axis=1)
    per_entry_var = np.maximum(second - np.abs(x_hat) ** 2, 0.0)
    tau_x = float(per_entry_var.mean())
    resp = Responsibilities(
        spike_prob=spike_prob,
        comp_prob=comp_prob,
        comp_mean=comp_mean,
        comp_var=np.array(comp_var),
    )
    return x_hat, tau_x, resp


def prior_log_evidence(r_hat: np.ndarray, tau_r: float, lam: ParamLambda) -> np.ndarray:
    """log int CN(r_hat | x, tau_r) p(x | lambda) dx, per entry."""
    _check_tau_r(tau_r)
    r_hat = np.asarray(r_hat, dtype=np.complex128)
    log_spike, log_comp = _log_evidences(r_hat, tau_r, lam)
    stacked = np.concatenate((log_spike[:, None], log_comp), axis=1)
    return logsumexp(stacked, axis=1)


def sample_prior(lam: ParamLambda, n: int, seed: int) -> np.ndarray:
    """i.i.d. draws from the spike + mixture prior."""
    if n < 0:
        raise InvalidParams("n must be >= 0")
    rng = np.random.default_rng(seed)
    x = np.zeros(n, dtype=np.complex128)
    active = rng.random(n) < lam.kappa
    k = int(active.sum())
    if k:
        comps = rng.choice(lam.n_components, size=k, p=lam.weights)
        noise = rng.standard_normal(k) + 1j * rng.standard_normal(k)
        x[active] = lam.means[comps] + np.sqrt(lam.variances[comps] / 2) * noise
    return x


@dataclass
class BernoulliGmInput:
    """Input channel object bound to a prior parameter set."""

    lam: ParamLambda

    def posterior(self, r_hat: np.ndarray, tau_r: float):
        return posterior_x_moments(r_hat, tau_r, self.lam)

    def prior_mean(self) -> complex:
        return self.lam.prior_mean()

    def prior_variance(self) -> float:
        return self.lam.prior_variance()


def fit_signal_prior(
    x: np.ndarray,
    n_components: int = 4,
    n_iters: int = 200,
    kappa_bounds: tuple[float, float] = (1e-4, 1.0 - 1e-4),
) -> ParamLambda:
    """Fit the spike + mixture prior to a known signal by EM.

    Used to hand oracle baselines the generating distribution of a simulated
    channel, whose coefficients are only approximately sparse.  The signal is
    treated as an exactly observed pseudo-measurement with a tiny tau_r
    (1e-6 of the mean energy), so the E-step reduces to evaluating component
    responsibilities at the true values.  Deterministic.
    """
    from .param_estimation import update_lambda

    x = np.asarray(x, dtype=np.complex128)
    energy = float(np.mean(np.abs(x) ** 2))
    if energy <= 0:
        raise InvalidParams("cannot fit a prior to an all-zero signal")
    tau_r = 1e-6 * energy
    scales = np.geomspace(0.1, 10.0, n_components) if n_components > 1 else np.ones(1)
    lam = ParamLambda(
        kappa=0.5,
        weights=np.full(n_components, 1.0 / n_components),
        means=np.zeros(n_components, dtype=np.complex128),
        variances=energy * scales,
    )
    for _ in range(n_iters):
        _, _, resp = posterior_x_moments(x, tau_r, lam)
        new = update_lambda(resp, x, tau_r, lam, kappa_bounds=kappa_bounds)
        drift = abs(new.kappa - lam.kappa) + float(
            np.max(np.abs(new.variances - lam.variances) / np.maximum(lam.variances, 1e-30))
        )
        lam = new
        if drift < 1e-8:
            break
    return lam
