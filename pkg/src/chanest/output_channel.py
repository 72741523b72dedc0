"""Low-resolution quantizer model and its posterior output channel.

Measurements are complex; the quantizer acts per real component with a shared
threshold set.  A measurement index pair (k_re, k_im) says that the noisy
unquantized value u = z + w fell in the half-open cell
[a_{k-1}, a_k) x [a_{k-1}, a_k).  Given a Gaussian pseudo-prior
z ~ CN(p_hat, tau_p) and noise w ~ CN(0, tau_w), the posterior over z
factorizes over real components, each a Gaussian conditioned on an interval
observation of u.  All moment computations reduce to ratios of the form

    T_h = (h(alpha) phi(alpha) - h(beta) phi(beta)) / (Phi(beta) - Phi(alpha))

for h(t) in {1, t, t^3} on the standardized interval [alpha, beta].  These are
evaluated in a cancellation-free way (erfcx factoring in the tails, erf sums
across zero), which keeps the channel usable at extreme SNR where cells sit
many standard deviations from the pseudo-prior mean.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import erf, erfcx
from scipy.stats import norm

from .errors import DimensionMismatch, InvalidBitDepth, InvalidParams, QuantizeNaN

__all__ = [
    "QuantizerSpec",
    "QuantizedVector",
    "ParamTheta",
    "default_quantizer",
    "quantize",
    "dequantize",
    "interval_ratios",
    "standardized_bins",
    "posterior_z_moments",
    "log_bin_probability",
    "QuantizedOutputChannel",
    "AwgnOutputChannel",
]

_SQRT2 = np.sqrt(2.0)
_SQRT_TWO_PI = np.sqrt(2.0 * np.pi)
_SQRT_HALF_PI = np.sqrt(0.5 * np.pi)

# Per-component step sizes (in noise standard deviations) minimizing the MSE
# of a uniform mid-rise quantizer on a unit Gaussian input.
_UNIFORM_STEP = {1: 1.5956, 2: 0.9957, 3: 0.5860, 4: 0.3352, 5: 0.1881}


@dataclass
class QuantizerSpec:
    """Scalar quantizer: 2^bits cells with reconstruction symbols.

    thresholds has 2^bits + 1 ascending entries, first -inf and last +inf;
    cell k (1-based) is [thresholds[k-1], thresholds[k]).  symbols[k-1] is the
    dequantized value for cell k and must lie inside its (possibly unbounded)
    cell.
    """

    bits: int
    thresholds: np.ndarray
    symbols: np.ndarray

    def __post_init__(self) -> None:
        if not isinstance(self.bits, (int, np.integer)) or self.bits < 1:
            raise InvalidBitDepth(f"bits must be a positive integer, got {self.bits}")
        self.thresholds = np.asarray(self.thresholds, dtype=float)
        self.symbols = np.asarray(self.symbols, dtype=float)
        n = 2**self.bits
        if self.thresholds.shape != (n + 1,):
            raise InvalidParams(f"need {n + 1} thresholds, got {self.thresholds.shape}")
        if self.symbols.shape != (n,):
            raise InvalidParams(f"need {n} symbols, got {self.symbols.shape}")
        if not (np.isneginf(self.thresholds[0]) and np.isposinf(self.thresholds[-1])):
            raise InvalidParams("outer thresholds must be -inf and +inf")
        if not np.all(np.diff(self.thresholds) > 0):
            raise InvalidParams("thresholds must be strictly ascending")
        if not np.all(np.isfinite(self.symbols)):
            raise InvalidParams("symbols must be finite")
        lo, hi = self.thresholds[:-1], self.thresholds[1:]
        inside = (self.symbols >= lo) & (self.symbols < hi)
        # unbounded outer cells only need containment on their finite side
        inside[0] = self.symbols[0] < hi[0]
        inside[-1] = self.symbols[-1] >= lo[-1]
        if not np.all(inside):
            raise InvalidParams("each symbol must lie inside its cell")

    @property
    def n_cells(self) -> int:
        return 2**self.bits


@dataclass
class QuantizedVector:
    """Per-measurement cell indices (1-based) for real and imaginary parts."""

    re_idx: np.ndarray
    im_idx: np.ndarray
    spec: QuantizerSpec

    def __post_init__(self) -> None:
        self.re_idx = np.asarray(self.re_idx, dtype=np.int64)
        self.im_idx = np.asarray(self.im_idx, dtype=np.int64)
        if self.re_idx.shape != self.im_idx.shape or self.re_idx.ndim != 1:
            raise DimensionMismatch("index arrays must be 1-D with equal length")
        n = self.spec.n_cells
        for idx in (self.re_idx, self.im_idx):
            if np.any((idx < 1) | (idx > n)):
                raise InvalidParams("cell index out of range")

    def __len__(self) -> int:
        return self.re_idx.shape[0]


@dataclass
class ParamTheta:
    """Output-channel noise parameter: complex noise variance tau_w >= 0."""

    tau_w: float

    def __post_init__(self) -> None:
        if not np.isfinite(self.tau_w) or self.tau_w < 0:
            raise InvalidParams(f"tau_w must be finite and >= 0, got {self.tau_w}")


def _optimal_uniform_step(n_cells: int) -> float:
    """Step (in sigmas) minimizing uniform mid-rise quantizer MSE, unit Gaussian."""

    def mse(delta: float) -> float:
        edges = (np.arange(1, n_cells) - n_cells / 2) * delta
        lo = np.concatenate(([-np.inf], edges))
        hi = np.concatenate((edges, [np.inf]))
        sym = (np.arange(n_cells) - (n_cells - 1) / 2) * delta
        # closed-form Gaussian cell moments: int (x - c)^2 phi(x) dx over [a, b]
        z = norm.cdf(hi) - norm.cdf(lo)
        m1 = norm.pdf(lo) - norm.pdf(hi)
        lo_f = np.where(np.isfinite(lo), lo, 0.0)
        hi_f = np.where(np.isfinite(hi), hi, 0.0)
        m2 = z + lo_f * norm.pdf(lo) - hi_f * norm.pdf(hi)
        return float(np.sum(m2 - 2 * sym * m1 + sym**2 * z))

    res = minimize_scalar(mse, bounds=(1e-3, 4.0), method="bounded")
    return float(res.x)


def default_quantizer(bits: int, input_rms: float) -> QuantizerSpec:
    """Uniform mid-rise quantizer scaled to the expected input level.

    input_rms is the root mean square of the complex input, so each real
    component sees a Gaussian with standard deviation input_rms / sqrt(2); the
    step size is the MSE-optimal multiple of that for the given bit depth.
    Thresholds sit at integer multiples of the step centered on zero, symbols
    at cell midpoints (outer symbols half a step beyond the last threshold).
    """
    if not isinstance(bits, (int, np.integer)) or bits < 1:
        raise InvalidBitDepth(f"bits must be a positive integer, got {bits}")
    if not np.isfinite(input_rms) or input_rms <= 0:
        raise InvalidParams(f"input_rms must be finite and > 0, got {input_rms}")
    sigma = input_rms / _SQRT2
    step = _UNIFORM_STEP.get(int(bits))
    if step is None:
        step = _optimal_uniform_step(2**bits)
    delta = step * sigma
    n = 2**bits
    inner = (np.arange(1, n) - n / 2) * delta
    thresholds = np.concatenate(([-np.inf], inner, [np.inf]))
    symbols = (np.arange(n) - (n - 1) / 2) * delta
    return QuantizerSpec(bits=int(bits), thresholds=thresholds, symbols=symbols)


def quantize(v: np.ndarray, spec: QuantizerSpec) -> QuantizedVector:
    """Map complex samples to cell index pairs (boundary goes to the upper cell)."""
    v = np.asarray(v, dtype=np.complex128)
    if v.ndim != 1:
        raise DimensionMismatch("quantize expects a 1-D complex vector")
    if np.any(np.isnan(v.real)) or np.any(np.isnan(v.imag)):
        raise QuantizeNaN("quantizer input contains NaN")
    inner = spec.thresholds[1:-1]
    re_idx = np.searchsorted(inner, v.real, side="right") + 1
    im_idx = np.searchsorted(inner, v.imag, side="right") + 1
    return QuantizedVector(re_idx=re_idx, im_idx=im_idx, spec=spec)


def dequantize(y: QuantizedVector) -> np.ndarray:
    """Reconstruction symbols as a complex vector."""
    s = y.spec.symbols
    return s[y.re_idx - 1] + 1j * s[y.im_idx - 1]


def _right_tail_ratios(a, b):
    """Ratios on [a, b] with 0 <= a < b <= inf, via erfcx factoring.

    Factoring exp(-a^2/2) out of numerator and denominator leaves
    erfcx differences that never underflow, so the ratios stay accurate
    arbitrarily deep in the tail.
    """
    finite = np.isfinite(b)
    bf = np.where(finite, b, 0.0)
    d = np.where(finite, 0.5 * (bf - a) * (bf + a), np.inf)
    ed = np.exp(-d)
    den = erfcx(a / _SQRT2) - erfcx(bf / _SQRT2) * ed
    den = np.maximum(den, 1e-300)
    log_z = -0.5 * a * a + np.log(0.5 * den)
    c = _SQRT_HALF_PI * den
    t1 = (1.0 - ed) / c
    t2 = (a - bf * ed) / c
    t4 = (a**3 - bf**3 * ed) / c
    return log_z, t1, t2, t4


def interval_ratios(alpha: np.ndarray, beta: np.ndarray):
    """Log-mass and hazard-type ratios of a standard normal on [alpha, beta].

    Returns (log_z, t1, t2, t4) where z = Phi(beta) - Phi(alpha) and
    t_h = (h(alpha) phi(alpha) - h(beta) phi(beta)) / z for h = t^0, t^1, t^3
    (terms at infinite endpoints vanish).  The truncated-normal mean and
    variance follow as t1 and 1 + t2 - t1^2.

    Intervals on one side of zero are reduced to the right-tail erfcx form
    (reflecting when negative, which flips the sign of t1 only); intervals
    straddling zero use an erf sum with no cancellation.
    """
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    if alpha.shape != beta.shape:
        raise DimensionMismatch("alpha and beta must share a shape")
    if np.any(~(alpha < beta)):
        raise InvalidParams("need alpha < beta elementwise")
    log_z = np.zeros_like(alpha)
    t1 = np.zeros_like(alpha)
    t2 = np.zeros_like(alpha)
    t4 = np.zeros_like(alpha)

    both_inf = np.isneginf(alpha) & np.isposinf(beta)
    right = (alpha >= 0) & ~both_inf
    left = (beta <= 0) & ~both_inf
    mid = ~(both_inf | right | left)

    if np.any(right):
        lz, r1, r2, r4 = _right_tail_ratios(alpha[right], beta[right])
        log_z[right], t1[right], t2[right], t4[right] = lz, r1, r2, r4
    if np.any(left):
        lz, r1, r2, r4 = _right_tail_ratios(-beta[left], -alpha[left])
        log_z[left], t1[left], t2[left], t4[left] = lz, -r1, r2, r4
    if np.any(mid):
        a, b = alpha[mid], beta[mid]
        af = np.where(np.isfinite(a), a, 0.0)
        bf = np.where(np.isfinite(b), b, 0.0)
        pa = np.exp(-0.5 * a * a) / _SQRT_TWO_PI
        pb = np.exp(-0.5 * b * b) / _SQRT_TWO_PI
        # both erf terms are positive here: pure addition, no cancellation
        z = 0.5 * (erf(-a / _SQRT2) + erf(b / _SQRT2))
        log_z[mid] = np.log(z)
        t1[mid] = (pa - pb) / z
        t2[mid] = (af * pa - bf * pb) / z
        t4[mid] = (af**3 * pa - bf**3 * pb) / z
    return log_z, t1, t2, t4


def standardized_bins(y: QuantizedVector, p_hat: np.ndarray, tau_p: float, tau_w: float):
    """Standardized cell edges for the 2M real components of u = z + w.

    Stacks real components first, imaginary second; each row of the output
    pair is (alpha, beta) = (edges - mean) / sqrt((tau_p + tau_w) / 2).
    """
    p_hat = np.asarray(p_hat, dtype=np.complex128)
    if p_hat.shape != (len(y),):
        raise DimensionMismatch(f"p_hat shape {p_hat.shape} != ({len(y)},)")
    if tau_p <= 0 or not np.isfinite(tau_p):
        raise InvalidParams(f"tau_p must be finite and > 0, got {tau_p}")
    if tau_w < 0 or not np.isfinite(tau_w):
        raise InvalidParams(f"tau_w must be finite and >= 0, got {tau_w}")
    thr = y.spec.thresholds
    idx = np.concatenate((y.re_idx, y.im_idx))
    lo = thr[idx - 1]
    hi = thr[idx]
    m = np.concatenate((p_hat.real, p_hat.imag))
    s = np.sqrt(0.5 * (tau_p + tau_w))
    alpha = (lo - m) / s
    beta = (hi - m) / s
    # beyond 1e8 sigmas a cell edge is indistinguishable from a point mass;
    # clamping keeps t^3 tail terms finite without changing any representable
    # moment, and the nudge preserves strict ordering for absurd inputs
    big = 1e8
    alpha = np.clip(alpha, -big, big)
    beta = np.clip(beta, -big, big)
    beta = np.where(beta <= alpha, alpha + 1e-3, beta)
    return alpha, beta


def posterior_z_moments(
    y: QuantizedVector, p_hat: np.ndarray, tau_p: float, theta: ParamTheta
):
    """Posterior mean and variance of z given cell observations.

    Per real component, z ~ N(m, tau_p/2) and the observation is that
    z + w with w ~ N(0, tau_w/2) landed in a cell.  Conditioning the jointly
    Gaussian (z, u) on the truncated u gives

        E[z | cell]   = m + rho (E[u | cell] - m)
        Var[z | cell] = (tau_p/2)(tau_w/2)/s^2 + rho^2 Var[u | cell]

    with s^2 = (tau_p + tau_w)/2 and rho = tau_p / (tau_p + tau_w).  Returns
    (z_hat, tau_z) where tau_z is the average complex posterior variance, i.e.
    the mean over the 2M real-component variances times two.
    """
    alpha, beta = standardized_bins(y, p_hat, tau_p, theta.tau_w)
    _, t1, t2, _ = interval_ratios(alpha, beta)
    m = np.concatenate((np.asarray(p_hat).real, np.asarray(p_hat).imag))
    s2 = 0.5 * (tau_p + theta.tau_w)
    s = np.sqrt(s2)
    rho = tau_p / (tau_p + theta.tau_w)
    var_u = s2 * np.maximum(1.0 + t2 - t1 * t1, 0.0)
    e_z = m + rho * s * t1
    var_z = 0.25 * tau_p * theta.tau_w / s2 + rho * rho * var_u
    n = len(y)
    z_hat = e_z[:n] + 1j * e_z[n:]
    tau_z = float(np.sum(var_z) / n)
    return z_hat, tau_z


def log_bin_probability(
    y: QuantizedVector, p_hat: np.ndarray, tau_p: float, tau_w: float
) -> np.ndarray:
    """Per-measurement log P(cell pair | p_hat, tau_p, tau_w).

    The real and imaginary components are independent, so each entry is the
    sum of two standardized interval log-masses.
    """
    alpha, beta = standardized_bins(y, p_hat, tau_p, tau_w)
    log_z, _, _, _ = interval_ratios(alpha, beta)
    n = len(y)
    return log_z[:n] + log_z[n:]


@dataclass
class QuantizedOutputChannel:
    """Output channel object bound to a quantizer observation model."""

    theta: ParamTheta

    def posterior(self, y: QuantizedVector, p_hat: np.ndarray, tau_p: float):
        return posterior_z_moments(y, p_hat, tau_p, self.theta)


@dataclass
class AwgnOutputChannel:
    """Unquantized Gaussian channel: y = z + w observed directly.

    With tau_w = 0 this is the pass-through (infinite resolution) channel.
    """

    tau_w: float

    def __post_init__(self) -> None:
        if not np.isfinite(self.tau_w) or self.tau_w < 0:
            raise InvalidParams(f"tau_w must be finite and >= 0, got {self.tau_w}")

    def posterior(self, y: np.ndarray, p_hat: np.ndarray, tau_p: float):
        y = np.asarray(y, dtype=np.complex128)
        if y.shape != np.asarray(p_hat).shape:
            raise DimensionMismatch("y and p_hat must share a shape")
        rho = tau_p / (tau_p + self.tau_w)
        z_hat = p_hat + rho * (y - p_hat)
        tau_z = tau_p * self.tau_w / (tau_p + self.tau_w)
        return z_hat, float(tau_z)
