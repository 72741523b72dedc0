"""Joint estimation: alternate message passing with prior/noise updates.

The prior parameters get closed-form EM maximizers from the mixture
responsibilities.  The noise variance gets a safeguarded Newton ascent in
u = log tau_w on the summed log cell-probability of the observed quantizer
outputs; the first two derivatives are analytic, built from the same
truncated-Gaussian ratio machinery as the output channel.  With
S = (tau_p + tau_w)/2 and per-component ratios T2, T4 (see
output_channel.interval_ratios):

    dL/du   = (tau_w / 4S) sum T2
    d2L/du2 = (tau_w^2 / 16 S^2) sum (T4 - 3 T2 - T2^2) + (tau_w / 4S) sum T2

Flat hyperpriors on the valid domains make these MAP updates coincide with
constrained maximum likelihood, which is what the tests target.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .gamp import GampOptions, GampResult, run_gamp
from .errors import InvalidParams
from .input_channel import (
    BernoulliGmInput,
    ParamLambda,
    Responsibilities,
    posterior_x_moments,
)
from .operators import LinearOperator
from .output_channel import (
    ParamTheta,
    QuantizedOutputChannel,
    QuantizedVector,
    dequantize,
    interval_ratios,
    log_bin_probability,
    standardized_bins,
)

__all__ = [
    "OuterLoopOptions",
    "JointEstimate",
    "update_lambda",
    "update_theta",
    "initialize_params",
    "estimate_joint",
]


@dataclass
class OuterLoopOptions:
    max_outer_iters: int = 20
    param_tol: float = 1e-4
    tau_w_min: float = 1e-12
    kappa_bounds: tuple = (1e-4, 1.0 - 1e-4)
    newton_max_steps: int = 20
    newton_backtrack: float = 0.5

    def __post_init__(self) -> None:
        lo, hi = self.kappa_bounds
        if not (0 < lo < hi < 1):
            raise InvalidParams(f"kappa_bounds must satisfy 0 < lo < hi < 1, got {self.kappa_bounds}")
        if self.tau_w_min <= 0:
            raise InvalidParams("tau_w_min must be > 0")
        if self.max_outer_iters < 1:
            raise InvalidParams("max_outer_iters must be >= 1")
        if not (0 < self.newton_backtrack < 1):
            raise InvalidParams("newton_backtrack must be in (0,1)")


@dataclass
class JointEstimate:
    x_hat: np.ndarray
    lambda_hat: ParamLambda
    theta_hat: ParamTheta
    outer_iters_used: int
    converged: bool
    inner_iterations_total: int = 0
    gamp: GampResult | None = None


def update_lambda(
    resp: Responsibilities,
    r_hat: np.ndarray,
    tau_r: float,
    lambda_old: ParamLambda,
    kappa_bounds: tuple = (1e-4, 1.0 - 1e-4),
) -> ParamLambda:
    """EM maximizer of the summed prior log-evidence at fixed (r_hat, tau_r).

    The responsibilities are the sufficient statistics, so (r_hat, tau_r)
    enter only through them; the arguments are kept for interface symmetry
    with the evidence they maximize.  Components with responsibility mass
    below 1e-8 are frozen: they keep their old mean, variance, and weight,
    and the live components share the remaining weight in proportion to mass.
    """
    d = lambda_old.n_components
    if resp.comp_prob.shape[1] != d:
        raise InvalidParams(f"responsibilities have {resp.comp_prob.shape[1]} components, prior has {d}")
    kappa = float(np.clip(np.mean(1.0 - resp.spike_prob), *kappa_bounds))
    mass = resp.comp_prob.sum(axis=0)
    frozen = mass < 1e-8
    if np.all(frozen):
        return ParamLambda(
            kappa=kappa,
            weights=lambda_old.weights.copy(),
            means=lambda_old.means.copy(),
            variances=lambda_old.variances.copy(),
        )
    means = lambda_old.means.copy()
    variances = lambda_old.variances.copy()
    weights = lambda_old.weights.copy()
    live = ~frozen
    means[live] = (resp.comp_prob[:, live] * resp.comp_mean[:, live]).sum(axis=0) / mass[live]
    spread = np.abs(resp.comp_mean[:, live] - means[live][None, :]) ** 2 + resp.comp_var[:, live]
    variances[live] = np.maximum(
        (resp.comp_prob[:, live] * spread).sum(axis=0) / mass[live], 1e-12
    )
    weights[live] = (1.0 - weights[frozen].sum()) * mass[live] / mass[live].sum()
    weights = np.maximum(weights, 0.0)
    weights = weights / weights.sum()
    return ParamLambda(kappa=kappa, weights=weights, means=means, variances=variances)


def _theta_objective(y: QuantizedVector, p_hat, tau_p, tau_w) -> float:
    return float(np.sum(log_bin_probability(y, p_hat, tau_p, tau_w)))


def _theta_derivatives(y: QuantizedVector, p_hat, tau_p, tau_w):
    alpha, beta = standardized_bins(y, p_hat, tau_p, tau_w)
    _, _, t2, t4 = interval_ratios(alpha, beta)
    s = 0.5 * (tau_p + tau_w)
    sum_t2 = float(np.sum(t2))
    grad = tau_w * sum_t2 / (4.0 * s)
    curv = float(np.sum(t4 - 3.0 * t2 - t2 * t2)) * tau_w**2 / (16.0 * s * s)
    curv += tau_w * sum_t2 / (4.0 * s)
    return grad, curv


def _maximize_tau_w(
    y: QuantizedVector,
    p_hat: np.ndarray,
    tau_p: float,
    tau_w0: float,
    opts: OuterLoopOptions,
):
    """Safeguarded Newton ascent in log tau_w.  Returns (tau_w, ok).

    ok is False only when the gradient is materially nonzero yet no
    backtracked step improves the objective before any progress was made;
    stalling at the tau_w_min boundary against a negative gradient counts
    as success (constrained maximum).
    """
    n_comp = 2 * len(y)
    best = max(float(tau_w0), opts.tau_w_min)
    u = np.log(best)
    obj = _theta_objective(y, p_hat, tau_p, best)
    made_progress = False
    for _ in range(opts.newton_max_steps):
        grad, curv = _theta_derivatives(y, p_hat, tau_p, best)
        if abs(grad) < 1e-12 * n_comp:
            return best, True
        step = -grad / curv if curv < 0 else np.sign(grad)
        step = float(np.clip(step, -4.0, 4.0))
        accepted = False
        for _ in range(60):
            u_try = max(u + step, np.log(opts.tau_w_min))
            if u_try == u:
                break
            cand = float(np.exp(u_try))
            obj_try = _theta_objective(y, p_hat, tau_p, cand)
            if obj_try > obj:
                u, best, obj = u_try, cand, obj_try
                accepted = True
                break
            step *= opts.newton_backtrack
        if not accepted:
            at_floor = u <= np.log(opts.tau_w_min) + 1e-12 and grad < 0
            return best, made_progress or at_floor
        made_progress = True
        if abs(step) < 1e-10:
            return best, True
    return best, True


def update_theta(
    y: QuantizedVector,
    p_hat: np.ndarray,
    tau_p: float,
    theta_old: ParamTheta,
    opts: OuterLoopOptions,
) -> ParamTheta:
    """Maximize the summed log cell-probability over tau_w >= tau_w_min.

    A flat objective (or a step search that cannot improve it) returns
    theta_old unchanged; estimate_joint inspects the internal success flag
    and ends its loop unconverged in the genuine-failure case.
    """
    tau_w, _ = _maximize_tau_w(y, p_hat, tau_p, theta_old.tau_w, opts)
    return ParamTheta(tau_w=tau_w)


def initialize_params(
    y: QuantizedVector, op: LinearOperator, n_components: int = 4
) -> tuple[ParamLambda, ParamTheta]:
    """Data-derived starting point for the outer loop.

    The dequantized measurement energy rho fixes the overall scale: the prior
    second moment per entry matches rho M / ||A||_F^2 (energy balance through
    the operator), spread across zero-mean components with geometrically
    spaced variances, and tau_w starts at a tenth of rho.
    """
    y_dq = dequantize(y)
    rho = float(np.mean(np.abs(y_dq) ** 2))
    if rho <= 0:
        sym = np.abs(y.spec.symbols)
        nonzero = sym[sym > 0]
        rho = float(nonzero.min() ** 2) if nonzero.size else 1e-12
    kappa = 0.1
    target = rho * op.rows / op.squared_norm_fro
    scales = np.geomspace(0.1, 10.0, n_components) if n_components > 1 else np.ones(1)
    variances = scales * target / (kappa * scales.mean())
    lam = ParamLambda(
        kappa=kappa,
        weights=np.full(n_components, 1.0 / n_components),
        means=np.zeros(n_components, dtype=np.complex128),
        variances=variances,
    )
    return lam, ParamTheta(tau_w=0.1 * rho)


def _sign_only_level(spec) -> float | None:
    """Target E|z+w|^2 implied by a sign-only quantizer, or None.

    When every finite threshold sits at zero the observations carry sign
    information only, and the likelihood is invariant under scaling the
    signal prior and tau_w by a common factor.  The absolute scale then has
    to come from the converter's design level: the MSE-optimal one-bit
    symbol for a zero-mean Gaussian of std sigma is sigma*sqrt(2/pi) per
    component, so a symbol amplitude s implies E|z+w|^2 = pi*s^2.
    """
    finite = spec.thresholds[np.isfinite(spec.thresholds)]
    if finite.size == 0 or np.any(finite != 0.0):
        return None
    s = float(np.max(np.abs(spec.symbols)))
    if s == 0.0:
        return None
    return math.pi * s * s


def _fix_scale(lam, theta, state, target, op, tau_w_min):
    """Rescale (lam, theta, state) along the flat scale direction.

    Pure gauge move: the sign-only likelihood cannot see it, every message
    in the warm-start state is rescaled covariantly, so the trajectory is
    unchanged apart from landing on the anchored scale.
    """
    implied = op.squared_norm_fro / op.rows * lam.prior_second_moment() + theta.tau_w
    if not (np.isfinite(implied) and implied > 0.0):
        return lam, theta, state
    ratio = target / implied
    if abs(ratio - 1.0) < 1e-12:
        return lam, theta, state
    a = math.sqrt(ratio)
    lam = ParamLambda(
        kappa=lam.kappa,
        weights=lam.weights.copy(),
        means=lam.means * a,
        variances=lam.variances * ratio,
    )
    theta = ParamTheta(tau_w=max(theta.tau_w * ratio, tau_w_min))
    if state is not None:
        state = replace(
            state,
            x_hat=state.x_hat * a,
            tau_x=state.tau_x * ratio,
            p_hat=state.p_hat * a,
            tau_p=state.tau_p * ratio,
            z_hat=state.z_hat * a,
            tau_z=state.tau_z * ratio,
            r_hat=state.r_hat * a,
            tau_r=state.tau_r * ratio,
            s_hat=state.s_hat / a,
        )
    return lam, theta, state


def estimate_joint(
    op: LinearOperator,
    y: QuantizedVector,
    opts_inner: GampOptions,
    opts_outer: OuterLoopOptions,
    init: tuple[ParamLambda, ParamTheta] | None = None,
) -> JointEstimate:
    """Alternate message passing with parameter updates until both settle.

    Each round runs the engine warm-started from the previous round's state,
    refits the prior from the final-iteration responsibilities (the E-step at
    the current pseudo-measurement), and Newton-updates the noise variance at
    the current pseudo-prior.  Stops when the largest relative parameter
    change drops below param_tol, a theta step genuinely fails (converged
    stays False), or the round budget runs out.
    """
    if init is None:
        lam, theta = initialize_params(y, op)
    else:
        lam, theta = init
    anchor = _sign_only_level(y.spec)
    state = None
    result = None
    converged = False
    rounds = 0
    inner_total = 0
    for rounds in range(1, opts_outer.max_outer_iters + 1):
        result = run_gamp(
            op,
            y,
            BernoulliGmInput(lam),
            QuantizedOutputChannel(theta),
            opts_inner,
            init=state,
        )
        state = result.state
        inner_total += result.iterations_used
        _, _, resp = posterior_x_moments(state.r_hat, state.tau_r, lam)
        lam_new = update_lambda(
            resp, state.r_hat, state.tau_r, lam, kappa_bounds=opts_outer.kappa_bounds
        )
        tau_w_new, theta_ok = _maximize_tau_w(
            y, state.p_hat, state.tau_p, theta.tau_w, opts_outer
        )
        theta_new = ParamTheta(tau_w=tau_w_new)
        if anchor is not None:
            lam_new, theta_new, state = _fix_scale(
                lam_new, theta_new, state, anchor, op, opts_outer.tau_w_min
            )
        delta = _param_delta(lam, lam_new, theta.tau_w, theta_new.tau_w)
        lam = lam_new
        theta = theta_new
        if not theta_ok:
            break
        if delta < opts_outer.param_tol:
            converged = True
            break
    return JointEstimate(
        x_hat=state.x_hat,
        lambda_hat=lam,
        theta_hat=theta,
        outer_iters_used=rounds,
        converged=converged,
        inner_iterations_total=inner_total,
        gamp=result,
    )


def _param_delta(lam_old: ParamLambda, lam_new: ParamLambda, tau_old: float, tau_new: float) -> float:
    def rel(a, b):
        return np.max(np.abs(a - b) / np.maximum(np.abs(b), 1e-12))

    # mean changes are scaled by the component spread, not |mu| (means hover near 0)
    mean_scale = np.maximum(np.abs(lam_old.means), np.sqrt(lam_old.variances))
    mean_delta = np.max(np.abs(lam_new.means - lam_old.means) / np.maximum(mean_scale, 1e-12))
    return float(
        max(
            rel(lam_new.kappa, lam_old.kappa),
            rel(lam_new.weights, lam_old.weights),
            mean_delta,
            rel(lam_new.variances, lam_old.variances),
            rel(tau_new, tau_old),
        )
    )
