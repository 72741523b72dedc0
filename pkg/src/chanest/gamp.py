"""Complex sum-product message passing engine with scalar variances.

The engine alternates an output-side update (posterior of the noiseless
measurement z = A x under a Gaussian pseudo-prior) with an input-side update
(posterior of x under the signal prior and a Gaussian pseudo-measurement).
Variances are propagated as scalars using the mean squared operator entry
||A||_F^2 / (M N), the standard simplification for large structured operators
where elementwise |A_mn|^2 bookkeeping would dominate the cost.

One iteration, with damping factor th applied to the input-side estimate:

    tau_p = (||A||_F^2 / M) tau_x
    p_hat = A x_hat - tau_p s_hat
    (z_hat, tau_z) = output posterior at (p_hat, tau_p)
    s_hat = (z_hat - p_hat)/tau_p
    tau_s = (1 - tau_z/tau_p)/tau_p
    tau_r = ((||A||_F^2 / N) tau_s)^{-1}
    r_hat = x_hat + tau_r A^H s_hat
    (x_hat, tau_x) <- damp(input posterior at (r_hat, tau_r))

Damping only x_hat keeps the loop gain of the full cycle below one (every
feedback path runs through x_hat) while leaving the output-side messages
consistent with the current x_hat; damping both sides adds a second complex
eigenvalue pair that shows up as small residual oscillations near
convergence.

Channel objects supply `posterior(...)`; input channels additionally supply
scalar `prior_mean()` / `prior_variance()` used for initialization.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ChannelEvaluationError,
    ChanestError,
    DimensionMismatch,
    InvalidParams,
    NumericalDivergence,
)
from .operators import LinearOperator, mean_removal_wrap

__all__ = ["GampOptions", "GampState", "GampResult", "damp", "run_gamp"]


@dataclass
class GampOptions:
    max_inner_iters: int = 100
    damping_factor: float = 0.7
    mean_removal: bool = False
    tol_rel_change: float = 1e-6
    variance_floor: float = 1e-12

    def __post_init__(self) -> None:
        if not (0 < self.damping_factor <= 1):
            raise InvalidParams(f"damping_factor must be in (0,1], got {self.damping_factor}")
        if self.tol_rel_change < 0:
            raise InvalidParams("tol_rel_change must be >= 0")
        if self.variance_floor <= 0:
            raise InvalidParams("variance_floor must be > 0")
        if self.max_inner_iters < 1:
            raise InvalidParams("max_inner_iters must be >= 1")


@dataclass
class GampState:
    """Snapshot of all per-iteration message quantities."""

    x_hat: np.ndarray
    tau_x: float
    p_hat: np.ndarray
    tau_p: float
    z_hat: np.ndarray
    tau_z: float
    r_hat: np.ndarray
    tau_r: float
    s_hat: np.ndarray
    iteration: int


@dataclass
class GampResult:
    x_hat: np.ndarray
    tau_x: float
    iterations_used: int
    converged: bool
    residual_history: list = field(default_factory=list)
    state: GampState | None = None


def damp(new_value, old_value, factor: float):
    """Convex combination factor*new + (1-factor)*old."""
    if not (0 < factor <= 1):
        raise InvalidParams(f"damping factor must be in (0,1], got {factor}")
    return factor * new_value + (1.0 - factor) * old_value


def _channel_call(fn, *args):
    try:
        return fn(*args)
    except ChanestError:
        raise
    except Exception as exc:  # noqa: BLE001 - wrap foreign channel failures
        raise ChannelEvaluationError(f"channel evaluation failed: {exc}") from exc


def run_gamp(
    op: LinearOperator,
    y,
    input_ch,
    output_ch,
    opts: GampOptions,
    init: GampState | None = None,
) -> GampResult:
    """Run the scalar-variance recursion until the iterate stabilizes.

    converged is True iff the relative change of x_hat between successive
    iterations fell below tol_rel_change within the iteration budget.  The
    returned state carries the final pseudo-measurement (r_hat, tau_r) and
    pseudo-prior (p_hat, tau_p) so an outer parameter-update loop can resume
    or maximize over parameters; passing it back via `init` warm-starts.
    """
    m_dim, n_dim = op.rows, op.cols
    if len(y) != m_dim:
        raise DimensionMismatch(f"y has length {len(y)}, operator has {m_dim} rows")
    if opts.mean_removal:
        op = mean_removal_wrap(op)
    floor = opts.variance_floor
    asq = op.squared_norm_fro / (m_dim * n_dim)
    if asq <= 0:
        raise InvalidParams("operator has zero Frobenius norm")

    if init is not None:
        x_hat = init.x_hat.astype(np.complex128, copy=True)
        tau_x = max(float(init.tau_x), floor)
        s_hat = init.s_hat.astype(np.complex128, copy=True)
    else:
        x_hat = np.full(n_dim, input_ch.prior_mean(), dtype=np.complex128)
        tau_x = max(float(input_ch.prior_variance()), floor)
        s_hat = np.zeros(m_dim, dtype=np.complex128)

    residual_history: list[float] = []
    converged = False
    state = None
    iteration = 0
    for iteration in range(1, opts.max_inner_iters + 1):
        tau_p = max(asq * n_dim * tau_x, floor)
        p_hat = op.forward(x_hat) - tau_p * s_hat
        if not np.all(np.isfinite(p_hat.view(np.float64))):
            raise NumericalDivergence(f"non-finite p_hat at iteration {iteration}")
        z_hat, tau_z = _channel_call(output_ch.posterior, y, p_hat, tau_p)
        tau_z = min(max(float(tau_z), floor), tau_p)
        s_hat = (z_hat - p_hat) / tau_p
        tau_s = max((1.0 - tau_z / tau_p) / tau_p, floor)
        tau_r = max(1.0 / (asq * m_dim * tau_s), floor)
        r_hat = x_hat + tau_r * op.adjoint(s_hat)
        moments = _channel_call(input_ch.posterior, r_hat, tau_r)
        x_new, tau_x_new = moments[0], moments[1]
        x_prev = x_hat
        x_hat = damp(x_new, x_prev, opts.damping_factor)
        tau_x = max(float(tau_x_new), floor)
        if not np.all(np.isfinite(x_hat.view(np.float64))):
            raise NumericalDivergence(f"non-finite x_hat at iteration {iteration}")
        scale = max(float(np.linalg.norm(x_hat)), 1e-300)
        residual = float(np.linalg.norm(x_hat - x_prev)) / scale
        residual_history.append(residual)
        state = GampState(
            x_hat=x_hat,
            tau_x=tau_x,
            p_hat=p_hat,
            tau_p=tau_p,
            z_hat=z_hat,
            tau_z=tau_z,
            r_hat=r_hat,
            tau_r=tau_r,
            s_hat=s_hat,
            iteration=iteration,
        )
        if residual < opts.tol_rel_change:
            converged = True
            break

    return GampResult(
        x_hat=x_hat,
        tau_x=tau_x,
        iterations_used=iteration,
        converged=converged,
        residual_history=residual_history,
        state=state,
    )
