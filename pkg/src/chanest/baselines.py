"""Reference recoverers: least squares, hard-thresholded gradient descent,
and message passing with the true generating parameters.

LS and IHT treat quantization as noise: the observed cell indices are mapped
to their reconstruction symbols and the result fitted in least squares. The
oracle runs the same engine as the joint estimator but with the generating
prior and noise variance pinned, which upper-bounds what parameter
estimation can achieve.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.sparse.linalg import LinearOperator as ScipyLinOp
from scipy.sparse.linalg import cg

from .errors import CgStagnation, DivergenceDetected, InvalidParams
from .gamp import GampOptions, GampResult, run_gamp
from .input_channel import BernoulliGmInput, ParamLambda
from .operators import LinearOperator
from .output_channel import (
    AwgnOutputChannel,
    ParamTheta,
    QuantizedOutputChannel,
    QuantizedVector,
    QuantizerSpec,
    dequantize,
)

__all__ = ["IhtOptions", "least_squares", "iht", "hard_threshold", "amp_oracle"]


@dataclass
class IhtOptions:
    sparsity: int
    step_size: float | str = "auto"
    max_iters: int = 200
    tol: float = 1e-6

    def __post_init__(self) -> None:
        if self.sparsity < 1:
            raise InvalidParams("sparsity must be >= 1")
        if self.max_iters < 1:
            raise InvalidParams("max_iters must be >= 1")
        if self.step_size != "auto" and (
            not np.isreal(self.step_size) or self.step_size <= 0
        ):
            raise InvalidParams("step_size must be positive or 'auto'")


def _dequantized_target(y, spec: QuantizerSpec | None) -> np.ndarray:
    if isinstance(y, QuantizedVector):
        if spec is not None and spec is not y.spec:
            y = QuantizedVector(re_idx=y.re_idx, im_idx=y.im_idx, spec=spec)
        return dequantize(y)
    return np.asarray(y, dtype=np.complex128)


def least_squares(
    op: LinearOperator,
    y,
    spec: QuantizerSpec | None = None,
    max_cg_iters: int = 200,
    tol: float = 1e-6,
) -> np.ndarray:
    """min_x ||A x - y_dq||^2 by conjugate gradients on the normal equations.

    Stops when the normal-equation residual drops below tol relative to the
    right-hand side; hitting the iteration cap instead emits a CgStagnation
    warning and returns the current iterate.
    """
    target = _dequantized_target(y, spec)
    rhs = op.adjoint(target)
    gram = ScipyLinOp(
        shape=(op.cols, op.cols),
        dtype=np.complex128,
        matvec=lambda v: op.adjoint(op.forward(np.asarray(v, dtype=np.complex128))),
    )
    x, info = cg(gram, rhs, rtol=tol, maxiter=max_cg_iters)
    if info > 0:
        warnings.warn(
            f"normal-equation CG stopped at {max_cg_iters} iterations above tolerance",
            CgStagnation,
        )
    return np.asarray(x, dtype=np.complex128)


def hard_threshold(x: np.ndarray, k: int) -> np.ndarray:
    """Keep the k largest-magnitude entries, zero the rest.  Idempotent."""
    if k < 0:
        raise InvalidParams("k must be >= 0")
    out = np.zeros_like(x)
    if k == 0:
        return out
    if k >= x.shape[0]:
        return x.copy()
    keep = np.argpartition(np.abs(x), -k)[-k:]
    out[keep] = x[keep]
    return out


def _spectral_norm_sq(op: LinearOperator, n_iters: int = 50) -> float:
    """||A||_2^2 by power iteration on A^H A with a fixed-seed start."""
    rng = np.random.default_rng(0)
    v = rng.standard_normal(op.cols) + 1j * rng.standard_normal(op.cols)
    v /= np.linalg.norm(v)
    lam = 1.0
    for _ in range(n_iters):
        w = op.adjoint(op.forward(v))
        lam = float(np.linalg.norm(w))
        if lam <= 0:
            return 0.0
        v = w / lam
    return lam


def iht(
    op: LinearOperator,
    y,
    spec: QuantizerSpec | None = None,
    opts: IhtOptions | None = None,
) -> np.ndarray:
    """Projected gradient descent onto the sparsity-k set.

    x <- HT_k(x + eta A^H (y_dq - A x)); eta = 0.9/||A||_2^2 when "auto".
    Raises DivergenceDetected if the residual objective grows past ten times
    its value at x = 0.
    """
    if opts is None:
        raise InvalidParams("iht requires options with a sparsity level")
    if opts.sparsity > op.cols:
        raise InvalidParams(f"sparsity {opts.sparsity} exceeds dimension {op.cols}")
    target = _dequantized_target(y, spec)
    if opts.step_size == "auto":
        norm_sq = _spectral_norm_sq(op)
        eta = 0.9 / norm_sq if norm_sq > 0 else 1.0
    else:
        eta = float(opts.step_size)
    x = np.zeros(op.cols, dtype=np.complex128)
    obj_limit = 10.0 * float(np.sum(np.abs(target) ** 2)) + 1e-30
    for _ in range(opts.max_iters):
        residual = target - op.forward(x)
        obj = float(np.sum(np.abs(residual) ** 2))
        if obj > obj_limit:
            raise DivergenceDetected(f"objective {obj:.3e} exceeded 10x initial")
        x_new = hard_threshold(x + eta * op.adjoint(residual), opts.sparsity)
        delta = float(np.linalg.norm(x_new - x))
        x = x_new
        if delta <= opts.tol * max(float(np.linalg.norm(x)), 1e-30):
            break
    return x


def amp_oracle(
    op: LinearOperator,
    y,
    lambda_true: ParamLambda,
    theta_true: ParamTheta,
    opts: GampOptions,
) -> GampResult:
    """Run the engine with generating parameters pinned (no outer loop)."""
    input_ch = BernoulliGmInput(lambda_true)
    if isinstance(y, QuantizedVector):
        output_ch = QuantizedOutputChannel(theta_true)
    else:
        output_ch = AwgnOutputChannel(theta_true.tau_w)
    return run_gamp(op, y, input_ch, output_ch, opts)
