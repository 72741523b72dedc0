"""Matrix-free complex linear operators.

Solvers in this package never touch a dense matrix: they see an operator as a
pair of callables (forward and adjoint) plus the squared Frobenius norm, which
the scalar-variance message passing recursion needs for its variance
bookkeeping.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DimensionMismatch

__all__ = [
    "LinearOperator",
    "from_dense",
    "mean_removal_wrap",
    "probe_squared_norm_fro",
]


@dataclass
class LinearOperator:
    """A : C^cols -> C^rows given by matching forward/adjoint closures.

    squared_norm_fro must equal sum |A_mn|^2 exactly for structured
    operators (a probing estimate is acceptable only for tests).
    """

    rows: int
    cols: int
    forward: Callable[[np.ndarray], np.ndarray]
    adjoint: Callable[[np.ndarray], np.ndarray]
    squared_norm_fro: float

    def __post_init__(self) -> None:
        if self.rows <= 0 or self.cols <= 0:
            raise DimensionMismatch(
                f"operator shape ({self.rows}, {self.cols}) must be positive"
            )
        if not np.isfinite(self.squared_norm_fro) or self.squared_norm_fro < 0:
            raise DimensionMismatch("squared_norm_fro must be finite and >= 0")

    def check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x)
        if x.shape != (self.cols,):
            raise DimensionMismatch(f"expected shape ({self.cols},), got {x.shape}")
        return x


def from_dense(a: np.ndarray) -> LinearOperator:
    """Wrap an explicit matrix; used by tests and small problems."""
    a = np.ascontiguousarray(a, dtype=np.complex128)
    if a.ndim != 2:
        raise DimensionMismatch("from_dense expects a 2-D array")
    ah = a.conj().T.copy()
    m, n = a.shape

    def forward(x: np.ndarray) -> np.ndarray:
        if np.shape(x) != (n,):
            raise DimensionMismatch(f"expected shape ({n},), got {np.shape(x)}")
        return a @ x

    def adjoint(u: np.ndarray) -> np.ndarray:
        if np.shape(u) != (m,):
            raise DimensionMismatch(f"expected shape ({m},), got {np.shape(u)}")
        return ah @ u

    return LinearOperator(
        rows=m,
        cols=n,
        forward=forward,
        adjoint=adjoint,
        squared_norm_fro=float(np.sum(np.abs(a) ** 2)),
    )


def mean_removal_wrap(op: LinearOperator) -> LinearOperator:
    """Return the rank-2 corrected operator with zero row and column means.

    B = A - g 1^T - 1 c^T where g holds the row means of A and c the column
    means of A - g 1^T.  Forward/adjoint stay matrix-free (one extra rank-2
    term per apply) and the squared Frobenius norm shrinks exactly by
    N ||g||^2 + M ||c||^2 because the two corrections are orthogonal to B
    and to each other.

    Low-resolution measurements carry almost no information about the mean
    component of A x, so removing the operator mean ahead of message passing
    avoids a slow, poorly conditioned direction.
    """
    m, n = op.rows, op.cols
    ones_n = np.ones(n, dtype=np.complex128)
    ones_m = np.ones(m, dtype=np.complex128)
    g = op.forward(ones_n) / n
    # column means of A1 = A - g 1^T:  conj(A1^H 1) / M
    col = np.conj(op.adjoint(ones_m) - ones_n * np.vdot(g, ones_m)) / m
    fro = op.squared_norm_fro - n * float(np.sum(np.abs(g) ** 2))
    fro -= m * float(np.sum(np.abs(col) ** 2))
    fro = max(fro, 0.0)

    def forward(x: np.ndarray) -> np.ndarray:
        return op.forward(x) - g * x.sum() - ones_m * (col @ x)

    def adjoint(u: np.ndarray) -> np.ndarray:
        return op.adjoint(u) - ones_n * np.vdot(g, u) - np.conj(col) * u.sum()

    return LinearOperator(
        rows=m, cols=n, forward=forward, adjoint=adjoint, squared_norm_fro=fro
    )


def probe_squared_norm_fro(
    op: LinearOperator, n_probes: int = 2000, seed: int = 0
) -> float:
    """Stochastic estimate of ||A||_F^2 via E ||A v||^2 with v ~ CN(0, I)."""
    rng = np.random.default_rng(seed)
    total = 0.0
    for _ in range(n_probes):
        v = rng.standard_normal(op.cols) + 1j * rng.standard_normal(op.cols)
        v *= np.sqrt(0.5)
        total += float(np.sum(np.abs(op.forward(v)) ** 2))
    return total / n_probes
