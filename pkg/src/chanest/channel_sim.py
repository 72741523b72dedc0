"""Clustered broadband MIMO channel simulation and its measurement operator.

The antenna-domain channel is a sum of rank-1 path contributions across a
small delay spread; unitary DFT transforms at both arrays move it to the
angle domain, where clustered geometry makes the coefficient tensor
approximately sparse.  The receiver observes circular convolutions of a QPSK
training block with the per-tap channel matrices, plus noise, through the
quantizer.

Vectorization convention: x = vec of the angle-domain tensor X with layout
(tap, rx, tx) in C order, i.e. index (l * N_r + i) * N_t + j.  Measurements
are grouped by receive antenna: row i * N_p + k is antenna i at time k.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateSignal, DimensionMismatch, InvalidParams, ZeroReference
from .operators import LinearOperator
from .output_channel import QuantizedVector, QuantizerSpec, quantize

__all__ = [
    "ChannelConfig",
    "AngleChannel",
    "TrainingBlock",
    "steering_dft",
    "generate_channel",
    "make_training_block",
    "assemble_operator",
    "simulate_measurements",
    "nmse_db",
    "save_channel_artifact",
    "load_channel_artifact",
]

_SNR_CAP_DB = 300.0


@dataclass
class ChannelConfig:
    n_t: int = 64
    n_r: int = 64
    taps: int = 16
    n_clusters: int = 4
    paths_per_cluster: int = 10
    angle_spread_deg: float = 7.5
    n_train: int = 2048
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("n_t", "n_r", "taps", "n_clusters", "paths_per_cluster", "n_train"):
            if getattr(self, name) < 1:
                raise InvalidParams(f"{name} must be >= 1")
        if self.n_train < self.taps:
            raise InvalidParams("n_train must be >= taps")
        if self.angle_spread_deg < 0:
            raise InvalidParams("angle_spread_deg must be >= 0")

    @property
    def signal_dim(self) -> int:
        return self.n_t * self.n_r * self.taps

    @property
    def measurement_dim(self) -> int:
        return self.n_r * self.n_train


@dataclass
class AngleChannel:
    """Angle-domain tensor X and antenna-domain tensor H, both (taps, N_r, N_t)."""

    X: np.ndarray
    H: np.ndarray
    energy: float

    def vec(self) -> np.ndarray:
        return self.X.reshape(-1).copy()


@dataclass
class TrainingBlock:
    """QPSK block, entries (+-1 +-1j)/sqrt(2 N_t): unit transmit power per step."""

    s: np.ndarray
    seed: int


def steering_dft(n: int) -> np.ndarray:
    """Unitary DFT steering matrix, entry (j, k) = exp(-2 pi i j k / n)/sqrt(n)."""
    if n < 1:
        raise InvalidParams("n must be >= 1")
    j = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(j, j) / n) / np.sqrt(n)


def _array_response(n: int, angle_rad: np.ndarray) -> np.ndarray:
    """Half-wavelength ULA response at the given angles, one column per angle."""
    freq = 0.5 * np.sin(angle_rad)
    return np.exp(-2j * np.pi * np.outer(np.arange(n), freq)) / np.sqrt(n)


def generate_channel(cfg: ChannelConfig, on_grid: bool = False) -> AngleChannel:
    """Draw a clustered sparse channel and normalize ||H||_F^2 = N_t N_r.

    Cluster center angles (departure and arrival) are uniform on
    (-pi/2, pi/2); each path perturbs its centers by Laplacian offsets with
    the configured angular standard deviation, carries a CN(0, 1/paths) gain,
    and lands on a uniformly drawn delay tap.  With on_grid=True the spatial
    frequencies snap to the DFT grid (a path then occupies a single
    angle-domain coefficient), used by sparsity sanity tests.
    """
    rng = np.random.default_rng(cfg.seed)
    total = cfg.n_clusters * cfg.paths_per_cluster
    centers_dep = rng.uniform(-np.pi / 2, np.pi / 2, cfg.n_clusters)
    centers_arr = rng.uniform(-np.pi / 2, np.pi / 2, cfg.n_clusters)
    spread = np.deg2rad(cfg.angle_spread_deg) / np.sqrt(2.0)  # Laplace scale from std
    h = np.zeros((cfg.taps, cfg.n_r, cfg.n_t), dtype=np.complex128)
    for c in range(cfg.n_clusters):
        dep = centers_dep[c] + rng.laplace(0.0, spread, cfg.paths_per_cluster)
        arr = centers_arr[c] + rng.laplace(0.0, spread, cfg.paths_per_cluster)
        if on_grid:
            dep = np.arcsin(np.clip(np.round(0.5 * np.sin(dep) * cfg.n_t) / (0.5 * cfg.n_t), -1, 1))
            arr = np.arcsin(np.clip(np.round(0.5 * np.sin(arr) * cfg.n_r) / (0.5 * cfg.n_r), -1, 1))
        gains = (rng.standard_normal(cfg.paths_per_cluster) + 1j * rng.standard_normal(cfg.paths_per_cluster)) / np.sqrt(2.0 * total)
        delays = rng.integers(0, cfg.taps, cfg.paths_per_cluster)
        a_r = _array_response(cfg.n_r, arr)
        a_t = _array_response(cfg.n_t, dep)
        for p in range(cfg.paths_per_cluster):
            h[delays[p]] += gains[p] * np.outer(a_r[:, p], a_t[:, p].conj())
    norm = np.sqrt(cfg.n_t * cfg.n_r / np.sum(np.abs(h) ** 2))
    h *= norm
    b_r = steering_dft(cfg.n_r)
    b_t = steering_dft(cfg.n_t)
    x = np.einsum("ri,lij,jt->lrt", b_r.conj().T, h, b_t, optimize=True)
    return AngleChannel(X=x, H=h, energy=float(np.sum(np.abs(h) ** 2)))


def make_training_block(n_t: int, n_train: int, seed: int) -> TrainingBlock:
    """Random QPSK training block with unit per-step transmit power."""
    rng = np.random.default_rng(seed)
    bits = rng.integers(0, 2, size=(2, n_t, n_train))
    s = ((2 * bits[0] - 1) + 1j * (2 * bits[1] - 1)) / np.sqrt(2.0 * n_t)
    return TrainingBlock(s=s, seed=seed)


def assemble_operator(s: TrainingBlock, cfg: ChannelConfig) -> LinearOperator:
    """Measurement map from vec(X) to the stacked received block.

    y[k] = sum_l B_r X[l] (B_t^H s[k-l]), with the convolution circular over
    the training block (cyclic-prefix convention).  Precomputing the
    transformed training block and its L cyclic shifts reduces forward and
    adjoint to one large matrix product each.  The squared Frobenius norm is
    exact: each delayed copy of the unitary-transformed training block
    contributes N_r ||s||_F^2.
    """
    n_t, n_r, taps, n_train = cfg.n_t, cfg.n_r, cfg.taps, cfg.n_train
    if s.s.shape != (n_t, n_train):
        raise DimensionMismatch(f"training block shape {s.s.shape} != ({n_t}, {n_train})")
    b_r = steering_dft(n_r)
    b_t = steering_dft(n_t)
    st = b_t.conj().T @ s.s
    shifted = np.stack([np.roll(st, l, axis=1) for l in range(taps)])
    sr = np.ascontiguousarray(shifted.reshape(taps * n_t, n_train))
    srh = sr.conj().T.copy()
    b_rh = b_r.conj().T.copy()
    n_dim = n_t * n_r * taps
    m_dim = n_r * n_train
    fro = taps * n_r * float(np.sum(np.abs(st) ** 2))

    def forward(x: np.ndarray) -> np.ndarray:
        if x.shape != (n_dim,):
            raise DimensionMismatch(f"expected shape ({n_dim},), got {x.shape}")
        xl = x.reshape(taps, n_r, n_t).transpose(1, 0, 2).reshape(n_r, taps * n_t)
        return (b_r @ (xl @ sr)).reshape(-1)

    def adjoint(u: np.ndarray) -> np.ndarray:
        if u.shape != (m_dim,):
            raise DimensionMismatch(f"expected shape ({m_dim},), got {u.shape}")
        g = b_rh @ u.reshape(n_r, n_train)
        t = g @ srh
        return t.reshape(n_r, taps, n_t).transpose(1, 0, 2).reshape(-1)

    return LinearOperator(rows=m_dim, cols=n_dim, forward=forward, adjoint=adjoint, squared_norm_fro=fro)


def simulate_measurements(
    x: np.ndarray,
    op: LinearOperator,
    snr_db: float,
    spec: QuantizerSpec,
    seed: int,
    z: np.ndarray | None = None,
):
    """Add noise at the target SNR and quantize.

    Returns (y, r, tau_w_true) with r = z + w kept for diagnostics; the
    noise variance is set from the realized signal energy,
    tau_w = ||z||^2 / (M 10^{snr/10}), SNR capped at 300 dB.  Passing a
    precomputed z skips the forward apply.
    """
    if np.isnan(snr_db) or snr_db == -np.inf:
        raise InvalidParams(f"snr_db must be finite or +inf, got {snr_db}")
    snr_db = min(float(snr_db), _SNR_CAP_DB)
    if z is None:
        z = op.forward(np.asarray(x, dtype=np.complex128))
    power = float(np.sum(np.abs(z) ** 2)) / op.rows
    if power <= 0:
        raise DegenerateSignal("noiseless measurement has zero energy")
    tau_w = power * 10.0 ** (-snr_db / 10.0)
    rng = np.random.default_rng(seed)
    w = np.sqrt(tau_w / 2.0) * (rng.standard_normal(op.rows) + 1j * rng.standard_normal(op.rows))
    r = z + w
    return quantize(r, spec), r, tau_w


def nmse_db(x_hat: np.ndarray, x_true: np.ndarray) -> float:
    """10 log10(||x_hat - x_true||^2 / ||x_true||^2), floored at -300 dB."""
    x_hat = np.asarray(x_hat)
    x_true = np.asarray(x_true)
    if x_hat.shape != x_true.shape:
        raise DimensionMismatch(f"shape mismatch {x_hat.shape} vs {x_true.shape}")
    ref = float(np.sum(np.abs(x_true) ** 2))
    if ref <= 0:
        raise ZeroReference("reference signal has zero norm")
    ratio = float(np.sum(np.abs(x_hat - x_true) ** 2)) / ref
    return float(10.0 * np.log10(max(ratio, 1e-30)))


_ARTIFACT_HEADER = struct.Struct("<4I")


def save_channel_artifact(path, tensors) -> None:
    """Write angle-domain tensors: 16-byte dims header then complex64 payloads.

    Layout: little-endian uint32 (N_r, N_t, taps, count) followed by count
    C-order (taps, N_r, N_t) complex64 tensors.
    """
    tensors = [np.asarray(t) for t in tensors]
    if not tensors:
        raise InvalidParams("need at least one tensor")
    taps, n_r, n_t = tensors[0].shape
    with open(path, "wb") as fh:
        fh.write(_ARTIFACT_HEADER.pack(n_r, n_t, taps, len(tensors)))
        for t in tensors:
            if t.shape != (taps, n_r, n_t):
                raise DimensionMismatch("artifact tensors must share a shape")
            fh.write(np.ascontiguousarray(t, dtype=np.complex64).tobytes())


def load_channel_artifact(path):
    """Read tensors written by save_channel_artifact.  Returns (dims, list)."""
    with open(path, "rb") as fh:
        n_r, n_t, taps, count = _ARTIFACT_HEADER.unpack(fh.read(_ARTIFACT_HEADER.size))
        out = []
        for _ in range(count):
            buf = fh.read(taps * n_r * n_t * 8)
            t = np.frombuffer(buf, dtype=np.complex64).reshape(taps, n_r, n_t)
            out.append(t.astype(np.complex128))
    return (n_r, n_t, taps), out
