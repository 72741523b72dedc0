"""Recover a sparse complex signal from 2-bit measurements.

Compares joint estimation (prior and noise learned from the data) against
conjugate-gradient least squares and iterative hard thresholding on the
same realization.
"""

import numpy as np

from chanest.baselines import IhtOptions, iht, least_squares
from chanest.channel_sim import nmse_db
from chanest.gamp import GampOptions
from chanest.operators import from_dense
from chanest.output_channel import default_quantizer, quantize
from chanest.param_estimation import OuterLoopOptions, estimate_joint

rng = np.random.default_rng(42)
n, m, k = 256, 1024, 24

x = np.zeros(n, dtype=complex)
support = rng.choice(n, size=k, replace=False)
x[support] = (rng.standard_normal(k) + 1j * rng.standard_normal(k)) / np.sqrt(2)

a = (rng.standard_normal((m, n)) + 1j * rng.standard_normal((m, n))) / np.sqrt(2 * m)
op = from_dense(a)

z = a @ x
snr_db = 25.0
power = np.mean(np.abs(z) ** 2)
tau_w = power * 10 ** (-snr_db / 10)
r = z + np.sqrt(tau_w / 2) * (rng.standard_normal(m) + 1j * rng.standard_normal(m))

bits = 2
y = quantize(r, default_quantizer(bits, np.sqrt(power + tau_w)))
print(f"n={n} m={m} k={k}, {bits}-bit ADC at {snr_db:.0f} dB SNR")

est = estimate_joint(op, y, GampOptions(), OuterLoopOptions())
print(f"joint estimate : {nmse_db(est.x_hat, x):7.2f} dB   "
      f"kappa_hat {est.lambda_hat.kappa:.3f} (true {k / n:.3f})   "
      f"tau_w_hat {est.theta_hat.tau_w:.2e} (true {tau_w:.2e})")

xh = least_squares(op, y, None, 200, 1e-6)
print(f"least squares  : {nmse_db(xh, x):7.2f} dB")

xh = iht(op, y, None, IhtOptions(sparsity=k))
print(f"iht (true k)   : {nmse_db(xh, x):7.2f} dB")
