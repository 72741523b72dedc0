"""What a low-resolution ADC does to a Gaussian signal, and what the
posterior moments recover from a single quantizer cell."""

import numpy as np

from chanest.output_channel import (
    ParamTheta,
    QuantizedOutputChannel,
    default_quantizer,
    dequantize,
    quantize,
)

rng = np.random.default_rng(0)
z = rng.standard_normal(200_000) + 1j * rng.standard_normal(200_000)
z /= np.sqrt(2.0)  # unit-power complex samples

# --- quantize at 1..3 bits and measure the raw distortion ---
for bits in (1, 2, 3):
    spec = default_quantizer(bits, 1.0)
    y = quantize(z, spec)
    zh = dequantize(y)
    mse = np.mean(np.abs(zh - z) ** 2)
    print(f"{bits}-bit: step {spec.symbols[1] - spec.symbols[0]:.4f}, "
          f"dequantize MSE {mse:.4f} ({10 * np.log10(mse):.1f} dB)")

# --- posterior vs plain dequantization for one observed cell ---
# The channel is told the pseudo-prior (p_hat, tau_p) and noise tau_w; its
# posterior mean pulls the cell centroid toward the prior, which is exactly
# what plain dequantization cannot do.
bits = 2
spec = default_quantizer(bits, 1.0)
chan = QuantizedOutputChannel(ParamTheta(tau_w=0.05))
y = quantize(np.array([0.9 + 0.1j]), spec)
for tau_p in (1.0, 0.1, 0.01):
    p_hat = np.array([0.2 + 0.0j])
    z_hat, tau_z = chan.posterior(y, p_hat, tau_p)
    print(f"tau_p={tau_p:5.2f}: cell centroid {dequantize(y)[0]:.3f} "
          f"-> posterior {z_hat[0]:.3f} (var {tau_z:.4f})")
