"""Clustered multipath channel in the angle domain.

Generates a frequency-selective channel, shows how strongly its energy
concentrates after the DFT transforms, and writes the tensor artifact that
the figure script consumes.
"""

import numpy as np

from chanest.channel_sim import (
    ChannelConfig,
    assemble_operator,
    generate_channel,
    make_training_block,
    save_channel_artifact,
)

cfg = ChannelConfig(n_t=16, n_r=16, taps=8, n_clusters=4, paths_per_cluster=10,
                    angle_spread_deg=7.5, n_train=512, seed=3)
chan = generate_channel(cfg)
x = chan.vec()
n = x.size

print(f"{cfg.n_r}x{cfg.n_t} array, {cfg.taps} taps -> {n} angle-domain coefficients")
print(f"total energy {np.sum(np.abs(x) ** 2):.1f} (normalized to n_t*n_r)")

mags = np.sort(np.abs(x))[::-1] ** 2
frac = np.cumsum(mags) / mags.sum()
for pct in (1, 5, 10):
    kk = max(1, n * pct // 100)
    print(f"top {pct:2d}% of entries ({kk:4d}) hold {100 * frac[kk - 1]:5.1f}% of the energy")

# per-tap energy profile: each tap only carries what the delay draw put there
per_tap = np.sum(np.abs(x.reshape(cfg.taps, cfg.n_r, cfg.n_t)) ** 2, axis=(1, 2))
print("per-tap energy:", " ".join(f"{e:6.1f}" for e in per_tap))

# the measurement operator for this channel, and the artifact for plotting
block = make_training_block(cfg.n_t, cfg.n_train, seed=11)
op = assemble_operator(block, cfg)
print(f"operator: {op.rows} measurements x {op.cols} unknowns, "
      f"|A|_F^2 = {op.squared_norm_fro:.0f}")

save_channel_artifact("demo_channel.bin", [x.reshape(cfg.taps, cfg.n_r, cfg.n_t)])
print("wrote demo_channel.bin")
