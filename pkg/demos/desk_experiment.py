"""End-to-end mini sweep: run, summarize, and replay through the harness.

A scaled-down version of the paired experiment (small array, two trials)
that finishes in about a minute.  The full-size configuration lives in
configs/desk.cfg.
"""

import pathlib

import chanest.harness as hz
from chanest.baselines import IhtOptions
from chanest.channel_sim import ChannelConfig
from chanest.gamp import GampOptions
from chanest.param_estimation import OuterLoopOptions

out = pathlib.Path("demo_out")
out.mkdir(exist_ok=True)

cfg = hz.ExperimentConfig(
    channel=ChannelConfig(n_t=8, n_r=8, taps=4, n_clusters=2,
                          paths_per_cluster=5, angle_spread_deg=7.5, n_train=128),
    bits_list=[1, 3],
    snr_list_db=[10.0, 30.0],
    methods=["amp-pe", "amp-oracle", "ls", "iht"],
    trials=2,
    base_seed=7,
    output_path=str(out / "results.csv"),
    gamp=GampOptions(max_inner_iters=40, tol_rel_change=1e-5),
    outer=OuterLoopOptions(max_outer_iters=8, param_tol=1e-3),
    iht=IhtOptions(sparsity=13),
)

records = hz.run_experiment(cfg)
print(f"ran {len(records)} cells -> {cfg.output_path}")

rows = hz.summarize(records)
hz.write_summary_csv(str(out / "summary.csv"), rows)
print(f"{'bits':>4} {'snr':>5} {'method':>10} {'mean nmse':>10}")
for row in rows:
    print(f"{row['bits']:>4} {row['snr_db']:>5.0f} {row['method']:>10} "
          f"{row['nmse_db']:>9.2f}dB")

# replay the first row and confirm the recorded value reproduces exactly
orig, new = hz.replay_row(cfg, 0)
print(f"replay row 0: {orig.nmse_db!r} -> {new.nmse_db!r} "
      f"({'bit-exact' if float(orig.nmse_db) == float(new.nmse_db) else 'MISMATCH'})")
