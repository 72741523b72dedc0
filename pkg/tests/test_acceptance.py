"""Release gate: one test per binding claim, tolerances written out literally.

The first five checks are fast oracle and equivalence properties.  The
desk-scale sweep behind the `desk_run` fixture costs roughly twelve minutes
on one core and feeds the paired-experiment, replay, and figure checks from
a single run.  The full-array reference point is opt-in via
CHANEST_FULL_SCALE=1 and is not part of the normal suite.
"""

import math
import os
import sys
import time
from pathlib import Path
from types import SimpleNamespace

import numpy as np
import pytest

import test_channel_sim as sim_checks
import test_gamp as gamp_checks
import test_input_channel as input_oracle
import test_output_channel as output_oracle
import test_param_estimation as param_oracle

from chanest import cli
from chanest import harness as hz
from chanest.channel_sim import ChannelConfig, assemble_operator, make_training_block
from chanest.gamp import GampOptions
from chanest.input_channel import posterior_x_moments, prior_log_evidence
from chanest.output_channel import ParamTheta, log_bin_probability, posterior_z_moments
from chanest.param_estimation import OuterLoopOptions, update_theta

REPO = Path(__file__).resolve().parent.parent
DESK_CONFIG = REPO / "configs" / "desk.cfg"


def test_output_channel_matches_quadrature_oracle():
    # 1000 random (bin, p_hat, tau_p, tau_w) tuples, variances in [1e-3, 10]:
    # moments to 1e-8 absolute, cell log-mass to 1e-10, inside 10 s
    tuples = output_oracle.random_tuples(1000, seed=20260822)
    start = time.perf_counter()
    worst_mean = worst_var = worst_logp = 0.0
    for spec, y, p_hat, tau_p, tau_w in tuples:
        z_hat, tau_z = posterior_z_moments(y, p_hat, tau_p, ParamTheta(tau_w=tau_w))
        logp = log_bin_probability(y, p_hat, tau_p, tau_w)
        thr = spec.thresholds
        lm_r, mean_r, var_r = output_oracle.oracle_component_stats(
            thr[y.re_idx[0] - 1], thr[y.re_idx[0]], p_hat[0].real, tau_p / 2, tau_w / 2)
        lm_i, mean_i, var_i = output_oracle.oracle_component_stats(
            thr[y.im_idx[0] - 1], thr[y.im_idx[0]], p_hat[0].imag, tau_p / 2, tau_w / 2)
        worst_mean = max(worst_mean, abs(z_hat[0].real - mean_r),
                         abs(z_hat[0].imag - mean_i))
        worst_var = max(worst_var, abs(tau_z - (var_r + var_i)))
        worst_logp = max(worst_logp, abs(logp[0] - (lm_r + lm_i)))
    elapsed = time.perf_counter() - start
    assert worst_mean < 1e-8, f"posterior mean off by {worst_mean:.2e}"
    assert worst_var < 1e-8, f"posterior variance off by {worst_var:.2e}"
    assert worst_logp < 1e-10, f"cell log-mass off by {worst_logp:.2e}"
    assert elapsed < 10.0, f"took {elapsed:.1f} s"


def test_input_channel_matches_grid_oracle():
    # 100 random (r_hat, tau_r, prior) tuples with up to 3 mixture components:
    # denoiser moments and log-evidence to 1e-5 absolute, inside 60 s
    rng = np.random.default_rng(20260822)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        lam = input_oracle.random_lambda(rng)
        r = complex(rng.normal(0, 1.5), rng.normal(0, 1.5))
        tau_r = float(10.0 ** rng.uniform(-1.5, 0.5))
        x_hat, tau_x, _ = posterior_x_moments(np.array([r]), tau_r, lam)
        ev = prior_log_evidence(np.array([r]), tau_r, lam)[0]
        mean, var, _, logz = input_oracle.adaptive_grid_posterior(r, tau_r, lam)
        worst = max(worst, abs(x_hat[0] - mean), abs(tau_x - var), abs(ev - logz))
    elapsed = time.perf_counter() - start
    assert worst < 1e-5, f"worst deviation {worst:.2e}"
    assert elapsed < 60.0, f"took {elapsed:.1f} s"


def test_unquantized_gamp_matches_lmmse():
    # AWGN output, single-Gaussian prior, random 64x32 operator: the fixed
    # point must equal the closed form to 1e-4 relative on 20 seeds, in 10 s
    start = time.perf_counter()
    for seed in range(20):
        res, ref = gamp_checks.run_lmmse_case(64, 32, seed=seed)
        rel = np.linalg.norm(res.x_hat - ref) / np.linalg.norm(ref)
        assert rel < 1e-4, f"seed {seed}: relative error {rel:.2e}"
    elapsed = time.perf_counter() - start
    assert elapsed < 10.0, f"took {elapsed:.1f} s"


def test_noise_variance_newton_matches_grid():
    # Newton maximizer lands within one cell of a 2000-point log grid on 50
    # quantized instances; the 3-bit synthetic (true 0.1, 1e4 samples,
    # tau_p = 1e-6) estimates into [0.08, 0.12]; all inside 60 s
    start = time.perf_counter()
    rng = np.random.default_rng(3)
    cell = math.log(1e2 / 1e-6) / 1999
    for trial in range(50):
        m = 200
        z = (rng.standard_normal(m) + 1j * rng.standard_normal(m)) * rng.uniform(0.5, 2)
        tau_true = float(10.0 ** rng.uniform(-2, 0))
        bits = int(rng.integers(1, 4))
        y = param_oracle.make_quantized(z, tau_true, bits, seed=100 + trial)
        tau_p = tau_true * float(10.0 ** rng.uniform(-2, -0.7))
        p_hat = z + (rng.standard_normal(m) + 1j * rng.standard_normal(m)) * np.sqrt(tau_p / 2)
        theta = update_theta(y, p_hat, tau_p, ParamTheta(tau_w=0.05), OuterLoopOptions())
        _, grid_best = param_oracle.grid_search_tau_w(y, p_hat, tau_p)
        off = abs(math.log(theta.tau_w) - math.log(grid_best))
        assert off <= cell + 1e-12, (
            f"instance {trial}: newton {theta.tau_w:.4g} vs grid {grid_best:.4g}")

    rng = np.random.default_rng(1)
    z = rng.standard_normal(10_000) + 1j * rng.standard_normal(10_000)
    y = param_oracle.make_quantized(z, 0.1, bits=3, seed=2)
    theta = update_theta(y, z, 1e-6, ParamTheta(tau_w=1.0), OuterLoopOptions())
    assert 0.08 <= theta.tau_w <= 0.12, f"3-bit synthetic estimate {theta.tau_w:.4f}"
    elapsed = time.perf_counter() - start
    assert elapsed < 60.0, f"took {elapsed:.1f} s"


def test_structured_operator_matches_dense():
    # matrix-free operator vs direct physics assembly at 4x4 arrays, 2 taps,
    # 8 training steps, to 1e-10; adjoint identity at desk scale to 1e-10
    cfg = ChannelConfig(n_t=4, n_r=4, taps=2, n_clusters=1, paths_per_cluster=2,
                        n_train=8, seed=8)
    block = make_training_block(cfg.n_t, cfg.n_train, seed=9)
    op = assemble_operator(block, cfg)
    a = sim_checks.dense_from_physics(block, cfg)
    rng = np.random.default_rng(10)
    for _ in range(5):
        x = rng.standard_normal(op.cols) + 1j * rng.standard_normal(op.cols)
        u = rng.standard_normal(op.rows) + 1j * rng.standard_normal(op.rows)
        assert np.max(np.abs(op.forward(x) - a @ x)) < 1e-10
        assert np.max(np.abs(op.adjoint(u) - a.conj().T @ u)) < 1e-10

    desk = ChannelConfig(n_t=16, n_r=16, taps=8, n_train=512, seed=12)
    big = assemble_operator(make_training_block(16, 512, seed=13), desk)
    x = rng.standard_normal(big.cols) + 1j * rng.standard_normal(big.cols)
    u = rng.standard_normal(big.rows) + 1j * rng.standard_normal(big.rows)
    lhs = np.vdot(u, big.forward(x))
    rhs = np.vdot(big.adjoint(u), x)
    assert abs(lhs - rhs) <= 1e-10 * max(abs(lhs), 1.0)


@pytest.fixture(scope="module")
def desk_run(tmp_path_factory):
    """The configs/desk.cfg sweep, run once and shared by the checks below."""
    out_dir = tmp_path_factory.mktemp("desk")
    out_csv = out_dir / "results.csv"
    cfg = hz.parse_config(str(DESK_CONFIG), overrides=[f"run.output={out_csv}"])
    start = time.perf_counter()
    records = hz.run_experiment(cfg)
    wall = time.perf_counter() - start
    summary = hz.summarize(records)
    means = {(row["bits"], row["snr_db"], row["method"]): row["nmse_db"]
             for row in summary}
    return SimpleNamespace(cfg=cfg, records=records, summary=summary,
                           csv_path=out_csv, wall=wall, means=means)


def test_desk_scale_paired_experiment(desk_run):
    # 16x16, 8 taps, 512 training steps, 20 paired trials over SNR
    # {0,10,20,30,40} dB and 1-3 bits, 30 minute budget:
    #   (a) amp-pe mean NMSE within 1.5 dB of amp-oracle in every cell
    #   (b) 1-bit, SNR <= 10 dB: amp-pe strictly beats ls and iht
    #   (c) SNR 20 dB: amp-pe mean NMSE improves with every added bit
    assert desk_run.wall < 1800.0, f"sweep took {desk_run.wall / 60.0:.1f} min"
    errs = sum(isinstance(r.nmse_db, str) for r in desk_run.records)
    assert errs == 0, f"{errs} trial cells errored"
    means = desk_run.means
    for bits in (1, 2, 3):
        for snr in (0.0, 10.0, 20.0, 30.0, 40.0):
            gap = means[(bits, snr, "amp-pe")] - means[(bits, snr, "amp-oracle")]
            assert gap <= 1.5, f"{bits}-bit {snr:g} dB: {gap:+.2f} dB above oracle"
    for snr in (0.0, 10.0):
        pe = means[(1, snr, "amp-pe")]
        assert pe < means[(1, snr, "ls")], f"1-bit {snr:g} dB: ls not beaten"
        assert pe < means[(1, snr, "iht")], f"1-bit {snr:g} dB: iht not beaten"
    curve = [means[(b, 20.0, "amp-pe")] for b in (1, 2, 3)]
    assert curve[0] > curve[1] > curve[2], f"20 dB bit sweep not monotone: {curve}"


@pytest.mark.skipif(os.environ.get("CHANEST_FULL_SCALE") != "1",
                    reason="full-array run, about a minute per trial; opt in "
                           "with CHANEST_FULL_SCALE=1")
def test_full_array_one_bit_reference_point():
    # 64x64 arrays, 16 taps, 2048 training steps (65536 unknowns), 1-bit,
    # SNR 10 dB: two-trial mean NMSE inside -10.98 +- 2 dB
    cfg = hz.ExperimentConfig(
        channel=ChannelConfig(),
        bits_list=[1], snr_list_db=[10.0], methods=["amp-pe"],
        trials=2, base_seed=2026, output_path="",
        gamp=GampOptions(max_inner_iters=40, damping_factor=0.7,
                         tol_rel_change=1e-5),
        outer=OuterLoopOptions(max_outer_iters=10, param_tol=1e-3),
    )
    records = hz.run_experiment(cfg)
    lin = [10.0 ** (float(r.nmse_db) / 10.0) for r in records]
    mean_db = 10.0 * math.log10(sum(lin) / len(lin))
    assert -12.98 <= mean_db <= -8.98, f"reference point came out {mean_db:.2f} dB"


def test_replay_is_bit_exact(desk_run, capsys):
    # `chanest replay` on a stored row must reproduce nmse_db to the digit;
    # checked on the first row of each method plus the last amp-pe row
    picks = {}
    for i, rec in enumerate(desk_run.records):
        picks.setdefault(rec.method, i)
    picks["last amp-pe"] = max(
        i for i, r in enumerate(desk_run.records) if r.method == "amp-pe")
    for label, idx in sorted(picks.items(), key=lambda kv: kv[1]):
        rc = cli.main(["replay", "--config", str(DESK_CONFIG),
                       "--override", f"run.output={desk_run.csv_path}",
                       "--row", str(idx)])
        out = capsys.readouterr().out
        assert rc == 0 and "bit-exact" in out, f"row {idx} ({label}): {out!r}"


def test_figure_pipeline_renders_and_reruns_identically(desk_run, tmp_path):
    # the plots frontend consumes only the summary CSV and channel artifacts;
    # it must render 3 NMSE panels plus 1 comparison figure, and a rerun
    # must be byte-identical SVG
    frontend = str(REPO / "frontend")
    if frontend not in sys.path:
        sys.path.insert(0, frontend)
    import plots

    summary_csv = tmp_path / "summary.csv"
    hz.write_summary_csv(str(summary_csv), desk_run.summary)
    truth = tmp_path / "truth.chan"
    estimate = tmp_path / "estimate.chan"
    hz.dump_channel_pair(desk_run.cfg, 0, 1, 10.0, "amp-pe",
                         str(truth), str(estimate))

    def render(tag):
        outdir = tmp_path / tag
        outdir.mkdir()
        spec = plots.PlotSpec(input_csv=str(summary_csv), output_dir=str(outdir))
        written = list(plots.render_nmse_curves(spec))
        written.append(plots.render_channel_compare(
            str(truth), str(estimate), str(outdir / "channel.svg")))
        return written

    first = render("a")
    assert sorted(Path(p).name for p in first) == [
        "channel.svg", "nmse_1bit.svg", "nmse_2bit.svg", "nmse_3bit.svg"]
    second = render("b")
    for pa, pb in zip(first, second):
        assert Path(pa).read_bytes() == Path(pb).read_bytes(), (
            f"{Path(pa).name} changed between reruns")
