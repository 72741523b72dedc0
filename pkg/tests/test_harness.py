"""Sweep driver tests: config parsing, pairing, CSV round trips, replay, CLI.

Everything runs on a toy geometry (4x4 array, 2 taps, 32-symbol training) so
the whole file stays in the seconds range.  ls and iht are the workhorse
methods here; the amp paths get one single-cell check each since their
numerics are covered elsewhere.
"""

import csv
import itertools

import numpy as np
import pytest

import chanest.harness as hz
from chanest.cli import main
from chanest.errors import ChanestError, ConfigError, EmptyInput
from chanest.harness import (
    CSV_COLUMNS,
    ExperimentConfig,
    TrialRecord,
    parse_config,
    read_records,
    realization_digest,
    replay_row,
    run_experiment,
    run_single_cell,
    summarize,
    write_records_csv,
    write_summary_csv,
)


def make_config(tmp_path, *, bits="1,2", snr="10,20", methods="ls,iht",
                trials=2, seed=11, extra=()):
    out_path = tmp_path / "results.csv"
    lines = [
        "# toy sweep",
        "channel.n_t = 4",
        "channel.n_r = 4",
        "channel.taps = 2",
        "channel.n_clusters = 2",
        "channel.paths_per_cluster = 2",
        "channel.n_train = 32",
        f"run.bits = {bits}",
        f"run.snr_db = {snr}",
        f"run.methods = {methods}",
        f"run.trials = {trials}",
        f"run.base_seed = {seed}",
        f"run.output = {out_path}",
        "iht.sparsity = 4",
        "iht.max_iters = 60",
        "iht.sweep = false",
        "ls.max_cg_iters = 60",
    ]
    lines += list(extra)
    path = tmp_path / "sweep.cfg"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path, out_path


def synth_record(trial=0, bits=1, snr=10.0, method="ls", nmse=-10.0,
                 tau_w=None, kappa=None):
    return TrialRecord(trial=trial, bits=bits, snr_db=snr, method=method,
                       nmse_db=nmse, iterations=7, runtime_ms=12.5,
                       tau_w_hat=tau_w, kappa_hat=kappa, converged=True,
                       seed=123456789)


# ---------------------------------------------------------------- config


def test_parse_config_reads_all_sections(tmp_path):
    path, out_path = make_config(tmp_path)
    cfg = parse_config(str(path))
    assert cfg.channel.n_t == 4 and cfg.channel.n_r == 4
    assert cfg.channel.taps == 2 and cfg.channel.n_train == 32
    assert cfg.bits_list == [1, 2]
    assert cfg.snr_list_db == [10.0, 20.0]
    assert cfg.methods == ["ls", "iht"]
    assert cfg.trials == 2 and cfg.base_seed == 11
    assert cfg.output_path == str(out_path)
    assert cfg.iht.sparsity == 4 and cfg.iht.max_iters == 60
    assert cfg.iht_sweep is False
    assert cfg.ls_max_cg_iters == 60
    assert cfg.quantizer_override is None


def test_parse_config_overrides_win(tmp_path):
    path, _ = make_config(tmp_path)
    cfg = parse_config(str(path), ["run.trials=5", "gamp.damping_factor=0.5"])
    assert cfg.trials == 5
    assert cfg.gamp.damping_factor == 0.5


def test_parse_config_rejects_unknown_key(tmp_path):
    path, _ = make_config(tmp_path, extra=("run.bogus = 1",))
    with pytest.raises(ConfigError, match="run.bogus"):
        parse_config(str(path))


def test_parse_config_bad_value_names_the_field(tmp_path):
    path, _ = make_config(tmp_path, extra=("run.trials = soon",))
    with pytest.raises(ConfigError, match="run.trials"):
        parse_config(str(path))


def test_parse_config_rejects_non_kv_line(tmp_path):
    path = tmp_path / "broken.cfg"
    path.write_text("channel.n_t 4\n", encoding="utf-8")
    with pytest.raises(ConfigError, match=":1:"):
        parse_config(str(path))


def test_parse_config_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        parse_config(str(tmp_path / "nope.cfg"))


def test_parse_config_kappa_bounds_must_pair(tmp_path):
    path, _ = make_config(tmp_path, extra=("outer.kappa_lo = 0.001",))
    with pytest.raises(ConfigError, match="kappa"):
        parse_config(str(path))


def test_parse_config_quantizer_override(tmp_path):
    extra = ("quantizer.bits = 1",
             "quantizer.inner_thresholds = 0.0",
             "quantizer.symbols = -1.0,1.0")
    path, _ = make_config(tmp_path, bits="1", extra=extra)
    cfg = parse_config(str(path))
    spec = cfg.quantizer_override
    assert spec is not None and spec.bits == 1
    assert np.allclose(spec.symbols, [-1.0, 1.0])

    # same override with two bit depths in the sweep is contradictory
    path2, _ = make_config(tmp_path, bits="1,2", extra=extra)
    with pytest.raises(ConfigError, match="single run.bits"):
        parse_config(str(path2))


def test_parse_config_incomplete_quantizer(tmp_path):
    path, _ = make_config(tmp_path, bits="1", extra=("quantizer.bits = 1",))
    with pytest.raises(ConfigError, match="missing"):
        parse_config(str(path))


def test_experiment_config_validation():
    chan = hz.ChannelConfig(n_t=4, n_r=4, taps=2, n_clusters=2,
                            paths_per_cluster=2, n_train=32)
    with pytest.raises(ConfigError, match="trials"):
        ExperimentConfig(channel=chan, trials=0)
    with pytest.raises(ConfigError, match="nonempty"):
        ExperimentConfig(channel=chan, bits_list=[])
    with pytest.raises(ConfigError, match="unknown method"):
        ExperimentConfig(channel=chan, methods=["ls", "omp"])


# ---------------------------------------------------------------- sweep shape


def test_row_count_and_order(tmp_path):
    path, out_path = make_config(tmp_path)
    cfg = parse_config(str(path))
    records = run_experiment(cfg)
    assert len(records) == 2 * 2 * 2 * 2
    got = [(r.trial, r.bits, r.snr_db, r.method) for r in records]
    want = [(t, b, s, m) for t, b, s, m in itertools.product(
        range(2), [1, 2], [10.0, 20.0], ["ls", "iht"])]
    assert got == want

    with open(out_path, newline="", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    assert lines[0] == ",".join(CSV_COLUMNS)
    assert len(lines) == 1 + len(records)


def test_single_cell_config_gives_one_record(tmp_path):
    path, _ = make_config(tmp_path, bits="1", snr="10", methods="ls", trials=1)
    records = run_experiment(parse_config(str(path)))
    assert len(records) == 1
    rec = records[0]
    assert (rec.trial, rec.bits, rec.snr_db, rec.method) == (0, 1, 10.0, "ls")
    assert isinstance(rec.nmse_db, float)
    assert rec.tau_w_hat is None and rec.kappa_hat is None


def test_trial_seed_column(tmp_path):
    path, _ = make_config(tmp_path)
    records = run_experiment(parse_config(str(path)))
    seeds = {}
    for rec in records:
        seeds.setdefault(rec.trial, set()).add(rec.seed)
    assert all(len(v) == 1 for v in seeds.values())
    assert seeds[0] != seeds[1]


def test_realizations_paired_across_cells(tmp_path):
    path, _ = make_config(tmp_path)
    cfg = parse_config(str(path))
    _, x_a, _, _ = run_single_cell(cfg, 0, 1, 10.0, "ls")
    _, x_b, _, _ = run_single_cell(cfg, 0, 2, 20.0, "iht")
    _, x_c, _, _ = run_single_cell(cfg, 1, 1, 10.0, "ls")
    assert np.array_equal(x_a, x_b)
    assert not np.array_equal(x_a, x_c)

    d1 = hz._trial_data(cfg, 0)
    d2 = hz._trial_data(cfg, 0)
    assert realization_digest(d1[2], d1[5]) == realization_digest(d2[2], d2[5])
    d3 = hz._trial_data(cfg, 1)
    assert realization_digest(d1[2], d1[5]) != realization_digest(d3[2], d3[5])


def test_method_error_becomes_sentinel_row(tmp_path, monkeypatch):
    path, _ = make_config(tmp_path, bits="1", snr="10", trials=1)
    cfg = parse_config(str(path))
    real = hz._run_method

    def flaky(cfg_, method, *args):
        if method == "iht":
            raise ChanestError("forced failure")
        return real(cfg_, method, *args)

    monkeypatch.setattr(hz, "_run_method", flaky)
    records = run_experiment(cfg)
    by_method = {r.method: r for r in records}
    assert by_method["iht"].nmse_db == "err"
    assert by_method["iht"].converged is False
    assert isinstance(by_method["ls"].nmse_db, float)

    # sentinel survives the CSV round trip
    reread = read_records(cfg.output_path)
    assert reread[[r.method for r in reread].index("iht")].nmse_db == "err"


def test_amp_pe_cell_populates_param_columns(tmp_path):
    extra = ("gamp.max_inner_iters = 40", "outer.max_outer_iters = 4")
    path, _ = make_config(tmp_path, bits="2", snr="20", methods="amp-pe",
                          trials=1, extra=extra)
    cfg = parse_config(str(path))
    rec, x, x_hat, chan = run_single_cell(cfg, 0, 2, 20.0, "amp-pe")
    assert rec.tau_w_hat is not None and rec.tau_w_hat > 0
    assert rec.kappa_hat is not None and 0 < rec.kappa_hat <= 1
    assert x_hat.shape == x.shape
    row = hz._record_to_row(rec)
    assert row[7] != "" and row[8] != ""


def test_amp_oracle_cell_runs(tmp_path):
    extra = ("gamp.max_inner_iters = 40",)
    path, _ = make_config(tmp_path, bits="2", snr="20", methods="amp-oracle",
                          trials=1, extra=extra)
    cfg = parse_config(str(path))
    rec, _, _, _ = run_single_cell(cfg, 0, 2, 20.0, "amp-oracle")
    assert isinstance(rec.nmse_db, float) and np.isfinite(rec.nmse_db)
    assert rec.tau_w_hat is None


# ---------------------------------------------------------------- summarize


def test_summarize_single_record_passthrough():
    rows = summarize([synth_record(nmse=-17.25)])
    assert len(rows) == 1
    assert rows[0]["bits"] == 1 and rows[0]["method"] == "ls"
    assert rows[0]["nmse_db"] == pytest.approx(-17.25, abs=1e-12)
    assert rows[0]["n_trials"] == 1 and rows[0]["n_errors"] == 0


def test_summarize_averages_in_linear_domain():
    # -10 dB and -30 dB are 0.1 and 0.001; their mean is 0.0505
    recs = [synth_record(trial=0, nmse=-10.0), synth_record(trial=1, nmse=-30.0)]
    rows = summarize(recs)
    want = 10.0 * np.log10(0.0505)
    assert rows[0]["nmse_db"] == pytest.approx(want, abs=1e-12)
    assert abs(rows[0]["nmse_db"] - (-20.0)) > 6.0


def test_summarize_counts_errors_separately():
    recs = [synth_record(trial=0, nmse=-10.0),
            synth_record(trial=1, nmse="err"),
            synth_record(trial=2, nmse=-10.0)]
    rows = summarize(recs)
    assert rows[0]["n_trials"] == 2 and rows[0]["n_errors"] == 1
    assert rows[0]["nmse_db"] == pytest.approx(-10.0, abs=1e-12)


def test_summarize_preserves_first_seen_order():
    recs = [synth_record(bits=2, method="iht"),
            synth_record(bits=1, method="ls"),
            synth_record(bits=2, method="iht", trial=1)]
    rows = summarize(recs)
    assert [(r["bits"], r["method"]) for r in rows] == [(2, "iht"), (1, "ls")]


def test_summarize_empty_raises():
    with pytest.raises(EmptyInput):
        summarize([])


# ---------------------------------------------------------------- CSV round trip


def test_records_csv_round_trip(tmp_path):
    recs = [synth_record(nmse=-12.340000000000001, tau_w=0.125, kappa=0.05),
            synth_record(trial=1, method="iht", nmse="err"),
            synth_record(trial=2, bits=3, snr=0.0, nmse=-1.0)]
    path = tmp_path / "rt.csv"
    write_records_csv(str(path), recs)
    back = read_records(str(path))
    assert back == recs


def test_read_records_rejects_wrong_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("trial,bits\n0,1\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="expected columns"):
        read_records(str(path))


def test_write_summary_csv(tmp_path):
    rows = summarize([synth_record(nmse=-17.25)])
    path = tmp_path / "summary.csv"
    write_summary_csv(str(path), rows)
    with open(path, newline="", encoding="utf-8") as fh:
        parsed = list(csv.reader(fh))
    assert parsed[0] == ["bits", "snr_db", "method", "nmse_db", "n_trials", "n_errors"]
    assert parsed[1][0] == "1" and parsed[1][2] == "ls"
    assert float(parsed[1][3]) == pytest.approx(-17.25, abs=1e-12)


# ---------------------------------------------------------------- replay


def test_replay_row_is_bit_exact(tmp_path):
    path, _ = make_config(tmp_path, trials=1)
    cfg = parse_config(str(path))
    run_experiment(cfg)
    for idx in (0, 3):
        orig, new = replay_row(cfg, idx)
        assert repr(float(orig.nmse_db)) == repr(float(new.nmse_db))
        assert orig.seed == new.seed


def test_replay_row_range_and_error_rows(tmp_path):
    path, _ = make_config(tmp_path, trials=1)
    cfg = parse_config(str(path))
    write_records_csv(cfg.output_path, [synth_record(nmse="err")])
    with pytest.raises(ConfigError, match="out of range"):
        replay_row(cfg, 5)
    with pytest.raises(ConfigError, match="error row"):
        replay_row(cfg, 0)


# ---------------------------------------------------------------- workers


def test_worker_pool_matches_serial(tmp_path, monkeypatch):
    path, out_path = make_config(tmp_path, bits="1", methods="ls")
    cfg = parse_config(str(path))
    monkeypatch.setenv("CHANEST_THREADS", "1")
    serial = run_experiment(cfg)
    serial_csv = out_path.read_text(encoding="utf-8")
    monkeypatch.setenv("CHANEST_THREADS", "2")
    pooled = run_experiment(cfg)
    pooled_csv = out_path.read_text(encoding="utf-8")

    def strip_runtime(rec):
        return (rec.trial, rec.bits, rec.snr_db, rec.method, rec.nmse_db,
                rec.iterations, rec.tau_w_hat, rec.kappa_hat, rec.converged,
                rec.seed)

    assert [strip_runtime(r) for r in serial] == [strip_runtime(r) for r in pooled]

    def drop_runtime_col(text):
        rows = [line.split(",") for line in text.splitlines()]
        return [row[:6] + row[7:] for row in rows]

    assert drop_runtime_col(serial_csv) == drop_runtime_col(pooled_csv)


# ---------------------------------------------------------------- CLI


def test_cli_run_summarize_replay(tmp_path, capsys):
    path, out_path = make_config(tmp_path, bits="1", snr="10", methods="ls",
                                 trials=1)
    assert main(["run", "--config", str(path), "--quiet"]) == 0
    out = capsys.readouterr().out
    assert "wrote 1 rows" in out
    assert out_path.exists()

    sum_path = tmp_path / "summary.csv"
    assert main(["summarize", "--in", str(out_path), "--out", str(sum_path)]) == 0
    capsys.readouterr()
    with open(sum_path, newline="", encoding="utf-8") as fh:
        assert len(list(csv.reader(fh))) == 2

    assert main(["replay", "--config", str(path), "--row", "0"]) == 0
    assert "bit-exact" in capsys.readouterr().out


def test_cli_replay_detects_tampering(tmp_path, capsys):
    path, out_path = make_config(tmp_path, bits="1", snr="10", methods="ls",
                                 trials=1)
    assert main(["run", "--config", str(path), "--quiet"]) == 0
    lines = out_path.read_text(encoding="utf-8").splitlines()
    cells = lines[1].split(",")
    cells[4] = "0.0"
    lines[1] = ",".join(cells)
    out_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    assert main(["replay", "--config", str(path), "--row", "0"]) == 1
    assert "MISMATCH" in capsys.readouterr().out


def test_cli_config_error_exit_code(tmp_path, capsys):
    assert main(["run", "--config", str(tmp_path / "nope.cfg")]) == 2
    assert "error:" in capsys.readouterr().err

    path, _ = make_config(tmp_path, bits="1", snr="10", methods="ls", trials=1)
    assert main(["run", "--config", str(path), "--quiet"]) == 0
    capsys.readouterr()
    assert main(["replay", "--config", str(path), "--row", "99"]) == 2


def test_cli_override_flag(tmp_path, capsys):
    path, out_path = make_config(tmp_path, bits="1", snr="10", methods="ls",
                                 trials=1)
    assert main(["run", "--config", str(path), "--quiet",
                 "--override", "run.trials=2"]) == 0
    assert "wrote 2 rows" in capsys.readouterr().out
