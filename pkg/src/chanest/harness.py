"""Experiment driver: config parsing, paired sweeps, CSV records, summaries.

A trial owns one channel/training/noise realization; every (bits, snr,
method) cell inside it reuses the same draws so NMSE differences are method
effects, not sampling noise.  All randomness derives from
SeedSequence([base_seed, trial]), making any row exactly replayable from the
config alone.  Rows are written incrementally in (trial, bits, snr, method)
order regardless of worker completion order.
"""

from __future__ import annotations

import csv
import hashlib
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .baselines import IhtOptions, amp_oracle, iht, least_squares
from .channel_sim import (
    ChannelConfig,
    assemble_operator,
    generate_channel,
    make_training_block,
    nmse_db,
    save_channel_artifact,
)
from .errors import ChanestError, ConfigError, EmptyInput
from .gamp import GampOptions
from .input_channel import fit_signal_prior
from .output_channel import ParamTheta, QuantizerSpec, default_quantizer, quantize
from .param_estimation import OuterLoopOptions, estimate_joint

__all__ = [
    "ExperimentConfig",
    "TrialRecord",
    "parse_config",
    "run_experiment",
    "summarize",
    "read_records",
    "write_records_csv",
    "write_summary_csv",
    "replay_row",
    "run_single_cell",
    "dump_channel_pair",
    "CSV_COLUMNS",
]

CSV_COLUMNS = [
    "trial",
    "bits",
    "snr_db",
    "method",
    "nmse_db",
    "iterations",
    "runtime_ms",
    "tau_w_hat",
    "kappa_hat",
    "converged",
    "seed",
]

_METHODS = ("amp-pe", "amp-oracle", "ls", "iht")


@dataclass
class ExperimentConfig:
    channel: ChannelConfig
    bits_list: list = field(default_factory=lambda: [1, 2, 3])
    snr_list_db: list = field(default_factory=lambda: [0.0, 10.0, 20.0, 30.0, 40.0])
    methods: list = field(default_factory=lambda: list(_METHODS))
    trials: int = 1
    base_seed: int = 0
    output_path: str = "results.csv"
    gamp: GampOptions = field(default_factory=GampOptions)
    outer: OuterLoopOptions = field(default_factory=OuterLoopOptions)
    iht: IhtOptions = field(default_factory=lambda: IhtOptions(sparsity=1))
    iht_sweep: bool = True
    ls_max_cg_iters: int = 200
    ls_tol: float = 1e-6
    n_components: int = 4
    quantizer_override: QuantizerSpec | None = None

    def __post_init__(self) -> None:
        if self.trials < 1:
            raise ConfigError("run.trials: must be >= 1")
        for name, lst in (("run.bits", self.bits_list), ("run.snr_db", self.snr_list_db), ("run.methods", self.methods)):
            if not lst:
                raise ConfigError(f"{name}: must be nonempty")
        bad = [m for m in self.methods if m not in _METHODS]
        if bad:
            raise ConfigError(f"run.methods: unknown method(s) {bad}; allowed {list(_METHODS)}")
        if self.quantizer_override is not None and len(self.bits_list) != 1:
            raise ConfigError("quantizer.*: explicit quantizer override requires a single run.bits entry")


@dataclass
class TrialRecord:
    trial: int
    bits: int
    snr_db: float
    method: str
    nmse_db: object  # float, or the string "err"
    iterations: int
    runtime_ms: float
    tau_w_hat: float | None
    kappa_hat: float | None
    converged: bool
    seed: int


def _convert(field_name: str, raw: str, kind: str):
    raw = raw.strip()
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            low = raw.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == "int_list":
            return [int(v.strip()) for v in raw.split(",") if v.strip()]
        if kind == "float_list":
            return [float(v.strip()) for v in raw.split(",") if v.strip()]
        if kind == "str_list":
            return [v.strip() for v in raw.split(",") if v.strip()]
        return raw
    except ValueError as exc:
        raise ConfigError(f"{field_name}: cannot parse '{raw}' as {kind}") from exc


_SCHEMA = {
    "channel.n_t": ("int", ("channel", "n_t")),
    "channel.n_r": ("int", ("channel", "n_r")),
    "channel.taps": ("int", ("channel", "taps")),
    "channel.n_clusters": ("int", ("channel", "n_clusters")),
    "channel.paths_per_cluster": ("int", ("channel", "paths_per_cluster")),
    "channel.angle_spread_deg": ("float", ("channel", "angle_spread_deg")),
    "channel.n_train": ("int", ("channel", "n_train")),
    "run.bits": ("int_list", ("root", "bits_list")),
    "run.snr_db": ("float_list", ("root", "snr_list_db")),
    "run.methods": ("str_list", ("root", "methods")),
    "run.trials": ("int", ("root", "trials")),
    "run.base_seed": ("int", ("root", "base_seed")),
    "run.output": ("str", ("root", "output_path")),
    "gamp.max_inner_iters": ("int", ("gamp", "max_inner_iters")),
    "gamp.damping_factor": ("float", ("gamp", "damping_factor")),
    "gamp.mean_removal": ("bool", ("gamp", "mean_removal")),
    "gamp.tol_rel_change": ("float", ("gamp", "tol_rel_change")),
    "gamp.variance_floor": ("float", ("gamp", "variance_floor")),
    "outer.max_outer_iters": ("int", ("outer", "max_outer_iters")),
    "outer.param_tol": ("float", ("outer", "param_tol")),
    "outer.tau_w_min": ("float", ("outer", "tau_w_min")),
    "outer.kappa_lo": ("float", ("outer", "kappa_lo")),
    "outer.kappa_hi": ("float", ("outer", "kappa_hi")),
    "outer.newton_max_steps": ("int", ("outer", "newton_max_steps")),
    "outer.newton_backtrack": ("float", ("outer", "newton_backtrack")),
    "iht.sparsity": ("int", ("iht", "sparsity")),
    "iht.step_size": ("str", ("iht", "step_size")),
    "iht.max_iters": ("int", ("iht", "max_iters")),
    "iht.tol": ("float", ("iht", "tol")),
    "iht.sweep": ("bool", ("root", "iht_sweep")),
    "ls.max_cg_iters": ("int", ("root", "ls_max_cg_iters")),
    "ls.tol": ("float", ("root", "ls_tol")),
    "amp.n_components": ("int", ("root", "n_components")),
    "quantizer.bits": ("int", ("quantizer", "bits")),
    "quantizer.inner_thresholds": ("float_list", ("quantizer", "inner")),
    "quantizer.symbols": ("float_list", ("quantizer", "symbols")),
}


def parse_config(path: str, overrides: list | None = None) -> ExperimentConfig:
    """Read the flat dotted-key config file, then apply key=value overrides."""
    pairs: list[tuple[str, str]] = []
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                stripped = line.strip()
                if not stripped or stripped.startswith("#"):
                    continue
                if "=" not in stripped:
                    raise ConfigError(f"{path}:{lineno}: expected 'key = value', got '{stripped}'")
                key, _, value = stripped.partition("=")
                pairs.append((key.strip(), value.strip()))
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override '{item}' must be key=value")
        key, _, value = item.partition("=")
        pairs.append((key.strip(), value.strip()))

    buckets: dict[str, dict] = {"channel": {}, "root": {}, "gamp": {}, "outer": {}, "iht": {}, "quantizer": {}}
    for key, raw in pairs:
        if key not in _SCHEMA:
            raise ConfigError(f"unknown config key '{key}'")
        kind, (bucket, name) = _SCHEMA[key]
        buckets[bucket][name] = _convert(key, raw, kind)

    try:
        channel = ChannelConfig(**{**{"n_t": 64, "n_r": 64, "taps": 16, "n_clusters": 4, "paths_per_cluster": 10, "angle_spread_deg": 7.5, "n_train": 2048, "seed": 0}, **buckets["channel"]})
    except ChanestError as exc:
        raise ConfigError(f"channel.*: {exc}") from exc
    try:
        gamp = GampOptions(**buckets["gamp"])
    except ChanestError as exc:
        raise ConfigError(f"gamp.*: {exc}") from exc
    outer_kw = dict(buckets["outer"])
    lo = outer_kw.pop("kappa_lo", None)
    hi = outer_kw.pop("kappa_hi", None)
    if (lo is None) != (hi is None):
        raise ConfigError("outer.kappa_lo/outer.kappa_hi: must be given together")
    if lo is not None:
        outer_kw["kappa_bounds"] = (lo, hi)
    try:
        outer = OuterLoopOptions(**outer_kw)
    except ChanestError as exc:
        raise ConfigError(f"outer.*: {exc}") from exc
    iht_kw = dict(buckets["iht"])
    default_sparsity = max(1, round(0.05 * channel.signal_dim))
    iht_kw.setdefault("sparsity", default_sparsity)
    if iht_kw.get("step_size", "auto") != "auto":
        iht_kw["step_size"] = _convert("iht.step_size", str(iht_kw["step_size"]), "float")
    try:
        iht_opts = IhtOptions(**iht_kw)
    except ChanestError as exc:
        raise ConfigError(f"iht.*: {exc}") from exc

    quant = buckets["quantizer"]
    override_spec = None
    if quant:
        missing = [k for k in ("bits", "inner", "symbols") if k not in quant]
        if missing:
            raise ConfigError(f"quantizer.*: incomplete override, missing {missing}")
        thresholds = np.concatenate(([-np.inf], np.asarray(quant["inner"], dtype=float), [np.inf]))
        try:
            override_spec = QuantizerSpec(bits=quant["bits"], thresholds=thresholds, symbols=np.asarray(quant["symbols"], dtype=float))
        except ChanestError as exc:
            raise ConfigError(f"quantizer.*: {exc}") from exc

    return ExperimentConfig(
        channel=channel,
        gamp=gamp,
        outer=outer,
        iht=iht_opts,
        quantizer_override=override_spec,
        **buckets["root"],
    )


def _trial_seeds(base_seed: int, trial: int):
    state = np.random.SeedSequence([base_seed, trial]).generate_state(4)
    return int(state[0]), int(state[1]), int(state[2]), int(state[3])


def _trial_data(cfg: ExperimentConfig, trial: int):
    """Deterministic per-trial realization shared by every cell and method."""
    record_seed, chan_seed, train_seed, noise_seed = _trial_seeds(cfg.base_seed, trial)
    chan = generate_channel(replace(cfg.channel, seed=chan_seed))
    block = make_training_block(cfg.channel.n_t, cfg.channel.n_train, train_seed)
    op = assemble_operator(block, cfg.channel)
    x = chan.vec()
    z = op.forward(x)
    power = float(np.sum(np.abs(z) ** 2)) / op.rows
    rng = np.random.default_rng(noise_seed)
    unit_noise = (rng.standard_normal(op.rows) + 1j * rng.standard_normal(op.rows)) / np.sqrt(2.0)
    return chan, op, x, z, power, unit_noise, record_seed


def realization_digest(x: np.ndarray, w: np.ndarray) -> str:
    """Checksum of a (signal, noise) realization, for pairing audits."""
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(x).tobytes())
    h.update(np.ascontiguousarray(w).tobytes())
    return h.hexdigest()[:16]


def _iht_sparsity_grid(cfg: ExperimentConfig) -> list:
    base = cfg.iht.sparsity
    if not cfg.iht_sweep:
        return [base]
    grid = sorted({max(1, int(round(f * base))) for f in (0.5, 1.0, 1.5, 2.0)})
    return grid


def _run_method(cfg, method, op, y, tau_w_true, lambda_star, x_true):
    """Returns (x_hat, iterations, converged, tau_w_hat, kappa_hat)."""
    if method == "amp-pe":
        est = estimate_joint(op, y, cfg.gamp, cfg.outer)
        return est.x_hat, est.inner_iterations_total, est.converged, est.theta_hat.tau_w, est.lambda_hat.kappa
    if method == "amp-oracle":
        res = amp_oracle(op, y, lambda_star, ParamTheta(tau_w=max(tau_w_true, 1e-30)), cfg.gamp)
        return res.x_hat, res.iterations_used, res.converged, None, None
    if method == "ls":
        x_hat = least_squares(op, y, None, cfg.ls_max_cg_iters, cfg.ls_tol)
        return x_hat, cfg.ls_max_cg_iters, True, None, None
    if method == "iht":
        best = None
        best_nmse = np.inf
        for k in _iht_sparsity_grid(cfg):
            cand = iht(op, y, None, replace(cfg.iht, sparsity=k))
            score = nmse_db(cand, x_true)
            if score < best_nmse:
                best, best_nmse = cand, score
        return best, cfg.iht.max_iters, True, None, None
    raise ConfigError(f"run.methods: unknown method '{method}'")


def _run_trial(cfg: ExperimentConfig, trial: int) -> list:
    chan, op, x, z, power, unit_noise, record_seed = _trial_data(cfg, trial)
    lambda_star = None
    if "amp-oracle" in cfg.methods:
        lambda_star = fit_signal_prior(x, cfg.n_components)
    cells = {}
    for snr in cfg.snr_list_db:
        tau_w = power * 10.0 ** (-float(snr) / 10.0)
        r = z + np.sqrt(tau_w) * unit_noise
        rms = np.sqrt(power + tau_w)
        for bits in cfg.bits_list:
            spec = cfg.quantizer_override or default_quantizer(bits, rms)
            cells[(bits, snr)] = (quantize(r, spec), tau_w)
    records = []
    for bits in cfg.bits_list:
        for snr in cfg.snr_list_db:
            y, tau_w = cells[(bits, snr)]
            for method in cfg.methods:
                start = time.perf_counter()
                try:
                    x_hat, iters, conv, tau_w_hat, kappa_hat = _run_method(
                        cfg, method, op, y, tau_w, lambda_star, x
                    )
                    score = nmse_db(x_hat, x)
                except (ChanestError, FloatingPointError, np.linalg.LinAlgError) as exc:
                    print(f"trial {trial} {method} {bits}-bit snr={snr}: {exc}", file=sys.stderr)
                    score, iters, conv, tau_w_hat, kappa_hat = "err", 0, False, None, None
                elapsed_ms = (time.perf_counter() - start) * 1e3
                records.append(
                    TrialRecord(
                        trial=trial,
                        bits=int(bits),
                        snr_db=float(snr),
                        method=method,
                        nmse_db=score,
                        iterations=int(iters),
                        runtime_ms=elapsed_ms,
                        tau_w_hat=tau_w_hat,
                        kappa_hat=kappa_hat,
                        converged=bool(conv),
                        seed=record_seed,
                    )
                )
    return records


def _record_to_row(rec: TrialRecord) -> list:
    return [
        rec.trial,
        rec.bits,
        repr(float(rec.snr_db)),
        rec.method,
        rec.nmse_db if isinstance(rec.nmse_db, str) else repr(float(rec.nmse_db)),
        rec.iterations,
        f"{rec.runtime_ms:.3f}",
        "" if rec.tau_w_hat is None else repr(float(rec.tau_w_hat)),
        "" if rec.kappa_hat is None else repr(float(rec.kappa_hat)),
        str(bool(rec.converged)),
        rec.seed,
    ]


def run_experiment(cfg: ExperimentConfig, progress: bool = False) -> list:
    """Run the full sweep; stream rows to cfg.output_path as trials finish.

    The worker count comes from CHANEST_THREADS (default 1); output order is
    independent of scheduling.
    """
    n_workers = max(1, int(os.environ.get("CHANEST_THREADS", "1")))
    writer = None
    handle = None
    if cfg.output_path:
        handle = open(cfg.output_path, "w", newline="", encoding="utf-8")
        writer = csv.writer(handle)
        writer.writerow(CSV_COLUMNS)
        handle.flush()
    all_records: list = []

    def emit(trial_records):
        all_records.extend(trial_records)
        if writer is not None:
            for rec in trial_records:
                writer.writerow(_record_to_row(rec))
            handle.flush()

    try:
        if n_workers == 1 or cfg.trials == 1:
            for trial in range(cfg.trials):
                if progress:
                    print(f"trial {trial + 1}/{cfg.trials}", file=sys.stderr)
                emit(_run_trial(cfg, trial))
        else:
            with ProcessPoolExecutor(max_workers=n_workers) as pool:
                futures = [pool.submit(_run_trial, cfg, t) for t in range(cfg.trials)]
                for trial, fut in enumerate(futures):
                    emit(fut.result())
                    if progress:
                        print(f"trial {trial + 1}/{cfg.trials}", file=sys.stderr)
    finally:
        if handle is not None:
            handle.close()
    return all_records


def summarize(records: list) -> list:
    """Mean NMSE per (bits, snr, method), averaged in the linear domain.

    Returns rows of dicts with keys bits, snr_db, method, nmse_db, n_trials,
    n_errors; cells appear in first-seen order of their key tuple.
    """
    if not records:
        raise EmptyInput("no records to summarize")
    order = []
    groups: dict = {}
    for rec in records:
        key = (rec.bits, rec.snr_db, rec.method)
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append(rec)
    rows = []
    for key in order:
        bits, snr, method = key
        lin = [10.0 ** (float(r.nmse_db) / 10.0) for r in groups[key] if not isinstance(r.nmse_db, str)]
        n_err = sum(1 for r in groups[key] if isinstance(r.nmse_db, str))
        mean_db = 10.0 * np.log10(max(np.mean(lin), 1e-30)) if lin else float("nan")
        rows.append(
            {
                "bits": bits,
                "snr_db": snr,
                "method": method,
                "nmse_db": mean_db,
                "n_trials": len(lin),
                "n_errors": n_err,
            }
        )
    return rows


def read_records(path: str) -> list:
    """Parse a results CSV back into TrialRecord objects."""
    records = []
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CSV_COLUMNS:
            raise ConfigError(f"{path}: expected columns {CSV_COLUMNS}, got {reader.fieldnames}")
        for row in reader:
            records.append(
                TrialRecord(
                    trial=int(row["trial"]),
                    bits=int(row["bits"]),
                    snr_db=float(row["snr_db"]),
                    method=row["method"],
                    nmse_db=row["nmse_db"] if row["nmse_db"] == "err" else float(row["nmse_db"]),
                    iterations=int(row["iterations"]),
                    runtime_ms=float(row["runtime_ms"]),
                    tau_w_hat=float(row["tau_w_hat"]) if row["tau_w_hat"] else None,
                    kappa_hat=float(row["kappa_hat"]) if row["kappa_hat"] else None,
                    converged=row["converged"] == "True",
                    seed=int(row["seed"]),
                )
            )
    return records


def write_records_csv(path: str, records: list) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for rec in records:
            writer.writerow(_record_to_row(rec))


def write_summary_csv(path: str, rows: list) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bits", "snr_db", "method", "nmse_db", "n_trials", "n_errors"])
        for row in rows:
            writer.writerow(
                [
                    row["bits"],
                    repr(float(row["snr_db"])),
                    row["method"],
                    repr(float(row["nmse_db"])),
                    row["n_trials"],
                    row["n_errors"],
                ]
            )


def run_single_cell(cfg: ExperimentConfig, trial: int, bits: int, snr_db: float, method: str):
    """Recompute one cell exactly as run_experiment would.

    Returns (record, x_true, x_hat, channel).  Used by replay and by the
    channel-artifact dump.
    """
    chan, op, x, z, power, unit_noise, record_seed = _trial_data(cfg, trial)
    lambda_star = fit_signal_prior(x, cfg.n_components) if method == "amp-oracle" else None
    tau_w = power * 10.0 ** (-float(snr_db) / 10.0)
    r = z + np.sqrt(tau_w) * unit_noise
    rms = np.sqrt(power + tau_w)
    spec = cfg.quantizer_override or default_quantizer(bits, rms)
    y = quantize(r, spec)
    start = time.perf_counter()
    x_hat, iters, conv, tau_w_hat, kappa_hat = _run_method(cfg, method, op, y, tau_w, lambda_star, x)
    elapsed_ms = (time.perf_counter() - start) * 1e3
    rec = TrialRecord(
        trial=trial,
        bits=int(bits),
        snr_db=float(snr_db),
        method=method,
        nmse_db=nmse_db(x_hat, x),
        iterations=int(iters),
        runtime_ms=elapsed_ms,
        tau_w_hat=tau_w_hat,
        kappa_hat=kappa_hat,
        converged=bool(conv),
        seed=record_seed,
    )
    return rec, x, x_hat, chan


def replay_row(cfg: ExperimentConfig, row_index: int):
    """Re-run the row_index-th data row of cfg's results CSV.

    Returns (original, replayed) records; bit-exact agreement means equal
    nmse_db strings.
    """
    records = read_records(cfg.output_path)
    if not (0 <= row_index < len(records)):
        raise ConfigError(f"--row: index {row_index} out of range (0..{len(records) - 1})")
    orig = records[row_index]
    if isinstance(orig.nmse_db, str):
        raise ConfigError(f"--row: row {row_index} is an error row, nothing to replay")
    new, _, _, _ = run_single_cell(cfg, orig.trial, orig.bits, orig.snr_db, orig.method)
    return orig, new


def dump_channel_pair(
    cfg: ExperimentConfig,
    trial: int,
    bits: int,
    snr_db: float,
    method: str,
    truth_path: str,
    estimate_path: str,
):
    """Write truth/estimate angle-domain tensors for the figure pipeline."""
    rec, x, x_hat, chan = run_single_cell(cfg, trial, bits, snr_db, method)
    shape = (cfg.channel.taps, cfg.channel.n_r, cfg.channel.n_t)
    save_channel_artifact(truth_path, [x.reshape(shape)])
    save_channel_artifact(estimate_path, [x_hat.reshape(shape)])
    return rec
