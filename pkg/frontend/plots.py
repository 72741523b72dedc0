#!/usr/bin/env python3
"""Figures from channel-estimation experiment outputs.

Renders the summary CSV into one NMSE-vs-SNR chart per bit depth (one line
per method) and, given a pair of dumped channel artifacts, a two-row
magnitude comparison of the true and recovered channel.

This script is deliberately decoupled from the estimation package: it reads
only the published interfaces.  The summary CSV carries the columns
bits,snr_db,method,nmse_db,n_trials,n_errors.  A channel artifact is a
16-byte header of little-endian uint32 (n_r, n_t, taps, count) followed by
count C-order (taps, n_r, n_t) complex64 tensors.  The only arithmetic done
here is the NMSE annotation on the comparison figure.

Outputs are deterministic: fixed style, fixed SVG hash salt, no embedded
timestamps, so rerunning on the same inputs reproduces the files byte for
byte.
"""

from __future__ import annotations

import argparse
import csv
import math
import struct
import sys
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

SUMMARY_COLUMNS = ["bits", "snr_db", "method", "nmse_db", "n_trials", "n_errors"]
FORMATS = ("svg", "png")

_MARKERS = ("o", "s", "^", "d", "v", "p")


class PlotsError(Exception):
    """Base for everything this script raises on bad input."""


class SchemaError(PlotsError):
    pass


class EmptyInput(PlotsError):
    pass


class DimMismatch(PlotsError):
    pass


def _apply_style() -> None:
    plt.rcParams.update(
        {
            "svg.hashsalt": "chanest-figures",
            "svg.fonttype": "none",
            "figure.figsize": (5.4, 3.8),
            "figure.dpi": 100,
            "savefig.dpi": 150,
            "font.size": 9,
            "axes.grid": True,
            "grid.alpha": 0.3,
            "lines.linewidth": 1.4,
            "lines.markersize": 4.5,
        }
    )


@dataclass
class PlotSpec:
    input_csv: str
    output_dir: str
    formats: tuple = ("svg",)
    panel_key: str = "bits"
    line_key: str = "method"
    x: str = "snr_db"
    y: str = "nmse_db"

    def __post_init__(self) -> None:
        self.formats = tuple(self.formats)
        if not self.formats:
            raise SchemaError("formats must be nonempty")
        bad = [f for f in self.formats if f not in FORMATS]
        if bad:
            raise SchemaError(f"unsupported format(s) {bad}; choose from {list(FORMATS)}")
        if not Path(self.input_csv).is_file():
            raise EmptyInput(f"input csv not found: {self.input_csv}")


def read_summary(path: str) -> list:
    """Parse the summary CSV into typed row dicts."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        have = reader.fieldnames or []
        missing = [c for c in SUMMARY_COLUMNS if c not in have]
        if missing:
            raise SchemaError(f"{path}: missing column(s) {missing}")
        rows = []
        for raw in reader:
            rows.append(
                {
                    "bits": int(raw["bits"]),
                    "snr_db": float(raw["snr_db"]),
                    "method": raw["method"],
                    "nmse_db": float(raw["nmse_db"]),
                    "n_trials": int(raw["n_trials"]),
                    "n_errors": int(raw["n_errors"]),
                }
            )
    if not rows:
        raise EmptyInput(f"{path}: no data rows")
    return rows


def render_nmse_curves(spec: PlotSpec) -> list:
    """One NMSE-vs-SNR image per bit depth.  Returns the written paths."""
    _apply_style()
    rows = read_summary(spec.input_csv)
    outdir = Path(spec.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    panels = sorted({r[spec.panel_key] for r in rows})
    methods = sorted({r[spec.line_key] for r in rows})
    xs_all = sorted({r[spec.x] for r in rows})
    written = []
    for panel in panels:
        fig, ax = plt.subplots()
        for k, method in enumerate(methods):
            pts = {
                r[spec.x]: r[spec.y]
                for r in rows
                if r[spec.panel_key] == panel
                and r[spec.line_key] == method
                and math.isfinite(r[spec.y])
            }
            xs = [v for v in xs_all if v in pts]
            gaps = [v for v in xs_all if v not in pts]
            if gaps:
                print(
                    f"warning: {method} at {panel}-bit has no value for "
                    f"{spec.x} in {gaps}; skipping those points",
                    file=sys.stderr,
                )
            if not xs:
                continue
            ax.plot(xs, [pts[v] for v in xs],
                    marker=_MARKERS[k % len(_MARKERS)], label=method)
        ax.set_xlabel("SNR (dB)")
        ax.set_ylabel("NMSE (dB)")
        ax.set_title(f"{panel}-bit quantization")
        ax.legend(loc="best")
        fig.tight_layout()
        for fmt in spec.formats:
            path = outdir / f"nmse_{panel}bit.{fmt}"
            fig.savefig(path, format=fmt, metadata=_metadata(fmt))
            written.append(str(path))
        plt.close(fig)
    return written


def _metadata(fmt: str):
    # strips the creation date stamp so reruns are byte-identical
    return {"Date": None} if fmt == "svg" else None


def load_artifact(path: str) -> list:
    """Read channel tensors from the documented binary layout."""
    with open(path, "rb") as fh:
        head = fh.read(16)
        if len(head) < 16:
            raise SchemaError(f"{path}: truncated header")
        n_r, n_t, taps, count = struct.unpack("<4I", head)
        if count < 1 or min(n_r, n_t, taps) < 1:
            raise SchemaError(f"{path}: bad dims {(n_r, n_t, taps, count)}")
        tensors = []
        for _ in range(count):
            need = taps * n_r * n_t * 8
            buf = fh.read(need)
            if len(buf) < need:
                raise SchemaError(f"{path}: truncated payload")
            tensors.append(np.frombuffer(buf, dtype="<c8").reshape(taps, n_r, n_t))
    return tensors


def _flatten_taps(tensor: np.ndarray) -> np.ndarray:
    # (taps, n_r, n_t) -> (n_r, taps*n_t): taps side by side, antennas down
    return np.hstack([np.abs(tensor[l]) for l in range(tensor.shape[0])])


def render_channel_compare(truth_artifact: str, estimate_artifact: str, out: str) -> str:
    """Two-row magnitude figure (truth above, estimate below), shared scale."""
    _apply_style()
    truth = load_artifact(truth_artifact)[0]
    est = load_artifact(estimate_artifact)[0]
    if truth.shape != est.shape:
        raise DimMismatch(f"truth {truth.shape} vs estimate {est.shape}")
    num = float(np.sum(np.abs(est - truth) ** 2))
    den = float(np.sum(np.abs(truth) ** 2))
    nmse = 10.0 * math.log10(max(num / max(den, 1e-300), 1e-30))
    mag_t = _flatten_taps(truth)
    mag_e = _flatten_taps(est)
    vmax = max(float(mag_t.max()), float(mag_e.max()), 1e-12)
    fig, axes = plt.subplots(2, 1, figsize=(6.4, 4.2))
    for ax, mag, label in ((axes[0], mag_t, "true channel"),
                           (axes[1], mag_e, "estimate")):
        im = ax.imshow(mag, vmin=0.0, vmax=vmax, aspect="auto",
                       cmap="viridis", interpolation="nearest")
        ax.set_ylabel(label)
        ax.set_xticks([])
        ax.set_yticks([])
    fig.colorbar(im, ax=list(axes), fraction=0.046)
    fig.suptitle(f"angle-domain magnitude, NMSE {nmse:.2f} dB")
    out_path = Path(out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fmt = out_path.suffix.lstrip(".").lower() or "svg"
    fig.savefig(out_path, format=fmt, metadata=_metadata(fmt))
    plt.close(fig)
    return str(out_path)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="plots.py",
        description="Render NMSE summary curves and channel comparison figures",
    )
    parser.add_argument("--in", dest="input", required=True, help="summary CSV path")
    parser.add_argument("--out", dest="output", required=True, help="output directory")
    parser.add_argument("--format", dest="formats", action="append",
                        choices=list(FORMATS), metavar="FMT",
                        help="svg or png; repeatable (default svg)")
    parser.add_argument("--truth", help="true-channel artifact for the comparison figure")
    parser.add_argument("--estimate", help="estimated-channel artifact")
    parser.add_argument("--compare-out", help="output path for the comparison figure")
    args = parser.parse_args(argv)
    formats = tuple(args.formats) if args.formats else ("svg",)
    try:
        spec = PlotSpec(input_csv=args.input, output_dir=args.output, formats=formats)
        written = render_nmse_curves(spec)
        if bool(args.truth) != bool(args.estimate):
            raise SchemaError("--truth and --estimate must be given together")
        if args.truth:
            cmp_out = args.compare_out or str(Path(args.output) / f"channel_compare.{formats[0]}")
            written.append(render_channel_compare(args.truth, args.estimate, cmp_out))
    except PlotsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for path in written:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
