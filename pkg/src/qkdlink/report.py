"""Run reports: delimited outputs and the figures rendered beside them.

Every harness entry point produces rows of plain scalars.  This module
owns their shapes: the per-run ``LinkReport``, CSV serialization that
round-trips exactly (floats are written with ``repr``), the fixed-width
text table, and the PNG figures written next to each CSV.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, fields
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .errors import ParameterError

__all__ = [
    "DISPERSION_FIELDS",
    "LinkReport",
    "STABILITY_FIELDS",
    "format_table",
    "read_reports_csv",
    "read_rows_csv",
    "render_dispersion_figure",
    "render_link_figure",
    "render_stability_figure",
    "render_table_figure",
    "write_reports_csv",
    "write_rows_csv",
]


@dataclass
class LinkReport:
    """Everything one scenario run discloses, flattened to scalars."""

    scenario: str
    mode: str
    seed: int
    length_km: float
    attenuation_db: float
    eta_z: float
    tau_z_us: float
    eta_x: float
    tau_x_us: float
    detector_label: str
    p_x_bob: float
    block_target_n: int
    device_qz_floor: float
    n_z: int
    n_z_signal: int
    n_z_decoy: int
    m_z: int
    n_x: int
    n_x_signal: int
    n_x_decoy: int
    m_x: int
    q_z: float
    phi_z_raw: float
    phi_z_upper: float
    s_z0: float
    s_z1: float
    lambda_ec: int
    secret_len: int
    verified: bool
    elapsed_s: float
    sifted_rate: float
    skr: float
    broadened_fwhm_ps: float
    bin_leak_prob: float

    def check(self) -> None:
        for name in ("q_z", "phi_z_raw", "phi_z_upper"):
            value = getattr(self, name)
            if not 0.0 <= value <= 0.5:
                raise ParameterError(f"{name} = {value} outside [0, 0.5]")
        if self.elapsed_s > 0:
            if not math.isclose(self.skr, self.secret_len / self.elapsed_s, rel_tol=1e-9):
                raise ParameterError("rate does not equal key length over elapsed time")
            if self.skr > self.sifted_rate * (1.0 + 1e-9):
                raise ParameterError("secret rate exceeds the sifted rate")


_FIELDS = [f.name for f in fields(LinkReport)]
_TYPES = {f.name: f.type for f in fields(LinkReport)}


def _format_cell(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_cell(name: str, raw: str):
    kind = _TYPES[name]
    if kind == "bool":
        return raw == "true"
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    return raw


def write_reports_csv(reports, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(_FIELDS)
        for report in reports:
            writer.writerow(_format_cell(getattr(report, name)) for name in _FIELDS)


def read_reports_csv(path: str | Path) -> list[LinkReport]:
    """Inverse of :func:`write_reports_csv`, recovering exact values."""
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        return [
            LinkReport(**{name: _parse_cell(name, row[name]) for name in _FIELDS})
            for row in reader
        ]


# Generic row tables (dispersion sweeps, stability traces).

DISPERSION_FIELDS = [
    "z_km",
    "fourier_limited_ps",
    "chirped_diode_ps",
    "narrow_tuned_ps",
    "reference_ps",
]

STABILITY_FIELDS = [
    "interval",
    "t_s",
    "n_z",
    "q_z",
    "phi_z_raw",
    "phi_z_upper",
    "secret_len",
    "skr",
    "failed",
]


def write_rows_csv(rows, field_names, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(field_names)
        for row in rows:
            writer.writerow(_format_cell(row[name]) for name in field_names)


def read_rows_csv(path: str | Path) -> list[dict]:
    """Read a generic row table back, parsing every cell as a number."""
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        out = []
        for row in reader:
            parsed = {}
            for key, raw in row.items():
                try:
                    parsed[key] = int(raw)
                except ValueError:
                    parsed[key] = float(raw)
            out.append(parsed)
        return out


# ---------------------------------------------------------------------------
# Text table
# ---------------------------------------------------------------------------

_TABLE_COLUMNS = (
    ("L_km", "{:.1f}", "length_km"),
    ("Att_dB", "{:.1f}", "attenuation_db"),
    ("eta_z", "{:.2f}", "eta_z"),
    ("tau_z_us", "{:.0f}", "tau_z_us"),
    ("eta_x", "{:.2f}", "eta_x"),
    ("tau_x_us", "{:.0f}", "tau_x_us"),
    ("T", "{}", "detector_label"),
    ("pX_B", "{:.2f}", "p_x_bob"),
    ("n", "{}", "n_z"),
    ("t_s", "{:.3g}", "elapsed_s"),
    ("qz_%", "{:.2f}", None),
    ("phiz_%", "{:.2f}", None),
    ("SKR_bps", "{:.3g}", "skr"),
)


def format_table(reports) -> str:
    """Fixed-width summary, one row per scenario, header always present."""
    lines = []
    header = [name for name, _, _ in _TABLE_COLUMNS]
    rows = []
    for report in reports:
        cells = []
        for name, fmt, attr in _TABLE_COLUMNS:
            if name == "qz_%":
                cells.append(f"{100.0 * report.q_z:.2f}")
            elif name == "phiz_%":
                cells.append(f"{100.0 * report.phi_z_upper:.2f}")
            else:
                cells.append(fmt.format(getattr(report, attr)))
        rows.append(cells)
    widths = [
        max(len(header[i]), *(len(r[i]) for r in rows)) if rows else len(header[i])
        for i in range(len(header))
    ]
    lines.append("  ".join(h.rjust(w) for h, w in zip(header, widths)))
    for cells in rows:
        lines.append("  ".join(c.rjust(w) for c, w in zip(cells, widths)))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Figures
# ---------------------------------------------------------------------------


def render_link_figure(report: LinkReport, path: str | Path) -> None:
    """Counts by basis and intensity, with the headline numbers inset."""
    fig, ax = plt.subplots(figsize=(6.5, 4.0))
    labels = ["key/signal", "key/decoy", "monitor/signal", "monitor/decoy"]
    counts = [report.n_z_signal, report.n_z_decoy, report.n_x_signal, report.n_x_decoy]
    ax.bar(labels, counts, color="#4878d0")
    ax.set_yscale("log")
    ax.set_ylabel("sifted detections")
    ax.set_title(f"{report.scenario}: link summary")
    text = (
        f"q_z = {100 * report.q_z:.2f}%\n"
        f"phi_z <= {100 * report.phi_z_upper:.2f}%\n"
        f"secret = {report.secret_len} bits\n"
        f"SKR = {report.skr:.3g} bit/s"
    )
    ax.text(
        0.98, 0.95, text, transform=ax.transAxes, ha="right", va="top",
        fontsize=9, bbox={"boxstyle": "round", "facecolor": "#f0f0f0"},
    )
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_dispersion_figure(rows, path: str | Path) -> None:
    fig, ax = plt.subplots(figsize=(6.5, 4.0))
    z = [row["z_km"] for row in rows]
    series = (
        ("fourier_limited_ps", "Fourier-limited 40 ps"),
        ("chirped_diode_ps", "chirped diode 0.170 nm / 40 ps"),
        ("narrow_tuned_ps", "narrow tuned 0.094 nm / 108 ps"),
    )
    for key, label in series:
        ax.plot(z, [row[key] for row in rows], label=label)
    ax.axhline(rows[0]["reference_ps"] if rows else 400.0, color="k", ls="--", lw=1,
               label="bin width")
    ax.set_xlabel("fiber length (km)")
    ax.set_ylabel("pulse FWHM after fiber (ps)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_stability_figure(rows, path: str | Path) -> None:
    fig, axes = plt.subplots(3, 1, sharex=True, figsize=(6.5, 6.0))
    hours = [row["t_s"] / 3600.0 for row in rows]
    axes[0].plot(hours, [100 * row["q_z"] for row in rows], ".-")
    axes[0].set_ylabel("q_z (%)")
    axes[1].plot(hours, [100 * row["phi_z_upper"] for row in rows], ".-", color="#d65f5f")
    axes[1].set_ylabel("phi_z bound (%)")
    axes[2].plot(hours, [row["skr"] for row in rows], ".-", color="#6acc64")
    axes[2].set_ylabel("SKR (bit/s)")
    axes[2].set_xlabel("simulated time (h)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_table_figure(reports, path: str | Path) -> None:
    fig, ax = plt.subplots(figsize=(6.5, 4.0))
    names = [r.scenario for r in reports]
    ax.bar(names, [r.skr for r in reports], color="#4878d0")
    ax.set_ylabel("SKR (bit/s)")
    ax.set_title("secret key rate by scenario")
    if reports:
        ax.set_yscale("log")
    plt.setp(ax.get_xticklabels(), rotation=20, ha="right")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
