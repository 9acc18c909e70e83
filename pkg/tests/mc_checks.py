"""Measurement helpers shared by the channel tests and the acceptance suite.

These reduce a simulated DetectionBatch to per-intensity click and error
statistics measured the same way the closed-form oracle defines them:
per-detector, one click per slot (earliest wins), errors judged against the
transmitter's ground-truth symbols.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from qkdlink.channel import DetectionBatch
from qkdlink.transmitter import Basis, Intensity, SymbolStream


@dataclass
class MeasuredRates:
    slots_by_intensity: dict[int, int]
    z_clicks: dict[int, int]
    z_sifted: dict[int, int]
    z_errors: dict[int, int]
    x_clicks: dict[int, int]
    x_monitor: dict[int, int]
    x_errors: dict[int, int]

    def z_click_prob(self, k: int) -> float:
        return self.z_clicks[k] / self.slots_by_intensity[k]

    def x_click_prob(self, k: int) -> float:
        return self.x_clicks[k] / self.slots_by_intensity[k]

    def q_z(self, k: int) -> float:
        return self.z_errors[k] / self.z_sifted[k]

    def q_x(self, k: int) -> float:
        return self.x_errors[k] / self.x_monitor[k]


def _dedupe_earliest(batch: DetectionBatch, detector: Basis):
    """Indices of the earliest accepted event per slot at one detector."""
    sel = np.flatnonzero(batch.accepted & (batch.detector == int(detector)))
    if sel.size == 0:
        return sel
    # Arrays are time-sorted, so the first occurrence of a slot is earliest.
    first = np.unique(batch.slot[sel], return_index=True)[1]
    return sel[first]


def count_slots_by_intensity(stream: SymbolStream, slot_start: int, n_slots: int) -> dict[int, int]:
    counts = {int(Intensity.SIGNAL): 0, int(Intensity.DECOY): 0}
    chunk = 1 << 20
    for base in range(slot_start, slot_start + n_slots, chunk):
        idx = np.arange(base, min(base + chunk, slot_start + n_slots), dtype=np.uint64)
        _, _, intensity = stream.fields_at(idx)
        counts[int(Intensity.SIGNAL)] += int(np.sum(intensity == Intensity.SIGNAL))
        counts[int(Intensity.DECOY)] += int(np.sum(intensity == Intensity.DECOY))
    return counts


def measure_batch(batch: DetectionBatch, stream: SymbolStream) -> MeasuredRates:
    keys = (int(Intensity.SIGNAL), int(Intensity.DECOY))
    out = MeasuredRates(
        slots_by_intensity=count_slots_by_intensity(stream, batch.slot_start, batch.n_slots),
        z_clicks=dict.fromkeys(keys, 0),
        z_sifted=dict.fromkeys(keys, 0),
        z_errors=dict.fromkeys(keys, 0),
        x_clicks=dict.fromkeys(keys, 0),
        x_monitor=dict.fromkeys(keys, 0),
        x_errors=dict.fromkeys(keys, 0),
    )

    z_idx = _dedupe_earliest(batch, Basis.Z)
    basis, bit, intensity = stream.fields_at(batch.slot[z_idx])
    for k in keys:
        mine = intensity == k
        out.z_clicks[k] = int(mine.sum())
        sifted = mine & (basis == Basis.Z)
        out.z_sifted[k] = int(sifted.sum())
        out.z_errors[k] = int(np.sum(sifted & (batch.bin[z_idx] != bit)))

    x_idx = _dedupe_earliest(batch, Basis.X)
    basis, _, intensity = stream.fields_at(batch.slot[x_idx])
    for k in keys:
        mine = intensity == k
        out.x_clicks[k] = int(mine.sum())
        monitored = mine & (basis == Basis.X)
        out.x_monitor[k] = int(monitored.sum())
        out.x_errors[k] = int(np.sum(monitored & batch.error_port[x_idx]))
    return out


def binomial_sigma(p: float, n: int) -> float:
    p = min(max(p, 1e-12), 1.0 - 1e-12)
    return (p * (1.0 - p) / n) ** 0.5
