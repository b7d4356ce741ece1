"""Binned detector count series and its CSV representation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

AXIS_KINDS = ("time", "diode_detuning", "microwave_detuning")


@dataclass
class CountTimeSeries:
    """Detector counts versus time or versus a swept frequency detuning."""

    bin_centers: np.ndarray        # s for time axes, Hz for detuning axes
    counts: np.ndarray             # non-negative integers
    axis_kind: str                 # one of AXIS_KINDS
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.bin_centers = np.atleast_1d(np.asarray(self.bin_centers, dtype=float))
        self.counts = np.atleast_1d(np.asarray(self.counts, dtype=np.int64))
        if self.bin_centers.shape != self.counts.shape:
            raise ValueError("bin_centers and counts must have equal length")
        if np.any(self.counts < 0):
            raise ValueError("counts must be non-negative")
        if self.axis_kind not in AXIS_KINDS:
            raise ValueError(f"unknown axis kind: {self.axis_kind!r}")

    @property
    def unit(self) -> str:
        return "s" if self.axis_kind == "time" else "Hz"

    @property
    def total_counts(self) -> int:
        return int(self.counts.sum())


def write_series_csv(series: CountTimeSeries, path, extra_header: dict | None = None) -> None:
    """Write ``axis,counts`` rows with metadata echoed as ``# key=value`` lines."""
    with open(path, "w", encoding="utf-8") as fh:
        if extra_header:
            for key, value in extra_header.items():
                fh.write(f"# {key}={value}\n")
        fh.write(f"# axis_kind={series.axis_kind}\n")
        fh.write(f"# unit: {series.unit}\n")
        for key, value in series.metadata.items():
            fh.write(f"# {key}={value}\n")
        fh.write("axis,counts\n")
        for x, c in zip(series.bin_centers, series.counts):
            fh.write(f"{float(x)!r},{int(c)}\n")


def read_series_csv(path) -> CountTimeSeries:
    """Read a series CSV written by :func:`write_series_csv`."""
    metadata: dict = {}
    axis_kind = "time"
    axis: list[float] = []
    counts: list[int] = []
    saw_header = False
    with open(path, "r", encoding="utf-8") as fh:
        for raw in fh:
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if body.startswith("unit:"):
                    metadata["unit"] = body.split(":", 1)[1].strip()
                elif "=" in body:
                    key, value = body.split("=", 1)
                    key = key.strip()
                    value = value.strip()
                    if key == "axis_kind":
                        axis_kind = value
                    else:
                        metadata[key] = value
                continue
            if not saw_header:
                if line != "axis,counts":
                    raise ValueError(f"malformed series CSV header: {line!r}")
                saw_header = True
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise ValueError(f"malformed series CSV row: {line!r}")
            axis.append(float(parts[0]))
            counts.append(int(float(parts[1])))
    if not saw_header:
        raise ValueError("series CSV has no axis,counts header")
    return CountTimeSeries(bin_centers=np.array(axis), counts=np.array(counts, dtype=np.int64),
                           axis_kind=axis_kind, metadata=metadata)
