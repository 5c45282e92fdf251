"""Time series of per-spin magnetizations shared by both solver backends."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CSV_COLUMNS = ("time_us", "mx", "my", "mz", "mx_stderr", "my_stderr", "mz_stderr")


@dataclass(eq=False)
class MagnetizationSeries:
    """Per-spin Pauli averages ``m = (2/n) <S>`` sampled at ``times`` (us).

    ``stderr`` has shape (3, len(times)); it is zero for exact backends and
    holds Monte Carlo standard errors for DTWA.
    """

    times: np.ndarray
    m: np.ndarray
    stderr: np.ndarray = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.m = np.asarray(self.m, dtype=float).reshape(3, -1)
        if self.stderr is None:
            self.stderr = np.zeros_like(self.m)
        self.stderr = np.asarray(self.stderr, dtype=float).reshape(3, -1)
        if self.m.shape[1] != len(self.times) or self.stderr.shape != self.m.shape:
            raise ValueError("times, magnetizations and stderr lengths differ")
        if len(self.times) > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("sample times must be strictly increasing")

    mx = property(lambda self: self.m[0])
    my = property(lambda self: self.m[1])
    mz = property(lambda self: self.m[2])

    def __len__(self):
        return len(self.times)

    def component(self, name):
        return self.m["xyz".index(name)]

    def select(self, mask):
        """Subset of samples by boolean mask or index array."""
        return MagnetizationSeries(self.times[mask], self.m[:, mask], self.stderr[:, mask], dict(self.metadata))

    def stroboscopic(self, period, tol=1e-9):
        """Samples at integer multiples of ``period``."""
        k = self.times / period
        return self.select(np.abs(k - np.round(k)) <= tol * np.maximum(1.0, k))

    def within_bounds(self, nsigma=3.0):
        """Check |m| <= 1 + nsigma * stderr componentwise (NaNs ignored)."""
        bad = np.abs(self.m) > 1.0 + nsigma * self.stderr + 1e-12
        return not np.any(bad & np.isfinite(self.m))

    def to_csv(self, path=None):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for k in range(len(self.times)):
            w.writerow([repr(float(v)) for v in (self.times[k], *self.m[:, k], *self.stderr[:, k])])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, source, metadata=None):
        text = Path(source).read_text() if not str(source).startswith("time_us") else source
        rows = list(csv.reader(io.StringIO(text)))
        if tuple(rows[0]) != CSV_COLUMNS:
            raise ValueError(f"unexpected CSV header {rows[0]}")
        data = np.array(rows[1:], dtype=float).reshape(-1, len(CSV_COLUMNS))
        return cls(data[:, 0], data[:, 1:4].T, data[:, 4:7].T, dict(metadata or {}))

    def sidecar(self, path=None):
        text = json.dumps(self.metadata, indent=2, sort_keys=True, default=str)
        if path is not None:
            Path(path).write_text(text)
        return text
