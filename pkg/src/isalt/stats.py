"""Marginal densities, temporal correlations, total variation and blow-up scans."""

import csv
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .simulate import SimConfig, simulate

DEFAULT_BINS = 100
DEFAULT_EXPAND = 0.05


def write_csv(path, header, rows):
    """Write a header line and rows, replacing ``path`` atomically."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    os.replace(tmp, path)
    return path


@dataclass(eq=False)
class Histogram:
    """Binned density of one coordinate.

    ``density * widths`` plus the two out-of-range masses sums to one.
    """

    k: int
    edges: np.ndarray
    density: np.ndarray
    underflow: float
    overflow: float
    count: int

    @property
    def widths(self):
        return np.diff(self.edges)

    @property
    def centers(self):
        return 0.5 * (self.edges[1:] + self.edges[:-1])

    @property
    def mass(self):
        return self.density * self.widths

    def total_mass(self):
        return math.fsum(self.mass) + self.underflow + self.overflow

    CSV_HEADER = ("k", "left", "right", "center", "density")

    def csv_rows(self):
        for lo, hi, c, p in zip(self.edges[:-1], self.edges[1:], self.centers, self.density):
            yield [self.k, repr(float(lo)), repr(float(hi)), repr(float(c)), repr(float(p))]

    def to_csv(self, path):
        return write_csv(path, self.CSV_HEADER, self.csv_rows())


def default_edges(reference, bins=DEFAULT_BINS, expand=DEFAULT_EXPAND):
    """Uniform edges over the range of ``reference`` widened by ``expand`` on each side."""
    ref = np.asarray(reference, dtype=float).ravel()
    ref = ref[np.isfinite(ref)]
    if ref.size == 0:
        raise ValueError("reference samples are empty")
    lo, hi = float(ref.min()), float(ref.max())
    pad = expand * (hi - lo) if hi > lo else max(abs(lo), 1.0) * expand
    return np.linspace(lo - pad, hi + pad, int(bins) + 1)


def empirical_pdf(samples, bins=DEFAULT_BINS, range=None, edges=None, k=0):
    """Histogram density of ``samples`` normalized by the full sample count.

    Pass either ``edges`` or ``bins`` with ``range=(lo, hi)``; samples outside
    the edges count toward ``underflow`` / ``overflow``.
    """
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("empty sample set")
    if not np.all(np.isfinite(x)):
        raise ValueError("samples contain non-finite values")
    if edges is None:
        if range is None:
            raise ValueError("give edges or range")
        lo, hi = map(float, range)
        if not lo < hi or int(bins) < 2:
            raise ValueError("need lo < hi and bins >= 2")
        edges = np.linspace(lo, hi, int(bins) + 1)
    edges = np.asarray(edges, dtype=float)
    if edges.ndim != 1 or edges.size < 3 or np.any(np.diff(edges) <= 0):
        raise ValueError("edges must be strictly ascending with at least 2 bins")
    counts, _ = np.histogram(x, bins=edges)
    n = x.size
    under = int(np.count_nonzero(x < edges[0]))
    over = int(np.count_nonzero(x > edges[-1]))
    return Histogram(int(k), edges, counts / (n * np.diff(edges)), under / n, over / n, n)


def tvd(p, q):
    """Total variation between two histograms on identical edges, in ``[0, 1]``.

    Out-of-range mass enters per side: ``0.5 * (|du| + |do|)``.
    """
    if p.edges.shape != q.edges.shape or not np.array_equal(p.edges, q.edges):
        raise ValueError("histograms have different edges")
    inner = math.fsum(np.abs(p.density - q.density) * p.widths)
    val = 0.5 * (inner + abs(p.underflow - q.underflow) + abs(p.overflow - q.overflow))
    return min(1.0, max(0.0, val))


def bin_masses(cdf, edges):
    """Exact bin masses of a distribution from its CDF (for analytic reference densities)."""
    c = np.asarray([cdf(e) for e in edges], dtype=float)
    return np.diff(c), c[0], 1.0 - c[-1]


def histogram_from_cdf(cdf, edges, k=0):
    mass, under, over = bin_masses(cdf, edges)
    edges = np.asarray(edges, dtype=float)
    return Histogram(k, edges, mass / np.diff(edges), float(under), float(over), 0)


@dataclass(eq=False)
class AcfCurve:
    """Raw temporal correlation ``C(h) = mean_n X_{n+h} X_n`` of coordinate ``k``."""

    k: int
    lags: np.ndarray
    values: np.ndarray
    delta: float = 1.0

    @property
    def normalized(self):
        return self.values / self.values[0]

    @property
    def times(self):
        return self.lags * self.delta

    CSV_HEADER = ("k", "lag", "time", "acf", "acf_normalized")

    def csv_rows(self):
        for h, t, v, z in zip(self.lags, self.times, self.values, self.normalized):
            yield [self.k, int(h), repr(float(t)), repr(float(v)), repr(float(z))]

    def to_csv(self, path):
        return write_csv(path, self.CSV_HEADER, self.csv_rows())


def acf(path, max_lag, k=0, delta=1.0):
    """Temporal correlation of coordinate ``k`` up to ``max_lag``.

    ``path`` is ``(N+1, d)`` (or ``(N+1,)``) for one trajectory or
    ``(M, N+1, d)`` for an ensemble, in which case the per-member curves are
    averaged. No mean is subtracted.
    """
    a = np.asarray(path, dtype=float)
    if a.ndim == 1:
        a = a[None, :, None]
    elif a.ndim == 2:
        a = a[None]
    if a.ndim != 3:
        raise ValueError("path must be (N+1,), (N+1, d) or (M, N+1, d)")
    if not 0 <= k < a.shape[2]:
        raise ValueError(f"coordinate {k} out of range")
    n = a.shape[1] - 1
    max_lag = int(max_lag)
    if max_lag < 0 or not max_lag < n / 2:
        raise ValueError(f"path too short: max_lag={max_lag} needs N > {2 * max_lag}, N={n}")
    x = np.ascontiguousarray(a[:, :, k])
    if not np.all(np.isfinite(x)):
        raise ValueError("path contains non-finite values")
    vals = np.empty(max_lag + 1)
    L = x.shape[1]
    for h in range(max_lag + 1):
        vals[h] = np.mean([np.dot(row[h:], row[:L - h]) / (L - h) for row in x])
    return AcfCurve(int(k), np.arange(max_lag + 1), vals, float(delta))


def burn_in(path, fraction=0.1):
    """Drop the first ``fraction`` of the time axis (axis -2)."""
    a = np.asarray(path)
    return a[..., int(fraction * (a.shape[-2] - 1)):, :]


@dataclass
class BlowupRow:
    label: str
    gap: int
    blew_up: bool
    first_step: int = None
    members_blown: int = 0


@dataclass
class BlowupTable:
    rows: list = field(default_factory=list)

    def labels(self):
        return list(dict.fromkeys(r.label for r in self.rows))

    def for_label(self, label):
        return [r for r in self.rows if r.label == label]

    def first_blowup_gap(self, label):
        """Smallest scanned gap at which ``label`` blew up, or ``None``."""
        gaps = [r.gap for r in self.for_label(label) if r.blew_up]
        return min(gaps) if gaps else None

    def stable_through(self, label, gap):
        rows = [r for r in self.for_label(label) if r.gap <= gap]
        return bool(rows) and not any(r.blew_up for r in rows)

    CSV_HEADER = ("scheme", "gap", "blew_up", "first_blowup_step", "members_blown")

    def csv_rows(self):
        for r in self.rows:
            yield [r.label, r.gap, int(r.blew_up),
                   "" if r.first_step is None else r.first_step, r.members_blown]

    def to_csv(self, path):
        return write_csv(path, self.CSV_HEADER, self.csv_rows())


def blowup_scan(system, builders, gaps, steps, seeds=10, x0=None, seed=0, threshold=1e10,
                n_jobs=None):
    """Simulate ``seeds`` ensemble members per ``(scheme, gap)`` cell.

    ``builders`` maps a label to a callable ``gap -> scheme``; a cell blows
    up when any member does.
    """
    gaps = sorted(int(g) for g in gaps)
    if not gaps:
        raise ValueError("need at least one gap")
    if x0 is None:
        x0 = system.default_x0
    table = BlowupTable()
    for label, build in builders.items():
        for gap in gaps:
            scheme = build(gap)
            cfg = SimConfig(scheme, x0, int(steps), seed, threshold,
                            record_every=int(steps), M=None if np.ndim(x0) == 2 else int(seeds))
            res = simulate(cfg, n_jobs=n_jobs)
            blown = res.blown_up
            first = int(res.blowup_step[blown].min()) if blown.any() else None
            table.rows.append(BlowupRow(label, gap, bool(blown.any()), first, int(blown.sum())))
    return table
