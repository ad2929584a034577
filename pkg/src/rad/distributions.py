"""Empirical quantiles and quantile-particle summaries of cost samples.

Quantiles use the left-continuous nearest-rank inverse, so taking as many
particles as there are samples reproduces the sorted sample exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class CostSamples:
    """Finite cost values, stored sorted ascending (stable)."""

    values: np.ndarray

    def __init__(self, values):
        arr = np.asarray(values, dtype=float).ravel()
        if arr.size == 0:
            raise ValueError("cost samples must be non-empty")
        if not np.all(np.isfinite(arr)):
            raise ValueError("cost samples must be finite (no NaN or inf)")
        arr = np.sort(arr, kind="stable")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    def __len__(self):
        return self.values.size


def as_samples(samples) -> CostSamples:
    if isinstance(samples, CostSamples):
        return samples
    return CostSamples(samples)


@dataclass(frozen=True)
class EmpiricalCostDistribution:
    """Quantile particles ``q_i`` at fixed ``levels`` (uniform atoms of mass 1/N)."""

    particles: np.ndarray
    levels: np.ndarray
    source_size: int

    def __post_init__(self):
        particles = np.asarray(self.particles, dtype=float)
        levels = check_levels(self.levels)
        if particles.shape != levels.shape:
            raise ValueError("particles and levels must have the same length")
        if np.any(np.diff(particles) < 0):
            raise ValueError("particles must be non-decreasing")
        object.__setattr__(self, "particles", particles)
        object.__setattr__(self, "levels", levels)

    @property
    def n(self) -> int:
        return self.particles.size


def make_levels(n: int) -> np.ndarray:
    """Midpoint quantile levels ``(2i - 1) / (2n)`` for ``i = 1..n``."""
    if int(n) != n or n < 1:
        raise ValueError(f"number of levels must be a positive integer, got {n!r}")
    n = int(n)
    return (2.0 * np.arange(1, n + 1) - 1.0) / (2.0 * n)


def check_levels(levels) -> np.ndarray:
    levels = np.asarray(levels, dtype=float).ravel()
    if levels.size == 0:
        raise ValueError("levels must be non-empty")
    if not (np.all(levels > 0.0) and np.all(levels < 1.0)):
        raise ValueError("levels must lie strictly inside (0, 1)")
    if np.any(np.diff(levels) <= 0):
        raise ValueError("levels must be strictly increasing")
    return levels


def _ranks(m: int, q: np.ndarray) -> np.ndarray:
    # 1-based nearest rank ceil(q*m). Near-integer products are redone in exact
    # rational arithmetic: 0.3*10 rounds to 3.0000000000000004 in floats.
    qm = q * m
    r = np.ceil(qm).astype(np.int64)
    near = np.abs(qm - np.rint(qm)) < 1e-9 * np.maximum(1.0, qm)
    if np.any(near):
        r = np.array(r, ndmin=1)
        flat_q = np.array(q, ndmin=1)
        for i in np.flatnonzero(np.array(near, ndmin=1)):
            r[i] = math.ceil(Fraction(float(flat_q[i])) * m)
        r = r.reshape(np.shape(qm))
    return np.clip(r, 1, m)


def empirical_quantile(samples, q):
    """Left-continuous empirical quantile: the sorted value at rank ``ceil(q*M)``.

    ``q`` may be a scalar or an array of levels in ``(0, 1]``.
    """
    s = as_samples(samples)
    q_arr = np.asarray(q, dtype=float)
    if np.any(~(q_arr > 0.0)) or np.any(q_arr > 1.0):
        raise ValueError("quantile level must lie in (0, 1]")
    idx = _ranks(len(s), q_arr) - 1
    out = s.values[idx]
    return float(out) if out.ndim == 0 else out


def quantile_particles(samples, n: int) -> EmpiricalCostDistribution:
    """Summarize ``samples`` by ``n`` quantile particles at midpoint levels."""
    s = as_samples(samples)
    levels = make_levels(n)
    return EmpiricalCostDistribution(
        particles=np.array(empirical_quantile(s, levels), dtype=float, ndmin=1),
        levels=levels,
        source_size=len(s),
    )


def empirical_cdf(samples, t):
    """Fraction of samples ``<= t`` (right-continuous)."""
    s = as_samples(samples)
    out = np.searchsorted(s.values, t, side="right") / len(s)
    return float(out) if np.ndim(out) == 0 else out


def read_cost_samples(path) -> CostSamples:
    """Parse a cost-sample file: one finite decimal per line, blank lines ignored."""
    values = []
    text = Path(path).read_text()
    for lineno, raw in enumerate(text.split("\n"), start=1):
        line = raw.strip()
        if not line:
            continue
        try:
            v = float(line)
        except ValueError:
            raise ValueError(f"{path}:{lineno}: not a decimal number: {raw!r}") from None
        if not math.isfinite(v):
            raise ValueError(f"{path}:{lineno}: non-finite value {raw!r}")
        values.append(v)
    if not values:
        raise ValueError(f"{path}: no cost samples")
    return CostSamples(values)


def write_cost_samples(path, values) -> None:
    arr = np.asarray(values, dtype=float).ravel()
    Path(path).write_text("".join(f"{v!r}\n" for v in arr.tolist()))
