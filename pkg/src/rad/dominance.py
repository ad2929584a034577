"""First-order stochastic dominance surrogates and dominance differences.

Losses here are exact quantile-gap sums over shared levels, never entropic
transport values, so the spectral-risk decomposition

    fsd_loss(X, Y, w) - fsd_loss(Y, X, w) == spectral_risk(Y, w) - spectral_risk(X, w)

holds to rounding.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .distributions import EmpiricalCostDistribution, quantile_particles
from .spectra import DiscreteWeights, Spectrum, discretize_weights, spectral_risk


def _particles(d):
    if isinstance(d, EmpiricalCostDistribution):
        return d.particles, d.levels
    return np.asarray(d, dtype=float).ravel(), None


def _aligned(X, Y, w):
    x, lx = _particles(X)
    y, ly = _particles(Y)
    if x.size != y.size:
        raise ValueError(f"particle counts differ: {x.size} vs {y.size}")
    if lx is not None and ly is not None and not np.array_equal(lx, ly):
        raise ValueError("distributions use different quantile levels")
    if w is not None and len(w) != x.size:
        raise ValueError(f"{len(w)} weights for {x.size} particles")
    return x, y


def fsd_loss(X, Y, w: DiscreteWeights | None = None) -> float:
    """Weighted FSD violation ``(1/N) sum_i w_i (Q_Y(a_i) - Q_X(a_i))_+``.

    Zero exactly when X dominates Y at every level carrying weight. ``w=None``
    means uniform weights.
    """
    x, y = _aligned(X, Y, w)
    gaps = np.maximum(y - x, 0.0)
    if w is None:
        return float(np.sum(gaps) / x.size)
    return float(np.sum(w.weights * gaps) / x.size)


def dominance_difference(X, Y, w: DiscreteWeights | None = None) -> float:
    return fsd_loss(X, Y, w) - fsd_loss(Y, X, w)


def fsd_dominates(Y, X) -> bool:
    """True when ``Q_Y >= Q_X`` at every shared level (weak dominance)."""
    x, y = _aligned(X, Y, None)
    return bool(np.all(y >= x))


@dataclass(frozen=True)
class DominanceReport:
    forward_loss: float
    reverse_loss: float
    difference: float
    rho_x: float
    rho_y: float
    spectrum: str
    n_particles: int

    def to_dict(self) -> dict:
        return asdict(self)


def dominance_report(x_samples, y_samples, spec: Spectrum, n: int, normalize: bool = False) -> DominanceReport:
    """Compare two raw cost samples under one spectrum at ``n`` particles."""
    X = quantile_particles(x_samples, n)
    Y = quantile_particles(y_samples, n)
    w = discretize_weights(spec, X.levels, normalize=normalize)
    fwd = fsd_loss(X, Y, w)
    rev = fsd_loss(Y, X, w)
    return DominanceReport(
        forward_loss=fwd,
        reverse_loss=rev,
        difference=fwd - rev,
        rho_x=spectral_risk(X, w),
        rho_y=spectral_risk(Y, w),
        spectrum=spec.token,
        n_particles=int(n),
    )
