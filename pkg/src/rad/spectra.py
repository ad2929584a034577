"""Quantile weight functions (risk spectra) and spectral risk evaluation."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .distributions import EmpiricalCostDistribution, check_levels
from .errors import DegenerateSpectrumError

KINDS = ("mean", "var", "cvar", "linear", "exponential", "power", "wang")

# Defaults used when a spectrum is selected by token alone.
DEFAULT_ALPHA = 0.9
DEFAULT_BANDWIDTH = 0.1
DEFAULT_LAMBDA = {"exponential": 3.0, "power": 2.0, "wang": 0.7}

_NEEDS_ALPHA = {"var", "cvar"}
_NEEDS_LAMBDA = {"exponential", "power", "wang"}


@dataclass(frozen=True)
class Spectrum:
    """A risk spectrum ``w(q)`` on ``(0, 1)``.

    ``alpha`` is used by VaR/CVaR, ``lam`` by the exponential, power and Wang
    families, ``bandwidth`` by the Gaussian-smoothed VaR spike. Parameters not
    used by ``kind`` must be left as ``None``.
    """

    kind: str
    alpha: float | None = None
    lam: float | None = None
    bandwidth: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown spectrum {self.kind!r}; expected one of {KINDS}")
        if (self.alpha is not None) != (self.kind in _NEEDS_ALPHA):
            raise ValueError(f"alpha is {'required' if self.kind in _NEEDS_ALPHA else 'not allowed'} for {self.kind}")
        if (self.lam is not None) != (self.kind in _NEEDS_LAMBDA):
            raise ValueError(f"lam is {'required' if self.kind in _NEEDS_LAMBDA else 'not allowed'} for {self.kind}")
        if (self.bandwidth is not None) != (self.kind == "var"):
            raise ValueError(f"bandwidth is {'required' if self.kind == 'var' else 'not allowed'} for {self.kind}")
        if self.alpha is not None and not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if self.lam is not None and not self.lam > 0.0:
            raise ValueError("lam must be positive")
        if self.bandwidth is not None and not self.bandwidth > 0.0:
            raise ValueError("bandwidth must be positive")

    @classmethod
    def from_token(cls, token: str, *, alpha=None, lam=None, bandwidth=None) -> "Spectrum":
        """Build a spectrum from its lowercase token, filling default parameters."""
        if token not in KINDS:
            raise ValueError(f"unknown spectrum {token!r}; expected one of {KINDS}")
        for name, value, used in (("alpha", alpha, token in _NEEDS_ALPHA),
                                  ("lambda", lam, token in _NEEDS_LAMBDA),
                                  ("bandwidth", bandwidth, token == "var")):
            if value is not None and not used:
                raise ValueError(f"{token} spectrum takes no {name} parameter")
        kwargs = {}
        if token in _NEEDS_ALPHA:
            kwargs["alpha"] = DEFAULT_ALPHA if alpha is None else alpha
        if token in _NEEDS_LAMBDA:
            kwargs["lam"] = DEFAULT_LAMBDA[token] if lam is None else lam
        if token == "var":
            kwargs["bandwidth"] = DEFAULT_BANDWIDTH if bandwidth is None else bandwidth
        return cls(token, **kwargs)

    @property
    def token(self) -> str:
        return self.kind


@dataclass(frozen=True)
class DiscreteWeights:
    """Spectrum values at the particle levels."""

    weights: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).ravel()
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite and non-negative")
        if self.normalized and abs(w.mean() - 1.0) > 1e-12:
            raise ValueError("normalized weights must average to 1")
        object.__setattr__(self, "weights", w)

    def __len__(self):
        return self.weights.size

    @classmethod
    def uniform(cls, n: int) -> "DiscreteWeights":
        return cls(np.ones(n), normalized=True)


def normal_cdf(z):
    """Standard normal CDF."""
    return special.ndtr(z)


def normal_quantile(p):
    """Inverse of :func:`normal_cdf` on ``(0, 1)``."""
    p_arr = np.asarray(p, dtype=float)
    if np.any(~((p_arr > 0.0) & (p_arr < 1.0))):
        raise ValueError("normal_quantile requires p in (0, 1)")
    return special.ndtri(p_arr) if p_arr.ndim else float(special.ndtri(p_arr))


def weight(spec: Spectrum, q):
    """Evaluate ``w(q)`` for ``q`` strictly inside ``(0, 1)``."""
    q_arr = np.asarray(q, dtype=float)
    if np.any(~((q_arr > 0.0) & (q_arr < 1.0))):
        raise ValueError("weight requires q in (0, 1)")
    kind = spec.kind
    if kind == "mean":
        out = np.ones_like(q_arr)
    elif kind == "var":
        h = spec.bandwidth
        out = np.exp(-0.5 * ((q_arr - spec.alpha) / h) ** 2) / (h * math.sqrt(2.0 * math.pi))
    elif kind == "cvar":
        out = np.where(q_arr >= spec.alpha, 1.0 / (1.0 - spec.alpha), 0.0)
    elif kind == "linear":
        out = 2.0 * q_arr
    elif kind == "exponential":
        lam = spec.lam
        out = lam * np.exp(lam * q_arr) / math.expm1(lam)
    elif kind == "power":
        out = (1.0 + spec.lam) * q_arr**spec.lam
    else:  # wang, as the distortion itself over 1 - Phi(lam)
        lam = spec.lam
        out = normal_cdf(normal_quantile(q_arr) + lam) / (1.0 - normal_cdf(lam))
    return float(out) if out.ndim == 0 else out


def discretize_weights(spec: Spectrum, levels, normalize: bool = False) -> DiscreteWeights:
    levels = check_levels(levels)
    w = np.asarray(weight(spec, levels), dtype=float).reshape(levels.shape)
    total = w.sum()
    if not total > 0.0:
        raise DegenerateSpectrumError(
            f"{spec.kind} spectrum has zero weight at all {levels.size} levels"
        )
    if normalize:
        w = w * (w.size / total)
    return DiscreteWeights(w, normalized=normalize)


def spectral_risk(dist: EmpiricalCostDistribution, w: DiscreteWeights) -> float:
    """Midpoint-rule spectral risk ``(1/N) * sum_i w_i q_i``."""
    q = dist.particles if isinstance(dist, EmpiricalCostDistribution) else np.asarray(dist, float)
    if q.size != len(w):
        raise ValueError(f"length mismatch: {q.size} particles vs {len(w)} weights")
    return float(np.sum(w.weights * q) / q.size)
