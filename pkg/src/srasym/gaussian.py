"""Closed forms for the Gaussian memoryless source with quadratic distortion.

Rates, tilted densities, type classes of the empirical power, the
large-deviations rate function and the chi-square based achievability and
one-shot converse bounds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaincc

from .normal import q_inv

GAUSSIAN_DISPERSION = 0.5  # variance of every tilted density, nats^2


@dataclass(frozen=True)
class GaussianInstance:
    sigma2: float
    D1: float
    D2: float

    def __post_init__(self):
        for name in ("sigma2", "D1", "D2"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if not self.sigma2 > 0:
            raise ValueError("source variance must be positive")
        if not (self.D1 > 0 and self.D2 > 0):
            raise ValueError("distortion levels must be positive")

    @property
    def regular(self) -> bool:
        """True inside the assumed regime ``sigma2 > D1 > D2 > 0``."""
        return self.sigma2 > self.D1 > self.D2 > 0

    def require_regular(self):
        if not self.regular:
            raise ValueError("outside the assumed regime sigma2 > D1 > D2 > 0")


@dataclass(frozen=True)
class GaussianTypePartition:
    xi: float
    delta: float
    k: int
    boundaries: np.ndarray  # Lambda(i) / sigma2 = exp(-2 xi) + (i - 1) delta, i = 0..k

    def index(self, power: float) -> int:
        """Class of a normalized empirical power in ``(e^{-2 xi}, e^{2 xi})``; 1-based."""
        lo, hi = math.exp(-2 * self.xi), math.exp(2 * self.xi)
        if not lo < power < hi:
            raise ValueError("power outside the typical range")
        # class i holds powers in (Lambda(i-1), Lambda(i)]
        return int(np.searchsorted(self.boundaries, power, side="left"))


def _rate(sigma2, D):
    return 0.5 * math.log(sigma2 / D) if D < sigma2 else 0.0


def _tilted(sigma2, D):
    if D >= sigma2:
        return lambda x: np.zeros_like(np.asarray(x, dtype=float))
    r = _rate(sigma2, D)
    return lambda x: r + 0.5 * (np.asarray(x, dtype=float) ** 2 / sigma2 - 1.0)


def gaussian_rd(inst: GaussianInstance):
    """``(R_Y, R_Z, j_Y, j_Z)`` with the tilted densities as vectorized callables."""
    s2 = inst.sigma2
    return _rate(s2, inst.D1), _rate(s2, inst.D2), _tilted(s2, inst.D1), _tilted(s2, inst.D2)


def rate_function(xi: float) -> float:
    """Large-deviations rate ``(e^{2 xi} - 1 - 2 xi) / 2`` of the empirical power."""
    if xi < 0:
        raise ValueError("xi must be non-negative")
    return 0.5 * math.expm1(2.0 * xi) - xi


def build_partition(xi: float, delta: float) -> GaussianTypePartition:
    if not (xi > 0 and delta > 0):
        raise ValueError("xi and delta must be positive")
    lo, hi = math.exp(-2 * xi), math.exp(2 * xi)
    k = math.ceil((hi - lo) / delta) + 1
    boundaries = lo + delta * (np.arange(k + 1) - 1.0)
    return GaussianTypePartition(xi, delta, k, boundaries)


def partition_preset(n: int) -> GaussianTypePartition:
    """Second-order choice ``xi = n^{-1/3}``, ``delta = 1/n``."""
    return build_partition(n ** (-1.0 / 3.0), 1.0 / n)


def chi2_sf(n: int, t: float) -> float:
    """``P(chi2_n / n > t)`` via the regularized upper incomplete gamma."""
    if t <= 0:
        return 1.0
    return float(gammaincc(0.5 * n, 0.5 * n * t))


def chi2_cdf_le(n: int, t: float) -> float:
    return 1.0 - chi2_sf(n, t)


@dataclass(frozen=True)
class GaussianBound:
    value: float  # clamped into [0, 1]
    raw: float
    vacuous: bool = False


def gaussian_achievability_bound(inst: GaussianInstance, n: int, logM1: float, logM1M2: float, xi: float, delta: float) -> GaussianBound:
    """Type-class achievability bound on the joint excess-distortion probability.

    ``4 exp(-n I(xi)) + P(chi2_n / n > min_i (D_i / sigma2) exp(2 R_{i,n}) - delta)``
    with the rates corrected for the type count and covering overheads.
    """
    k = build_partition(xi, delta).k
    r1 = (logM1 - 2.5 * math.log(n) - math.log(k) - math.log(6.0)) / n
    r2 = (logM1M2 - 5.0 * math.log(n) - 2.0 * math.log(6.0)) / n
    # past e^700 the tail is zero anyway
    t1 = inst.D1 / inst.sigma2 * math.exp(min(2.0 * r1, 700.0)) - delta
    t2 = inst.D2 / inst.sigma2 * math.exp(min(2.0 * r2, 700.0)) - delta
    threshold = min(t1, t2)
    lead = 4.0 * math.exp(-n * rate_function(xi))
    if threshold <= 0:
        return GaussianBound(1.0, lead + 1.0, vacuous=True)
    raw = lead + chi2_sf(n, threshold)
    return GaussianBound(min(max(raw, 0.0), 1.0), raw)


def achievability_code_sizes(inst: GaussianInstance, n: int, L1: float, L2: float, xi: float, delta: float):
    """``(log M1, log M1M2)`` whose corrected rates sit at ``R* + L / sqrt(n)`` (boundary point ``(R_Y, R_Z)``)."""
    k = build_partition(xi, delta).k
    ry, rz, _, _ = gaussian_rd(inst)
    logM1 = n * ry + L1 * math.sqrt(n) + 2.5 * math.log(n) + math.log(k) + math.log(6.0)
    logM1M2 = n * rz + L2 * math.sqrt(n) + 5.0 * math.log(n) + 2.0 * math.log(6.0)
    return logM1, logM1M2


def gaussian_one_shot_converse(inst: GaussianInstance, n: int, logM1: float, logM1M2: float, gamma1: float, gamma2: float) -> GaussianBound:
    """Exact n-letter tilted converse; both tilted sums are affine in ``chi2_n``.

    ``P(sum j_Y >= log M1 + g1 or sum j_YZ >= log M1M2 + g2) - e^{-g1} - e^{-g2}``
    where ``sum j = n R + (S - n) / 2`` with ``S ~ chi2_n``.
    """
    ry, rz, _, _ = gaussian_rd(inst)
    # S >= n + 2 (log M + g - n R), as a normalized threshold S / n
    t1 = 1.0 + 2.0 * (logM1 + gamma1 - n * ry) / n
    t2 = 1.0 + 2.0 * (logM1M2 + gamma2 - n * rz) / n
    threshold = min(t1, t2)
    # the sum is continuous, so >= and > coincide
    prob = chi2_sf(n, threshold)
    raw = prob - math.exp(-gamma1) - math.exp(-gamma2)
    return GaussianBound(min(max(raw, 0.0), 1.0), raw)


def gaussian_region(inst: GaussianInstance, case_tag: str, epsilon: float):
    """Second-order region as ``(kind, bound)``; identical for every regular instance.

    ``kind`` is ``"L2"``, ``"L1"`` or ``"min"`` for cases ``i``, ``ii`` and ``iii``.
    """
    inst.require_regular()
    b = math.sqrt(GAUSSIAN_DISPERSION) * q_inv(epsilon)
    kinds = {"i": "L2", "ii": "L1", "iii": "min"}
    if case_tag not in kinds:
        raise ValueError("case tag must be one of ('i', 'ii', 'iii')")
    return kinds[case_tag], b


def gaussian_mdc(theta1: float, theta2: float, case_tag: str) -> float:
    """Moderate deviations constant; the dispersions are both 1/2 and the rate multiplier vanishes."""
    if not (theta1 > 0 and theta2 > 0):
        raise ValueError("theta1 and theta2 must be positive")
    values = {"i": theta2**2, "ii": theta1**2}
    if case_tag == "iii":
        return min(values.values())
    if case_tag not in values:
        raise ValueError("case tag must be one of ('i', 'ii', 'iii')")
    return values[case_tag]


def gaussian_mdc_trend(theta1: float, theta2: float, rho, n_list):
    """Normalized exponents ``-log(eps_n) / (n rho_n^2)`` at rates ``R* + theta_i rho_n``.

    Both tilted sums equal ``n R + (S - n) / 2`` with ``S ~ chi2_n``, so the
    union of the two excess events is the tail at the smaller threshold.
    Entries whose probability underflows below 1e-300 carry the bound implied
    by that floor and ``underflow=True``.
    """
    if not (theta1 > 0 and theta2 > 0):
        raise ValueError("theta1 and theta2 must be positive")
    out = []
    for n in n_list:
        r = float(rho(n))
        eps = chi2_sf(n, 1.0 + 2.0 * min(theta1, theta2) * r)
        scale = n * r * r
        if eps < 1e-300:
            out.append((n, -math.log(1e-300) / scale, eps, True))
        else:
            out.append((n, -math.log(eps) / scale, eps, False))
    return out
