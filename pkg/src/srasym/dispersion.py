"""Rate-dispersion functions, the rate-dispersion matrix and third absolute moments.

All moments are exact sums over the source alphabet.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import SourceInstance, validate_instance
from .rd import rd_solve
from .sr import sr_solve

RANK_RTOL = 1e-9
RANK_ATOL = 1e-14  # a trace this small is rounding noise from constant densities


@dataclass(frozen=True)
class DispersionReport:
    v_d1: float
    v_d2: float
    v_joint: float
    matrix: np.ndarray  # covariance of (j_Y, j_YZ)
    t_joint: float  # E|j_YZ - E j_YZ|^3
    rank: int
    min_eigenvalue: float
    means: tuple = (float("nan"), float("nan"))
    lam: float = 0.0

    def to_dict(self) -> dict:
        return {
            "v_d1": self.v_d1,
            "v_d2": self.v_d2,
            "v_joint": self.v_joint,
            "matrix": self.matrix.tolist(),
            "t_joint": self.t_joint,
            "rank": self.rank,
            "min_eigenvalue": self.min_eigenvalue,
            "lambda": self.lam,
        }


def variance(px, values) -> float:
    """Variance of ``values`` under ``px`` by direct summation."""
    px = np.asarray(px, dtype=float)
    v = np.asarray(values, dtype=float)
    mask = px > 0
    mean = float(px[mask] @ v[mask])
    return float(px[mask] @ (v[mask] - mean) ** 2)


def covariance(px, a, b) -> np.ndarray:
    px = np.asarray(px, dtype=float)
    mask = px > 0
    X = np.vstack([np.asarray(a, dtype=float)[mask], np.asarray(b, dtype=float)[mask]])
    w = px[mask]
    centered = X - (X @ w)[:, None]
    C = (centered * w) @ centered.T
    return 0.5 * (C + C.T)


def matrix_rank(C, rtol=RANK_RTOL):
    """Rank of a PSD matrix with eigenvalue cutoff ``rtol * trace``; also the smallest eigenvalue."""
    eig = np.linalg.eigvalsh(C)
    trace = float(np.trace(C))
    if trace <= RANK_ATOL:
        return 0, float(eig.min())
    return int(np.sum(eig > rtol * trace)), float(eig.min())


def rate_dispersion(px, d, D) -> float:
    """``V(D|P_X)``, the variance of the D-tilted information density."""
    sol = rd_solve(px, d, D)
    return variance(sol.px, sol.tilted)


def dispersion_report(inst: SourceInstance, R1: float) -> DispersionReport:
    """Dispersion quantities at the boundary point with first rate ``R1``."""
    inst = validate_instance(inst)
    px = inst.px.probs
    jy = rd_solve(px, inst.d1.values, inst.D1).tilted
    jz = rd_solve(px, inst.d2.values, inst.D2).tilted
    sol = sr_solve(inst, R1)
    if not sol.feasible:
        raise ValueError(f"rate R1={R1} is infeasible; the minimal sum rate is infinite")
    if not np.all(np.isfinite(sol.tilted_yz)):
        raise ValueError("tilted density undefined: the rate multiplier is unbounded at this R1")
    jyz = sol.tilted_yz
    C = covariance(px, jy, jyz)
    rank, min_eig = matrix_rank(C)
    mask = px > 0
    mean = float(px[mask] @ jyz[mask])
    t_joint = float(px[mask] @ np.abs(jyz[mask] - mean) ** 3)
    return DispersionReport(
        v_d1=float(C[0, 0]),
        v_d2=variance(px, jz),
        v_joint=float(C[1, 1]),
        matrix=C,
        t_joint=t_joint,
        rank=rank,
        min_eigenvalue=min_eig,
        means=(float(px[mask] @ jy[mask]), mean),
        lam=sol.lam,
    )


def be_remainder(report, n: int) -> float:
    """Berry-Esseen remainder ``6 T / (sqrt(n) V^{3/2})`` of the joint tilted density."""
    if not report.v_joint > 0:
        raise ValueError("degenerate dispersion")
    return 6.0 * report.t_joint / (np.sqrt(n) * report.v_joint**1.5)


def dispersion_curve(px, d, levels):
    """``(D, V(D|P_X))`` pairs over a grid of distortion levels."""
    return [(float(D), rate_dispersion(px, d, D)) for D in levels]
