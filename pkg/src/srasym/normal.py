"""Gaussian tail functions, the bivariate Gaussian cdf and second-order regions.

Covers ``Q``, ``Q^{-1}``, ``Psi(x, y; 0, V)`` for rank-1 and rank-2
covariances, the three second-order coding regions and the moderate
deviations constants.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad
from scipy.special import ndtr, ndtri

RANK_RTOL = 1e-9
RANK_ATOL = 1e-14
UPPER_POINTS = 100  # samples on the branch approaching the L1 asymptote
MAX_TURN = 0.05  # radians between consecutive boundary segments
CASES = ("i", "ii", "iii")


def q_func(x):
    """Standard Gaussian complementary cdf."""
    return ndtr(-np.asarray(x, dtype=float)) if np.ndim(x) else float(ndtr(-float(x)))


def q_inv(p: float) -> float:
    """Inverse of :func:`q_func` on ``(0, 1)``, polished by Newton steps to 1e-12."""
    p = float(p)
    if not 0.0 < p < 1.0:
        raise ValueError("q_inv requires p strictly inside (0, 1)")
    x = -float(ndtri(p))
    for _ in range(50):
        r = q_func(x) - p
        if abs(r) <= 1e-12 * min(1.0, 1e3 * p):
            break
        dens = np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)
        if dens == 0.0:
            break
        x += r / dens
    return x


def _phi(t):
    return np.exp(-0.5 * t * t) / np.sqrt(2.0 * np.pi)


def _orthant_rank2(h, k, rho, tol):
    """``P(U <= h, V <= k)`` for standard normals with correlation ``rho``."""
    if rho == 0.0:
        return float(ndtr(h) * ndtr(k))
    s = np.sqrt((1.0 - rho) * (1.0 + rho))
    lo = -12.0
    hi = min(h, 12.0)
    if hi <= lo:
        return 0.0

    def integrand(t):
        return _phi(t) * ndtr((k - rho * t) / s)

    # the conditional cdf switches around t = k / rho over a width of order s
    points = [k / rho] if lo < k / rho < hi else None
    val, _ = quad(integrand, lo, hi, epsabs=tol * 1e-2, epsrel=1e-12, limit=500, points=points)
    if h > 12.0:
        val += float(ndtr(k) * ndtr(-12.0))  # negligible remainder beyond the cutoff
    return float(min(max(val, 0.0), 1.0))


def bivariate_psi(x: float, y: float, cov, tol: float = 1e-8) -> float:
    """``P(U1 <= x, U2 <= y)`` for a zero-mean Gaussian with covariance ``cov``.

    Rank-2 covariances use adaptive quadrature of the conditional cdf. For
    rank 1 with ``cov[0,1] > 0`` the vector lies on a line and the value is
    ``Phi(min(x / sqrt(v1), y * sqrt(v1) / c))``; a single zero variance
    gives a point mass on that axis.
    """
    C = np.asarray(cov, dtype=float)
    if C.shape != (2, 2) or not np.allclose(C, C.T, atol=1e-12):
        raise ValueError("covariance must be a symmetric 2x2 matrix")
    v1, v2, c = float(C[0, 0]), float(C[1, 1]), float(C[0, 1])
    eig = np.linalg.eigvalsh(C)
    trace = v1 + v2
    if eig.min() < -1e-10 * max(trace, 1.0):
        raise ValueError("covariance is not positive semidefinite")
    rank = 0 if trace <= RANK_ATOL else int(np.sum(eig > RANK_RTOL * trace))
    if rank == 0:
        raise ValueError("degenerate dispersion matrix")
    if rank == 2:
        rho = float(np.clip(c / np.sqrt(v1 * v2), -1.0, 1.0))
        return _orthant_rank2(x / np.sqrt(v1), y / np.sqrt(v2), rho, tol)
    small = RANK_RTOL * trace
    if v1 <= small:
        return float(x >= 0) * float(ndtr(y / np.sqrt(v2)))
    if v2 <= small:
        return float(y >= 0) * float(ndtr(x / np.sqrt(v1)))
    if c < 0:
        raise ValueError("rank-1 covariance with negative correlation is not supported")
    return float(ndtr(min(x / np.sqrt(v1), y * np.sqrt(v1) / c)))


@dataclass(frozen=True)
class RegionQuery:
    case_tag: str
    epsilon: float
    report: object  # DispersionReport or any object with v_d1, v_joint, matrix
    lam: float = 0.0

    def __post_init__(self):
        if self.case_tag not in CASES:
            raise ValueError(f"case tag must be one of {CASES}")
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError("epsilon must lie strictly inside (0, 1)")
        if not self.lam >= 0:
            raise ValueError("lambda must be non-negative")


@dataclass(frozen=True)
class RegionBoundary:
    case_tag: str
    points: np.ndarray  # rows (L1, L2)
    closed_form: str | None = None
    corner: tuple | None = None

    def to_rows(self):
        return [(float(a), float(b)) for a, b in self.points]


@dataclass(frozen=True)
class MdcQuery:
    theta1: float
    theta2: float
    report: object
    lam: float = 0.0
    theta: float = field(init=False)

    def __post_init__(self):
        if not (self.theta1 > 0 and self.theta2 > 0):
            raise ValueError("theta1 and theta2 must be positive")
        object.__setattr__(self, "theta", self.lam * self.theta1 + self.theta2)


def default_l1_grid(v_d1: float, epsilon: float, points: int = 200):
    a = np.sqrt(v_d1) * q_inv(epsilon)
    return np.linspace(a - 0.5, a + 6.0, points)


def _is_all_ones(C, tol=1e-10):
    v = C[0, 0]
    return v > 0 and np.all(np.abs(C - v) <= tol * max(1.0, v))


def _l2_on_boundary(L1, lam, C, target, tol=1e-8):
    """Smallest ``L2`` with ``Psi(L1, lam L1 + L2) >= target``, or ``None``."""
    cap = bivariate_psi(L1, 1e6, C)
    if cap < target:
        return None
    span = np.sqrt(max(C[1, 1], 1e-300))
    lo = -lam * L1 - span
    while bivariate_psi(L1, lam * L1 + lo, C) >= target:
        lo -= 2.0 * (1.0 + abs(lo))
    hi = -lam * L1 + span
    while bivariate_psi(L1, lam * L1 + hi, C) < target:
        hi += 2.0 * (1.0 + abs(hi))
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if bivariate_psi(L1, lam * L1 + mid, C) >= target:
            hi = mid
        else:
            lo = mid
    return hi


def l1_on_boundary(query: RegionQuery, L2: float, tol: float = 1e-8) -> float:
    """Smallest ``L1`` in the case-(iii) region at a given ``L2``."""
    C = np.asarray(query.report.matrix, dtype=float)
    target = 1.0 - query.epsilon
    lam = query.lam

    def inside(L1):
        return bivariate_psi(L1, lam * L1 + L2, C) >= target

    if lam == 0 and not inside(1e6):
        raise ValueError("no L1 reaches the target at this L2")
    a = np.sqrt(C[0, 0]) * q_inv(query.epsilon)
    lo, hi = a - 1.0, a + 1.0
    while inside(lo):
        lo -= 2.0 * (1.0 + abs(lo))
    while not inside(hi):
        hi += 2.0 * (1.0 + abs(hi))
        if hi > 1e6:
            raise ValueError("no L1 reaches the target at this L2")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if inside(mid):
            hi = mid
        else:
            lo = mid
    return hi


def second_order_region(query: RegionQuery, l1_grid=None, closed_form: bool = True) -> RegionBoundary:
    """Sampled boundary of the second-order coding region.

    Cases (i) and (ii) are half-planes. Case (iii) solves
    ``Psi(L1, lam L1 + L2, V) = 1 - eps`` for ``L2`` by bisection over the
    ``L1`` grid; grid points left of the ``L1`` asymptote have no solution
    and are omitted; the branch approaching the ``L1`` asymptote is sampled
    in ``L2`` instead, and sharp bends are refined until consecutive
    segments turn by at most ``MAX_TURN``. For an all-ones matrix and ``closed_form=True`` the
    rectangle is returned directly, with its vertical half-line sampled too.
    """
    rep, eps, lam = query.report, query.epsilon, query.lam
    qi = q_inv(eps)
    grid = default_l1_grid(rep.v_d1, eps) if l1_grid is None else np.asarray(l1_grid, dtype=float)
    if query.case_tag == "i":
        b = np.sqrt(rep.v_joint) * qi
        pts = np.column_stack([grid, b - lam * grid])
        return RegionBoundary("i", pts, f"lam*L1 + L2 >= {float(b)!r}")
    if query.case_tag == "ii":
        a = np.sqrt(rep.v_d1) * qi
        l2 = np.linspace(-3.0, 6.0, grid.size)
        pts = np.column_stack([np.full(grid.size, a), l2])
        return RegionBoundary("ii", pts, f"L1 >= {float(a)!r}")
    C = np.asarray(rep.matrix, dtype=float)
    rank = int(np.sum(np.linalg.eigvalsh(C) > RANK_RTOL * np.trace(C))) if np.trace(C) > RANK_ATOL else 0
    if rank == 0:
        raise ValueError("degenerate dispersion matrix")
    if closed_form and _is_all_ones(C):
        a = np.sqrt(C[0, 0]) * qi
        corner_l2 = a - lam * a
        right = grid[grid > a]
        vertical = np.linspace(corner_l2 + (grid[-1] - grid[0]), corner_l2, grid.size)
        pts = np.vstack(
            [
                np.column_stack([np.full(vertical.size, a), vertical]),
                np.column_stack([right, a - lam * right]),
            ]
        )
        return RegionBoundary("iii", pts, f"min(L1, lam*L1 + L2) >= {float(a)!r}", corner=(a, corner_l2))
    target = 1.0 - eps
    rows = []
    for L1 in grid:
        L2 = _l2_on_boundary(float(L1), lam, C, target)
        if L2 is not None:
            rows.append((float(L1), L2))
    if rows:
        # the branch rising toward the L1 asymptote is too steep for the L1 grid;
        # sample it in L2 over the same extent as the closed-form half-line
        top = rows[0][1]
        span = float(grid[-1] - grid[0])
        lifts = top + span * np.linspace(0.0, 1.0, UPPER_POINTS + 1)[1:] ** 2
        upper = [(l1_on_boundary(query, float(L2)), float(L2)) for L2 in lifts[::-1]]
        rows = _refine_polyline(upper + rows, lambda u, v: bivariate_psi(u, lam * u + v, C) >= target)
    return RegionBoundary("iii", np.array(rows).reshape(-1, 2), None)


def _onto_boundary(point, inside, tol=1e-10):
    """Move ``point`` along ``(1, 1)`` onto the boundary of an upper set."""
    x, y = point
    lo, hi = -1e-3, 1e-3
    while inside(x + lo, y + lo):
        lo *= 2.0
    while not inside(x + hi, y + hi):
        hi *= 2.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if inside(x + mid, y + mid):
            hi = mid
        else:
            lo = mid
    return (x + hi, y + hi)


def _turns(pts):
    seg = np.diff(np.asarray(pts), axis=0)
    ang = np.arctan2(seg[:, 1], seg[:, 0])
    return np.abs(np.diff(ang))


def _refine_polyline(pts, inside, max_turn=MAX_TURN, min_len=1e-6, max_points=2000):
    """Insert boundary points around vertices that turn by more than ``max_turn``.

    A genuine corner keeps its turn; refinement there stops once the
    adjacent segments are shorter than ``min_len``.
    """
    pts = list(pts)
    while len(pts) < max_points:
        turns = _turns(pts)
        split = set()
        for i in np.flatnonzero(turns > max_turn):
            for j in (i, i + 1):  # segments on either side of vertex i + 1
                if np.hypot(pts[j + 1][0] - pts[j][0], pts[j + 1][1] - pts[j][1]) > min_len:
                    split.add(int(j))
        if not split:
            break
        for j in sorted(split, reverse=True):
            mid = (0.5 * (pts[j][0] + pts[j + 1][0]), 0.5 * (pts[j][1] + pts[j + 1][1]))
            pts.insert(j + 1, _onto_boundary(mid, inside))
    return pts


def gaussian_approximation(L1, L2, report, lam=0.0, case_tag="iii"):
    """Second-order estimate of the excess-distortion probability at ``(L1, L2)``."""
    if case_tag == "i":
        return float(q_func((lam * L1 + L2) / np.sqrt(report.v_joint)))
    if case_tag == "ii":
        return float(q_func(L1 / np.sqrt(report.v_d1)))
    return 1.0 - bivariate_psi(L1, lam * L1 + L2, report.matrix)


def mdc_constant(query: MdcQuery, case_tag: str) -> float:
    """Moderate deviations constant in case ``i``, ``ii`` or ``iii``."""
    rep = query.report
    if case_tag not in CASES:
        raise ValueError(f"case tag must be one of {CASES}")
    if not (rep.v_d1 > 0 and rep.v_joint > 0):
        raise ValueError("moderate deviations constant needs positive dispersions")
    first = query.theta**2 / (2.0 * rep.v_joint)
    second = query.theta1**2 / (2.0 * rep.v_d1)
    if case_tag == "i":
        return first
    if case_tag == "ii":
        return second
    value = min(first, second)
    assert value == min(mdc_constant(query, "i"), mdc_constant(query, "ii"))
    return value
