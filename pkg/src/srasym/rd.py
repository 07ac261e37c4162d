"""Single-decoder rate-distortion functions and D-tilted information densities.

The solver fixes a Lagrange slope ``s``, runs the two-block alternating
minimization (test channel, output law) to convergence, and searches ``s``
so that the expected distortion meets the target level.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .core import DistortionMatrix, Pmf

log = logging.getLogger(__name__)

MAX_SWEEPS = 100_000
PRUNE_MASS = 1e-14


class ConvergenceError(RuntimeError):
    """Raised when an iterative solver hits its iteration cap."""

    def __init__(self, message, gap=float("nan")):
        super().__init__(f"{message} (final gap {gap:.3e})")
        self.gap = gap


@dataclass(frozen=True)
class RdSolution:
    rate: float
    test_channel: np.ndarray
    output_law: np.ndarray
    slope: float
    tilted: np.ndarray
    achieved_distortion: float
    D: float
    px: np.ndarray
    d: np.ndarray
    sweeps: int = 0

    def to_dict(self) -> dict:
        return {
            "rate": self.rate,
            "slope": self.slope,
            "test_channel": self.test_channel.tolist(),
            "tilted": self.tilted.tolist(),
            "output_law": self.output_law.tolist(),
            "achieved_distortion": self.achieved_distortion,
        }


def mutual_information(px, channel) -> float:
    px = np.asarray(px, dtype=float)
    W = np.asarray(channel, dtype=float)
    q = px @ W
    joint = px[:, None] * W
    mask = joint > 0
    ratio = np.ones_like(W)
    ratio[mask] = W[mask] / np.broadcast_to(q, W.shape)[mask]
    return float(np.sum(joint[mask] * np.log(ratio[mask])))


def blahut_arimoto(px, d, slope, q0=None, tol=1e-14, max_sweeps=MAX_SWEEPS, strict=True):
    """Alternating minimization of ``I(X;Y) + slope * E[d]`` at a fixed slope.

    Returns ``(q, sweeps, gap)`` where ``q`` is the output law. The
    Lagrangian upper bound must not increase from one sweep to the next;
    the loop stops once it is within ``tol`` of the standard lower bound.
    With ``strict=False`` the last iterate is returned at the sweep cap
    instead of raising :class:`ConvergenceError`.
    """
    px = np.asarray(px, dtype=float)
    A = np.exp(-slope * np.asarray(d, dtype=float))
    ny = A.shape[1]
    q = np.full(ny, 1.0 / ny) if q0 is None else np.array(q0, dtype=float)
    prev = np.inf
    gap = np.inf
    for sweep in range(1, max_sweeps + 1):
        z = A @ q
        upper = -float(px @ np.log(z))
        if upper > prev + 1e-12 * (1.0 + abs(prev)):
            raise AssertionError(f"alternating minimization objective increased: {prev!r} -> {upper!r}")
        prev = upper
        c = (px / z) @ A
        gap = float(np.log(c.max()))
        if gap <= tol:
            return q, sweep, gap
        q = q * c
        q /= q.sum()
    if not strict:
        return q, max_sweeps, gap
    raise ConvergenceError(f"Blahut-Arimoto did not converge in {max_sweeps} sweeps at slope {slope}", gap)


def _channel(q, A):
    W = A * q[None, :]
    return W / W.sum(axis=1, keepdims=True)


def max_distortion(px, d):
    """Smallest distortion reachable with a constant reproduction, and its column."""
    col = np.asarray(px, dtype=float) @ np.asarray(d, dtype=float)
    j = int(np.argmin(col))
    return float(col[j]), j


def _tilted(px, d, q, slope, D):
    keep = q >= PRUNE_MASS
    qk = q[keep] / q[keep].sum()
    A = np.exp(-slope * (np.asarray(d)[:, keep] - D))
    return -np.log(A @ qk)


def _newton_on_support(p, d, S, qs, s, D, max_iter=60):
    """Solve ``c(y) = 1`` for ``y`` in ``S`` together with ``E[d] = D``.

    Masses may go negative during the iteration; the caller decides what
    to do with a negative solution. Returns ``(qs, s)`` or ``None``.
    """
    k = S.size
    dS = d[:, S]

    def residual(u):
        A = np.exp(-u[k] * dS)
        z = A @ u[:k]
        if np.any(z <= 1e-300):
            return None
        c = (p / z) @ A
        m = (A * dS) @ u[:k]
        r = np.append(c - 1.0, float(p @ (m / z)) - D)
        if not np.all(np.isfinite(r)):
            return None
        return r, A, z, m

    def jacobian(u, A, z, m):
        w = p / z**2
        Ad = A * dS
        cross = (A * (w * m)[:, None]).sum(axis=0)
        J = np.empty((k + 1, k + 1))
        J[:k, :k] = -(A * w[:, None]).T @ A
        J[:k, k] = -(p / z) @ Ad + cross
        J[k, :k] = (p / z) @ Ad - cross
        J[k, k] = -float(p @ ((Ad * dS) @ u[:k] / z)) + float(p @ (m * m / z**2))
        return J

    u = np.append(qs, s)
    out = residual(u)
    if out is None:
        return None
    r, A, z, m = out
    norm = np.abs(r).max()
    for _ in range(max_iter):
        if norm < 1e-15:
            break
        with np.errstate(all="ignore"):
            J = jacobian(u, A, z, m)
        if not np.all(np.isfinite(J)):
            return None
        try:
            step = np.linalg.lstsq(J, -r, rcond=None)[0]
        except np.linalg.LinAlgError:
            return None
        t = 1.0
        while t > 1e-8:
            cand = u + t * step
            out = residual(cand) if cand[k] > 0 else None
            if out is not None and np.abs(out[0]).max() < norm:
                break
            t *= 0.5
        else:
            break
        u = cand
        r, A, z, m = out
        norm = np.abs(r).max()
    if norm > 1e-12:
        return None
    return u[:k], float(u[k])


def _polish(p, d, q, s, D):
    """Active-set Newton refinement of an approximate fixed point.

    Starts from the support of ``q``, drops outputs whose mass turns
    negative and adds outputs that violate ``c(y) <= 1``. Returns
    ``(q, s)`` or ``None`` if no consistent support is found.
    """
    ny = q.size
    S = np.flatnonzero(q > 1e-12)
    seen = set()
    for _ in range(2 * ny + 2):
        key = tuple(S)
        if key in seen or S.size == 0:
            return None
        seen.add(key)
        qs = np.maximum(q[S], 1e-12)
        res = _newton_on_support(p, d, S, qs / qs.sum(), s, D)
        if res is None:
            # a vanishing output makes the system singular; retry without it
            if S.size < 2:
                return None
            S = np.delete(S, np.argmin(q[S]))
            continue
        qs, s_new = res
        if np.any(qs < 0):
            # a diverged step can push live outputs negative, so drop the lightest starting mass
            S = np.delete(S, np.argmin(q[S]))
            continue
        qn = np.zeros(ny)
        qn[S] = qs
        A = np.exp(-s_new * d)
        c = (p / (A @ qn)) @ A
        outside = np.setdiff1d(np.arange(ny), S)
        if outside.size and c[outside].max() > 1.0 + 1e-11:
            j = outside[np.argmax(c[outside])]
            S = np.sort(np.append(S, j))
            q = qn.copy()
            q[j] = 1e-6
            s = s_new
            continue
        return qn / qn.sum(), s_new
    return None


def rd_solve(px, d, D, tol=1e-9) -> RdSolution:
    """Rate-distortion function ``R(P_X, D)`` with its optimal test channel.

    ``tol`` is the target accuracy of the rate in nats.
    """
    px = Pmf(px).probs
    d = DistortionMatrix(d).values
    if d.shape[0] != px.size:
        raise ValueError("distortion matrix row count must match the source alphabet")
    if not D > 0:
        raise ValueError("distortion level must be positive")
    D = float(D)
    nx, ny = d.shape
    dmax, jmax = max_distortion(px, d)
    if D >= dmax:
        W = np.zeros((nx, ny))
        W[:, jmax] = 1.0
        q = np.zeros(ny)
        q[jmax] = 1.0
        return RdSolution(0.0, W, q, 0.0, np.zeros(nx), dmax, D, px, d)

    # zero-mass source symbols do not influence the optimum
    live = px > 0
    p, dl = px[live], d[live]
    uniform = np.full(ny, 1.0 / ny)
    state = {"q": uniform, "sweeps": 0}
    # the search only needs a rough slope; Newton supplies the final digits
    inner_tol = min(tol, 1e-9) * 1e-2

    def excess(s):
        q0 = 0.999 * state["q"] + 0.001 * uniform
        q, sweeps, _ = blahut_arimoto(p, dl, s, q0=q0, tol=inner_tol, max_sweeps=5_000, strict=False)
        state["sweeps"] += sweeps
        state["q"] = q
        W = _channel(q, np.exp(-s * dl))
        return float(np.sum(p[:, None] * W * dl)) - D

    s_hi = 1.0
    while excess(s_hi) > 0:
        s_hi *= 2.0
        if s_hi > 1e4:
            raise ConvergenceError("could not bracket the slope", np.nan)
    s_lo = s_hi / 2.0 if s_hi > 1.0 else 0.0
    s = brentq(excess, s_lo, s_hi, xtol=1e-13, rtol=1e-13, maxiter=200)
    excess(s)
    q = state["q"]
    polished = _polish(p, dl, q, s, D)
    if polished is None:
        log.warning("Newton polish failed at D=%g; keeping the alternating-minimization solution", D)
    else:
        q, s = polished
    q = np.where(q >= PRUNE_MASS, q, 0.0)
    q /= q.sum()
    W = _channel(q, np.exp(-s * d))
    q_out = px @ W
    achieved = float(np.sum(px[:, None] * W * d))
    rate = mutual_information(px, W)
    tilted = _tilted(px, d, q, s, D)
    return RdSolution(rate, W, q_out, float(s), tilted, achieved, D, px, d, state["sweeps"])


def tilted_density(sol: RdSolution, x: int) -> float:
    """D-tilted information density of source symbol ``x``."""
    if not 0 <= x < sol.tilted.size:
        raise IndexError(f"symbol index {x} out of range")
    return float(sol.tilted[x])


class RateDistortion(TransformerMixin, BaseEstimator):
    """Estimator wrapper around :func:`rd_solve`.

    ``fit(px, d)`` solves the problem; ``transform(x)`` maps source symbol
    indices to their D-tilted information densities.
    """

    def __init__(self, D=0.1, tol=1e-9):
        self.D = D
        self.tol = tol

    def fit(self, px, d=None):
        if d is None:
            raise ValueError("a distortion matrix is required")
        sol = rd_solve(px, d, self.D, tol=self.tol)
        self.solution_ = sol
        self.rate_ = sol.rate
        self.slope_ = sol.slope
        self.test_channel_ = sol.test_channel
        self.tilted_ = sol.tilted
        return self

    def transform(self, X):
        check_is_fitted(self, "solution_")
        x = np.asarray(X, dtype=int)
        if np.any((x < 0) | (x >= self.tilted_.size)):
            raise IndexError("symbol index out of range")
        return self.tilted_[x]
