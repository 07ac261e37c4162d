"""Minimal sum rate for successive refinement and its tilted information density.

For a rate ``R1`` at the first decoder the solver returns

    R(R1, D1, D2 | P) = min I(X;YZ)  s.t.  E d1 <= D1, E d2 <= D2, I(X;Y) <= R1

together with the optimal joint test channel and the Lagrange multipliers
``(lam, nu1, nu2)``.

Scheme: for a fixed weight ``lam`` on ``I(X;Y)`` the objective
``I(X;YZ) + lam * I(X;Y)`` is minimized by alternating between the joint
test channel (closed form) and the reference law ``Q_YZ``; the distortion
multipliers are re-maximized exactly at every sweep so that both distortion
constraints hold throughout. An outer search picks the smallest ``lam`` for
which the rate constraint holds, and a Newton step on the stationarity
system refines the result to near machine precision.
"""

from __future__ import annotations

import logging
import threading
import warnings
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .core import SourceInstance, entropy, validate_instance
from .rd import ConvergenceError, mutual_information, rd_solve

log = logging.getLogger(__name__)

MAX_SWEEPS = 100_000
LAMBDA_CAP = 1e6
NU_CAP = 1e8
SUPPORT_FLOOR = 1e-13
BOUNDARY_SLACK = 1e-9
BOUNDARY_LAMBDA = 1e3


class Infeasible:
    """Marker for an empty feasible set; the minimal sum rate is +infinity."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "INFEASIBLE"

    def __reduce__(self):
        return (Infeasible, ())


INFEASIBLE = Infeasible()


@dataclass(frozen=True)
class GeneralizedTilted:
    lam: float
    nu1: float
    nu2: float
    reference_law: np.ndarray
    values: np.ndarray


@dataclass(frozen=True)
class SrSolution:
    value: object  # float, or INFEASIBLE
    R1: float
    test_channel: np.ndarray | None = None  # shape (|X|, |Y|, |Z|)
    lam: float = 0.0
    nu1: float = 0.0
    nu2: float = 0.0
    tilted_yz: np.ndarray | None = None
    active: dict = field(default_factory=dict)
    rate_y: float = float("nan")  # achieved I(X;Y)
    distortions: tuple = (float("nan"), float("nan"))
    gap: float = float("nan")  # |dual - primal| at the returned point
    sweeps: int = 0

    @property
    def feasible(self) -> bool:
        return self.value is not INFEASIBLE

    @property
    def output_law(self) -> np.ndarray:
        return np.einsum("x,xyz->yz", self._px, self.test_channel)

    def to_dict(self) -> dict:
        if not self.feasible:
            return {"value": "infeasible", "R1": self.R1}
        return {
            "value": self.value,
            "R1": self.R1,
            "lambda": self.lam,
            "nu1": self.nu1,
            "nu2": self.nu2,
            "tilted_yz": self.tilted_yz.tolist(),
            "test_channel": self.test_channel.tolist(),
            "active": dict(self.active),
            "rate_y": self.rate_y,
            "distortions": list(self.distortions),
        }


class _Problem:
    """Arrays of one instance, restricted to source symbols with positive mass."""

    def __init__(self, px, d1, d2, D1, D2, R1):
        self.px_full = np.asarray(px, dtype=float)
        self.d1_full = np.asarray(d1, dtype=float)
        self.d2_full = np.asarray(d2, dtype=float)
        self.live = self.px_full > 0
        self.p = self.px_full[self.live]
        self.d1 = self.d1_full[self.live]
        self.d2 = self.d2_full[self.live]
        self.D1, self.D2, self.R1 = float(D1), float(D2), float(R1)
        self.ny = self.d1.shape[1]
        self.nz = self.d2.shape[1]


def logsumexp(a, axis):
    """``log(sum(exp(a)))`` along ``axis``; all ``-inf`` slices give ``-inf``."""
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True)) + m
    return np.squeeze(out, axis=axis)


def _tilt(d1, d2, Q, lam, nu1, nu2):
    """Closed-form minimizing channel for reference law ``Q`` and multipliers.

    Returns a dict with the channel pieces and the per-symbol quantities
    needed for the dual function and its derivatives.
    """
    kappa = 1.0 / (1.0 + lam)
    with np.errstate(divide="ignore", invalid="ignore"):
        Qy = Q.sum(axis=1)
        logQ = np.log(Q)
        logQy = np.log(Qy)
        logE2 = -nu2 * d2
        joint = logQ[None, :, :] + logE2[:, None, :]
        logH = logsumexp(joint, axis=2)
        a = logH - logQy[None, :] - nu1 * d1
        # outputs y with no reference mass carry no channel mass either
        a = np.where(np.isfinite(a), a, 0.0)
        logT = logQy[None, :] + kappa * a
        logZ = logsumexp(logT, axis=1)
        Wy = np.exp(logT - logZ[:, None])
        Wz = np.exp(joint - logH[:, :, None])
    Wz = np.where(np.isfinite(Wz), Wz, 0.0)
    m2 = np.einsum("xyz,xz->xy", Wz, d2)
    v2 = np.einsum("xyz,xz->xy", Wz, d2 * d2) - m2 * m2
    return {"kappa": kappa, "Wy": Wy, "Wz": Wz, "logZ": logZ, "a": a, "m2": m2, "v2": v2}


def _dual_parts(prob, t, lam, nu1, nu2):
    """Value, gradient and Hessian in ``(nu1, nu2)`` of the per-Q dual function."""
    p, Wy, kappa = prob.p, t["Wy"], t["kappa"]
    d1, m2, v2 = prob.d1, t["m2"], t["v2"]
    e1 = np.sum(Wy * d1, axis=1)
    e2 = np.sum(Wy * m2, axis=1)
    value = -(1.0 + lam) * float(p @ t["logZ"]) - nu1 * prob.D1 - nu2 * prob.D2
    grad = np.array([p @ e1 - prob.D1, p @ e2 - prob.D2])
    c11 = np.sum(Wy * d1 * d1, axis=1) - e1 * e1
    c12 = np.sum(Wy * d1 * m2, axis=1) - e1 * e2
    c22 = np.sum(Wy * m2 * m2, axis=1) - e2 * e2
    ev2 = np.sum(Wy * v2, axis=1)
    hess = -np.array(
        [
            [kappa * (p @ c11), kappa * (p @ c12)],
            [kappa * (p @ c12), kappa * (p @ c22) + p @ ev2],
        ]
    )
    return value, grad, hess


def _max_over_nu(prob, Q, lam, nu, tol=1e-14, max_iter=200):
    """Projected Newton ascent of the concave dual in ``(nu1, nu2) >= 0``."""
    nu = np.maximum(np.asarray(nu, dtype=float), 0.0)
    t = _tilt(prob.d1, prob.d2, Q, lam, *nu)
    val, g, H = _dual_parts(prob, t, lam, *nu)
    for _ in range(max_iter):
        free = (nu > 0) | (g > 0)
        if not np.any(free) or np.abs(g[free]).max() <= tol:
            break
        Hf = H[np.ix_(free, free)]
        reg = 1e-14 * (1.0 + np.abs(Hf).max())
        try:
            step_f = np.linalg.solve(-Hf + reg * np.eye(Hf.shape[0]), g[free])
        except np.linalg.LinAlgError:
            step_f = g[free]
        step = np.zeros(2)
        step[free] = step_f
        if not np.all(np.isfinite(step)):
            step = np.where(free, g, 0.0)
        s = 1.0
        improved = False
        while s > 1e-12:
            cand = np.maximum(nu + s * step, 0.0)
            tc = _tilt(prob.d1, prob.d2, Q, lam, *cand)
            vc, gc, Hc = _dual_parts(prob, tc, lam, *cand)
            if vc >= val - 1e-15 * (1.0 + abs(val)):
                improved = True
                break
            s *= 0.5
        if not improved:
            break
        moved = np.abs(cand - nu).max()
        nu, t, val, g, H = cand, tc, vc, gc, Hc
        if nu.max() > NU_CAP:
            raise ConvergenceError("distortion multiplier diverged; constraint unreachable", float(nu.max()))
        if moved <= 1e-15 * (1.0 + nu.max()):
            break
    return nu, t, val


def _marginal(prob, t):
    return np.einsum("x,xy,xyz->yz", prob.p, t["Wy"], t["Wz"])


def _alternate(prob, lam, Q, nu, tol, max_sweeps=MAX_SWEEPS):
    """Alternating minimization at fixed ``lam`` with exact multiplier tracking.

    The per-sweep dual value must not increase; this is asserted.
    Returns ``(Q, nu, value, sweeps)``.
    """
    prev = np.inf
    for sweep in range(1, max_sweeps + 1):
        nu, t, val = _max_over_nu(prob, Q, lam, nu)
        if val > prev + 1e-11 * (1.0 + abs(prev)):
            raise AssertionError(f"alternating minimization objective increased: {prev!r} -> {val!r}")
        Qn = _marginal(prob, t)
        Qn[Qn < SUPPORT_FLOOR * 1e-3] = 0.0
        Qn /= Qn.sum()
        change = np.abs(Qn - Q).max()
        Q = Qn
        if prev - val <= tol and change <= np.sqrt(tol):
            return Q, nu, val, sweep
        prev = min(prev, val)
    log.debug("alternating minimization reached the sweep cap at lam=%g", lam)
    return Q, nu, prev, max_sweeps


def _summary(prob, Q, lam, nu1, nu2):
    """Primal quantities of the channel induced by ``Q`` and the multipliers."""
    t = _tilt(prob.d1, prob.d2, Q, lam, nu1, nu2)
    Wy, Wz = t["Wy"], t["Wz"]
    W = Wy[:, :, None] * Wz
    nx = prob.p.size
    i_yz = mutual_information(prob.p, W.reshape(nx, -1))
    i_y = mutual_information(prob.p, Wy)
    e1 = float(np.sum(prob.p[:, None] * Wy * prob.d1))
    e2 = float(np.sum(prob.p[:, None] * Wy * t["m2"]))
    return {"W": W, "Wy": Wy, "i_yz": i_yz, "i_y": i_y, "e1": e1, "e2": e2, "t": t}


class _Phase:
    """Approximate solution at one value of ``lam`` (warm-started across calls)."""

    def __init__(self, prob, Q0):
        self.prob = prob
        self.Q = Q0
        self.nu = np.zeros(2)
        self.sweeps = 0

    def solve(self, lam, tol=1e-12, max_sweeps=200):
        Q, nu, val, sweeps = _alternate(self.prob, lam, self.Q, self.nu, tol, max_sweeps)
        self.sweeps += sweeps
        state = _summary(self.prob, Q, lam, *nu)
        state.update(Q=Q, nu=nu.copy(), lam=lam, h=val)
        polished = _refine(self.prob, state, False)
        if polished is not None:
            state = polished
            t = _tilt(self.prob.d1, self.prob.d2, state["Q"], lam, *state["nu"])
            state["h"] = _dual_parts(self.prob, t, lam, *state["nu"])[0]
        self.Q, self.nu = state["Q"], np.asarray(state["nu"], dtype=float)
        return state


def _stationarity(prob, Q, m, use_lam, use_nu):
    """Residual of the fixed-point and active-constraint equations."""
    lam, nu1, nu2 = m
    t = _tilt(prob.d1, prob.d2, Q, lam, nu1, nu2)
    res = [(_marginal(prob, t) - Q)]
    extra = []
    if use_lam:
        kappa = t["kappa"]
        dy = float(np.sum(prob.p[:, None] * t["Wy"] * (kappa * t["a"] - t["logZ"][:, None])))
        extra.append(dy - prob.R1)
    e1 = float(np.sum(prob.p[:, None] * t["Wy"] * prob.d1))
    e2 = float(np.sum(prob.p[:, None] * t["Wy"] * t["m2"]))
    if use_nu[0]:
        extra.append(e1 - prob.D1)
    if use_nu[1]:
        extra.append(e2 - prob.D2)
    return res[0], np.array(extra)


def _newton_polish(prob, Q, m, active, max_iter=40):
    """Newton refinement of the stationarity system with a fixed active set.

    ``active`` is a length-3 boolean array over ``(lam, nu1, nu2)``; inactive
    multipliers stay at their given value. Reference-law entries that a
    Newton step would push below zero leave the support. Returns
    ``(Q, m, residual)``.
    """
    use_lam, use_nu = bool(active[0]), (bool(active[1]), bool(active[2]))
    act = np.flatnonzero(active)
    Q = np.asarray(Q, dtype=float)
    m = np.asarray(m, dtype=float)
    for _restart in range(Q.size):
        S = np.flatnonzero(Q.ravel() > SUPPORT_FLOOR)
        k = S.size

        def unpack(u, S=S, k=k):
            Qf = np.zeros(Q.size)
            Qf[S] = u[:k]
            mm = m.copy()
            mm[act] = u[k:]
            return Qf.reshape(Q.shape), mm

        def F(u, k=k, S=S, unpack=unpack):
            Qu, mm = unpack(u)
            if np.any(u[:k] <= 0) or mm[0] <= -0.5:
                return None
            r, extra = _stationarity(prob, Qu, mm, use_lam, use_nu)
            out = np.concatenate([r.ravel()[S], extra])
            return out if np.all(np.isfinite(out)) else None

        u = np.concatenate([Q.ravel()[S], m[act]])
        r = F(u)
        if r is None:
            return Q, m, np.inf
        norm = np.abs(r).max()
        dropped = False
        for _ in range(max_iter):
            if norm < 1e-15:
                break
            J = np.empty((r.size, u.size))
            for j in range(u.size):
                h = 1e-7 * max(abs(u[j]), 1e-4) if j < k else 1e-7 * max(abs(u[j]), 1.0)
                if j < k:
                    h = min(h, 0.5 * u[j])
                up, um = u.copy(), u.copy()
                up[j] += h
                um[j] -= h
                rp, rm = F(up), F(um)
                if rp is None or rm is None:
                    return unpack(u)[0], unpack(u)[1], np.inf
                J[:, j] = (rp - rm) / (2 * h)
            step = np.linalg.lstsq(J, -r, rcond=1e-13)[0]
            full = u + step
            leaving = np.flatnonzero(full[:k] <= 0)
            if leaving.size:
                # entries driven out of the support
                u[leaving] = 0.0
                Q, m = unpack(u)
                Q = Q / Q.sum()
                dropped = True
                break
            s = 1.0
            while s > 1e-6:
                cand = u + s * step
                rc = F(cand)
                if rc is not None and np.abs(rc).max() < norm:
                    break
                s *= 0.5
            else:
                break
            u, r = cand, rc
            norm = np.abs(r).max()
        if dropped:
            continue
        Qu, mm = unpack(u)
        return Qu / Qu.sum(), mm, norm
    return Q, m, np.inf


def _kkt_violation(prob, Q, m, iters=500):
    """Largest first-order gain from moving mass onto an unused output pair.

    The dual objective is convex in the reference law and equals
    ``-(1 + lam) * sum_x p(x) log Z(x)``. Moving mass toward a direction
    ``u`` helps iff ``sum_x p(x) dZ(x)[u] / Z(x) > 1``. Inside a row that
    already carries mass this is linear in ``u``, so single entries are
    checked; for an empty row the gain is concave in ``u`` and is
    maximized over the row simplex. Returns ``(gain, direction)`` with the
    direction shaped like the reference law.
    """
    lam, nu1, nu2 = m
    kappa = 1.0 / (1.0 + lam)
    t = _tilt(prob.d1, prob.d2, Q, lam, nu1, nu2)
    Z = np.exp(t["logZ"])
    E2 = np.exp(-nu2 * prob.d2)
    Qy = Q.sum(axis=1)
    best, direction = 0.0, None
    for y in range(prob.ny):
        zero = np.flatnonzero(Q[y] <= SUPPORT_FLOOR)
        if zero.size == 0:
            continue
        e1 = np.exp(-kappa * nu1 * prob.d1[:, y])
        if Qy[y] > SUPPORT_FLOOR:
            H = E2 @ Q[y]
            T = Qy[y] ** (1.0 - kappa) * H**kappa * e1
            dZ = T[:, None] * ((1.0 - kappa) / Qy[y] + kappa * E2[:, zero] / H[:, None])
            gain = (prob.p / Z) @ dZ
            j = int(np.argmax(gain))
            if gain[j] > best:
                best = float(gain[j])
                direction = np.zeros_like(Q)
                direction[y, zero[j]] = 1.0
            continue
        w = prob.p * e1 / Z
        u = np.full(prob.nz, 1.0 / prob.nz)
        for _ in range(iters):
            s = E2 @ u
            un = u * ((w * s ** (kappa - 1.0)) @ E2)
            un /= un.sum()
            done = np.abs(un - u).max() < 1e-13
            u = un
            if done:
                break
        gain = float(w @ (E2 @ u) ** kappa)
        if gain > best:
            best = gain
            direction = np.zeros_like(Q)
            direction[y] = u
    return best, direction


def _refine(prob, state, lam_active):
    """Polish an approximate solution, adjusting support and active set.

    Returns the polished state, or ``None`` if no stationary point was
    reached. When a later step fails, the last stationary point that
    meets every optimality check within 1e-9 is returned.
    """
    Q = state["Q"]
    m = np.array([state["lam"], *state["nu"]])
    # binding constraints stay active even with a zero multiplier; otherwise
    # Newton drifts along a flat optimal face
    active = np.array(
        [
            lam_active,
            m[1] > 1e-10 or abs(state["e1"] - prob.D1) <= 1e-9,
            m[2] > 1e-10 or abs(state["e2"] - prob.D2) <= 1e-9,
        ]
    )
    last_good = None
    seen = set()
    for _ in range(12):
        Qn, mn, res = _newton_polish(prob, Q, m, active)
        if not np.isfinite(res) or res > 1e-10:
            return last_good
        Qn = np.where(Qn < 1e-11, 0.0, Qn)
        Qn /= Qn.sum()
        s = _summary(prob, Qn, *mn)
        s.update(Q=Qn, lam=mn[0], nu=mn[1:].copy(), residual=res)
        gain, direction = _kkt_violation(prob, Qn, mn)
        viol = max(s["e1"] - prob.D1, s["e2"] - prob.D2)
        if gain <= 1.0 + 1e-9 and viol <= 1e-9 and np.all(mn >= -1e-10):
            last_good = s
        key = (tuple(np.flatnonzero(Qn.ravel())), tuple(active))
        if key in seen:
            return last_good
        seen.add(key)
        changed = False
        for i in (1, 2):
            if active[i] and mn[i] < -1e-10:
                active[i], mn[i], changed = False, 0.0, True
            elif mn[i] < 0:
                mn[i] = 0.0
                s["nu"] = mn[1:].copy()
        if not active[1] and s["e1"] > prob.D1 + 1e-9:
            active[1], changed = True, True
        if not active[2] and s["e2"] > prob.D2 + 1e-9:
            active[2], changed = True, True
        if gain > 1.0 + 1e-9:
            # descend from a point with visible mass on the improving direction
            Qn = 0.99 * Qn + 0.01 * direction
            Qn, nu, _, _ = _alternate(prob, mn[0], Qn, mn[1:], 1e-14, 300)
            mn[1:] = nu
            changed = True
        Q, m = Qn, mn
        if not changed:
            return s
    return last_good


def _smallest_lambda(prob, Q, m):
    """Left end of the optimal ``lam`` interval when the dual is flat down to zero.

    On refinable instances every ``lam`` in ``[0, lam_hat]`` is dual optimal
    and the reported multiplier is zero. Otherwise ``m`` is returned as is.
    """
    lam = m[0]
    if lam <= 0:
        return 0.0, m[1:]
    _, _, val = _max_over_nu(prob, Q, lam, m[1:])
    target = val - lam * prob.R1
    nu0, _, v0 = _max_over_nu(prob, Q, 0.0, np.array([0.0, m[2]]))
    if v0 >= target - 1e-12 * (1.0 + abs(target)):
        return 0.0, nu0
    return lam, m[1:]


def _tilted_values(prob, Q, lam, nu1, nu2, R1, D1, D2):
    """Tilted information density at every source symbol, including zero-mass ones."""
    d1, d2 = prob.d1_full, prob.d2_full
    t = _tilt(d1, d2, Q, lam, nu1, nu2)
    # the channel for zero-mass symbols comes from the same closed form
    W = t["Wy"][:, :, None] * t["Wz"]
    Pyz = np.einsum("x,xyz->yz", prob.px_full, W)
    Py = Pyz.sum(axis=1)
    keep = Pyz > SUPPORT_FLOOR
    with np.errstate(divide="ignore", invalid="ignore"):
        info_y = np.log(t["Wy"] / Py[None, :])
    expo = (
        -lam * (info_y[:, :, None] - R1)
        - nu1 * (d1[:, :, None] - D1)
        - nu2 * (d2[:, None, :] - D2)
    )
    expo = np.where(keep[None], expo, -np.inf)
    logw = np.where(keep, np.log(np.where(keep, Pyz, 1.0)), -np.inf)
    return -logsumexp(expo + logw[None], axis=(1, 2)), W, Pyz


def sr_solve(inst: SourceInstance, R1: float, tol: float = 1e-7, init=None) -> SrSolution:
    """Minimal sum rate ``R(R1, D1, D2 | P_X)`` with multipliers and tilted densities.

    ``init`` optionally supplies a starting reference law of shape
    ``(|Y|, |Z|)``; the default is uniform. Returns an infeasible solution
    when ``R1`` is below ``R_Y(P_X, D1)`` by more than 1e-9 nats.
    """
    inst = validate_instance(inst)
    R1 = float(R1)
    px = inst.px.probs
    d1, d2 = inst.d1.values, inst.d2.values
    rd1 = rd_solve(px, d1, inst.D1)
    if R1 < rd1.rate - 1e-9:
        return SrSolution(value=INFEASIBLE, R1=R1)
    if R1 > rd1.rate + BOUNDARY_SLACK:
        return _interior_solve(inst, R1, tol, init)
    try:
        sol = _interior_solve(inst, R1, tol, init)
        if sol.lam < BOUNDARY_LAMBDA:
            return sol
    except ConvergenceError:
        pass
    # the rate multiplier diverges at the boundary
    return _boundary_solve(inst, R1, rd1)


def _boundary_solve(inst, R1, rd1) -> SrSolution:
    """Minimal sum rate at ``R1 = R_Y(P_X, D1)`` when the rate multiplier is unbounded.

    There the first stage must use the optimal single-decoder channel, so
    the value is ``R_Y + min I(X;Z|Y)`` subject to the second distortion
    constraint. The conditional problem is an ordinary rate-distortion
    problem for the pair ``(X, Y)`` with reproduction ``(Y', Z)`` and a
    prohibitive penalty unless ``Y' = Y``; its rate exceeds ``I(X;Z|Y)``
    by ``H(Y)``. Multipliers and tilted densities are not finite here.
    """
    px = inst.px.probs
    d2 = inst.d2.values
    W1 = rd1.test_channel
    nx, ny, nz = inst.shape
    pxy = (px[:, None] * W1).reshape(-1)
    pxy = np.where(pxy > 1e-300, pxy, 0.0)
    pxy /= pxy.sum()
    penalty = 1e3 * (1.0 + d2.max())
    aug = np.full((nx, ny, ny, nz), penalty)
    for y in range(ny):
        aug[:, y, y, :] = d2
    aug = aug.reshape(nx * ny, ny * nz)
    rz_cond = rd_solve(pxy, aug, inst.D2)
    cond = rz_cond.test_channel.reshape(nx, ny, ny, nz)
    Wz = np.einsum("xyyz->xyz", cond)
    W = W1[:, :, None] * Wz
    py = px @ W1
    conditional = max(rz_cond.rate - entropy(py), 0.0)
    value = rd1.rate + conditional
    e2 = float(np.einsum("x,xyz,xz->", px, W, d2))
    sol = SrSolution(
        value=float(value),
        R1=R1,
        test_channel=W,
        lam=float("inf"),
        nu1=float("nan"),
        nu2=float("nan"),
        tilted_yz=np.full(nx, np.nan),
        active={"rate": True, "d1": True, "d2": bool(abs(e2 - inst.D2) <= 1e-9)},
        rate_y=rd1.rate,
        distortions=(rd1.achieved_distortion, e2),
        gap=float("nan"),
    )
    object.__setattr__(sol, "_px", px)
    return sol


def _interior_solve(inst, R1, tol, init) -> SrSolution:
    px = inst.px.probs
    d1, d2 = inst.d1.values, inst.d2.values
    prob = _Problem(px, d1, d2, inst.D1, inst.D2, R1)
    ny, nz = prob.ny, prob.nz
    Q0 = np.full((ny, nz), 1.0 / (ny * nz)) if init is None else np.asarray(init, float) / np.sum(init)
    phase = _Phase(prob, Q0)
    slack = 1e-10

    cur = phase.solve(0.0)
    lam_active = False
    refined = None
    if cur["i_y"] > R1 + slack:
        lo_state = cur
        lam_hi = 1.0
        hi_state = phase.solve(lam_hi)
        while hi_state["i_y"] > R1 + slack:
            lo_state = hi_state
            lam_hi *= 4.0
            if lam_hi > LAMBDA_CAP:
                log.warning("rate constraint near the infeasible boundary; lam capped at %g", LAMBDA_CAP)
                break
            hi_state = phase.solve(lam_hi)
        lam_lo = lo_state["lam"]
        if hi_state["i_yz"] <= cur["i_yz"] + 1e-10:
            # meets the rate constraint at the unconstrained optimum value
            cur = hi_state
        else:
            refined = None
            for width in (5e-2, 1e-4, 1e-8):
                while lam_hi - lam_lo > width * (1.0 + lam_hi):
                    lam_mid = 0.5 * (lam_lo + lam_hi)
                    mid = phase.solve(lam_mid)
                    if mid["i_y"] > R1 + slack:
                        lam_lo = lam_mid
                    else:
                        lam_hi, hi_state = lam_mid, mid
                # the rate constraint binds; Newton solves for lam directly
                refined = _refine(prob, hi_state, True)
                if refined is not None and refined["lam"] >= 0:
                    break
            cur = hi_state
            lam_active = True

    if not lam_active or refined is None:
        refined = _refine(prob, cur, lam_active)
    if refined is None and lam_active:
        refined = _refine(prob, cur, False)
    if refined is None:
        log.warning("Newton refinement failed; returning the alternating-minimization iterate")
        refined = cur
        refined["residual"] = np.nan
    Q = refined["Q"]
    lam, (nu1, nu2) = refined["lam"], refined["nu"]
    value = refined["i_yz"]
    lam, nu = _smallest_lambda(prob, Q, np.array([lam, nu1, nu2]))
    nu1, nu2 = float(nu[0]), float(nu[1])
    dual, _, _ = _dual_parts(prob, _tilt(prob.d1, prob.d2, Q, lam, nu1, nu2), lam, nu1, nu2)
    gap = abs(dual - lam * R1 - value)
    if gap > tol:
        raise ConvergenceError("primal-dual gap above tolerance", gap)
    tilted, W, _ = _tilted_values(prob, Q, lam, nu1, nu2, R1, inst.D1, inst.D2)
    # the reported channel uses the final Q; for stripped symbols it is the closed form
    active = {
        "rate": bool(lam > 0 or abs(refined["i_y"] - R1) <= 1e-9),
        "d1": bool(nu1 > 0 or abs(refined["e1"] - inst.D1) <= 1e-9),
        "d2": bool(nu2 > 0 or abs(refined["e2"] - inst.D2) <= 1e-9),
    }
    sol = SrSolution(
        value=float(value),
        R1=R1,
        test_channel=W,
        lam=float(lam),
        nu1=nu1,
        nu2=nu2,
        tilted_yz=tilted,
        active=active,
        rate_y=float(refined["i_y"]),
        distortions=(float(refined["e1"]), float(refined["e2"])),
        gap=float(gap),
        sweeps=phase.sweeps,
    )
    object.__setattr__(sol, "_px", px)
    return sol


class SolveCache:
    """Thread-safe memo of solver results; concurrent inserts of one key keep the last."""

    def __init__(self):
        self._lock = threading.Lock()
        self._data = {}

    def get(self, key, default=None):
        with self._lock:
            return self._data.get(key, default)

    def put(self, key, value):
        with self._lock:
            self._data[key] = value
        return value

    def get_or_compute(self, key, compute):
        hit = self.get(key, self)
        if hit is not self:
            return hit
        # computed outside the lock so that slow solves do not serialize
        return self.put(key, compute())

    def __len__(self):
        with self._lock:
            return len(self._data)

    def __contains__(self, key):
        with self._lock:
            return key in self._data


_CACHE = SolveCache()


def _key(inst, R1):
    return (
        inst.px.probs.tobytes(),
        inst.d1.values.tobytes(),
        inst.d1.shape,
        inst.d2.values.tobytes(),
        inst.d2.shape,
        inst.D1,
        inst.D2,
        float(R1),
    )


def cached_sr_solve(inst: SourceInstance, R1: float) -> SrSolution:
    """:func:`sr_solve` memoized on the exact instance data and ``R1``."""
    return _CACHE.get_or_compute(_key(inst, R1), lambda: sr_solve(inst, R1))


class StencilError(ValueError):
    """A finite-difference stencil point falls outside the feasible set."""


def multipliers_by_perturbation(inst: SourceInstance, R1: float, step: float = 1e-4):
    """Negated central differences of the minimal sum rate in ``R1``, ``D1``, ``D2``.

    Returns ``(lam, nu1, nu2)``. Raises :class:`StencilError` when a stencil
    point is infeasible.
    """
    inst = validate_instance(inst)

    def value(i, R, D1, D2):
        if min(D1, D2) <= 0:
            raise StencilError("stencil reaches a non-positive distortion level")
        sol = sr_solve(inst.with_levels(D1, D2), R)
        if not sol.feasible:
            raise StencilError(f"finite-difference stencil crosses the infeasible boundary along axis {i}")
        return sol.value

    base = np.array([R1, inst.D1, inst.D2], dtype=float)
    out = []
    for i in range(3):
        e = np.zeros(3)
        e[i] = step
        hi = value(i, *(base + e))
        lo = value(i, *(base - e))
        out.append(-(hi - lo) / (2.0 * step))
    return tuple(float(v) for v in out)


def tilted_yz(inst: SourceInstance, R1: float, x: int) -> float:
    """Tilted information density of source symbol ``x`` at rate ``R1``."""
    sol = cached_sr_solve(inst, R1)
    if not sol.feasible:
        raise ValueError("rate R1 is infeasible; the tilted density is undefined")
    if not 0 <= x < sol.tilted_yz.size:
        raise IndexError(f"symbol index {x} out of range")
    return float(sol.tilted_yz[x])


def is_successively_refinable(inst: SourceInstance, tol: float = 1e-6):
    """Check whether both single-decoder optima are reachable at once.

    Solves at ``R1 = R_Y(P_X, D1)`` and compares the minimal sum rate with
    ``R_Z(P_X, D2)``. Returns ``(flag, witness_channel)``.
    """
    inst = validate_instance(inst)
    px = inst.px.probs
    ry = rd_solve(px, inst.d1.values, inst.D1).rate
    rz = rd_solve(px, inst.d2.values, inst.D2).rate
    sol = sr_solve(inst, ry)
    return bool(sol.value <= rz + tol), sol.test_channel


def _support(sol, floor=1e-9):
    return frozenset(map(tuple, np.argwhere(sol.output_law > floor)))


def gradient_wrt_source(inst: SourceInstance, R1: float, a: int, b: int, step: float = 1e-4) -> float:
    """Central difference of the minimal sum rate along ``e_a - e_b`` in the source law.

    ``R1`` is held fixed. A warning is issued when the support of the
    optimal output law differs between the stencil points and the base point.
    """
    inst = validate_instance(inst)
    px = inst.px.probs
    nx = px.size
    if not (0 <= a < nx and 0 <= b < nx):
        raise IndexError("symbol index out of range")
    if a == b:
        return 0.0
    if min(px[a], px[b]) <= step:
        raise StencilError("stencil leaves the probability simplex")
    e = np.zeros(nx)
    e[a], e[b] = 1.0, -1.0
    sols = [sr_solve(inst.with_source(px + s * step * e), R1) for s in (1.0, -1.0)]
    if not all(s.feasible for s in sols):
        raise StencilError("finite-difference stencil crosses the infeasible boundary")
    base = cached_sr_solve(inst, R1)
    if any(_support(s) != _support(base) for s in sols):
        warnings.warn(
            "optimal output support changes under the source perturbation; the derivative formula may not apply",
            RuntimeWarning,
            stacklevel=2,
        )
    return float((sols[0].value - sols[1].value) / (2.0 * step))


class SuccessiveRefinement(TransformerMixin, BaseEstimator):
    """Estimator wrapper around :func:`sr_solve`.

    ``fit(inst)`` solves at rate ``R1``; ``transform(x)`` maps source symbol
    indices to the tilted information density.
    """

    def __init__(self, R1=1.0, tol=1e-7):
        self.R1 = R1
        self.tol = tol

    def fit(self, X, y=None):
        sol = sr_solve(X, self.R1, tol=self.tol)
        self.solution_ = sol
        self.feasible_ = sol.feasible
        if sol.feasible:
            self.value_ = sol.value
            self.lambda_ = sol.lam
            self.nu1_ = sol.nu1
            self.nu2_ = sol.nu2
            self.tilted_yz_ = sol.tilted_yz
            self.test_channel_ = sol.test_channel
        else:
            self.value_ = INFEASIBLE
        return self

    def transform(self, X):
        check_is_fitted(self, "solution_")
        if not self.feasible_:
            raise ValueError("rate R1 is infeasible; no tilted density to report")
        x = np.asarray(X, dtype=int)
        if np.any((x < 0) | (x >= self.tilted_yz_.size)):
            raise IndexError("symbol index out of range")
        return self.tilted_yz_[x]
