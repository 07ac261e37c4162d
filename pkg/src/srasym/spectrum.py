"""Exact and Monte-Carlo finite-blocklength quantities for discrete sources.

Both tilted-information sums are linear in the empirical counts, so their
joint law at blocklength ``n`` is an enumeration over compositions of ``n``
with multinomial masses. The type-based achievability and converse bounds
are sums of type-class probabilities over the types that violate a rate
condition.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from .core import SourceInstance, validate_instance
from .rd import rd_solve
from .sr import SolveCache, sr_solve

log = logging.getLogger(__name__)

DEFAULT_CAP = 5_000_000
SKIP_MASS = 1e-15
TAIL_MASS = 1e-13  # types beyond this cumulative mass are bounded, not solved


def worker_count() -> int:
    """Parallelism cap from ``SRASYM_THREADS`` (default 1)."""
    raw = os.environ.get("SRASYM_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ValueError(f"SRASYM_THREADS must be a positive integer, got {raw!r}") from None


def composition_count(n: int, k: int) -> int:
    return math.comb(n + k - 1, k - 1)


def compositions(n: int, k: int) -> np.ndarray:
    """All count vectors of ``k`` non-negative integers summing to ``n``, in lexicographic order."""
    rows = np.zeros((1, 0), dtype=np.int32)
    remaining = np.array([n], dtype=np.int64)
    for _ in range(k - 1):
        reps = remaining + 1
        idx = np.repeat(np.arange(rows.shape[0]), reps)
        starts = np.cumsum(reps) - reps
        first = np.arange(idx.size) - np.repeat(starts, reps)
        rows = np.column_stack([rows[idx], first]).astype(np.int32)
        remaining = remaining[idx] - first
    return np.column_stack([rows, remaining]).astype(np.int32)


def log_multinomial(counts, px) -> np.ndarray:
    """Log-probability of each type class under the i.i.d. law ``px``."""
    counts = np.asarray(counts)
    n = int(counts[0].sum())
    with np.errstate(divide="ignore"):
        logp = np.log(np.asarray(px, dtype=float))
    terms = np.where(counts > 0, counts * logp[None, :], 0.0)
    return gammaln(n + 1) - gammaln(counts + 1).sum(axis=1) + terms.sum(axis=1)


@dataclass(frozen=True)
class ExcessSpectrum:
    n: int
    a: np.ndarray  # sum of j_Y over the block
    b: np.ndarray  # sum of j_YZ over the block
    mass: np.ndarray
    counts: np.ndarray | None = None

    @property
    def support(self):
        return list(zip(self.a.tolist(), self.b.tolist(), self.mass.tolist()))

    def probability(self, t1: float, t2: float) -> float:
        """``P(a >= t1 or b >= t2)``."""
        hit = (self.a >= t1) | (self.b >= t2)
        # masses sum to 1 only up to rounding
        return float(min(self.mass[hit].sum(), 1.0))


def _tilted_pair(inst, R1):
    px = inst.px.probs
    jy = rd_solve(px, inst.d1.values, inst.D1).tilted
    sol = sr_solve(inst, R1)
    if not sol.feasible:
        raise ValueError(f"rate R1={R1} is infeasible")
    if not np.all(np.isfinite(sol.tilted_yz)):
        raise ValueError("tilted density undefined: the rate multiplier is unbounded at this R1")
    return px, jy, sol.tilted_yz


def spectrum_from_tilted(px, jy, jyz, n: int, cap: int = DEFAULT_CAP) -> ExcessSpectrum:
    px = np.asarray(px, dtype=float)
    live = np.flatnonzero(px > 0)
    k = live.size
    total = composition_count(n, k)
    if total > cap:
        raise ValueError(f"{total} compositions exceed the cap {cap}; use Monte-Carlo mode")
    counts = compositions(n, k)
    mass = np.exp(log_multinomial(counts, px[live]))
    a = counts @ np.asarray(jy, dtype=float)[live]
    b = counts @ np.asarray(jyz, dtype=float)[live]
    return ExcessSpectrum(n, a, b, mass, counts)


def build_spectrum(inst: SourceInstance, R1: float, n: int, cap: int = DEFAULT_CAP) -> ExcessSpectrum:
    """Exact joint law of the two tilted sums at blocklength ``n``."""
    inst = validate_instance(inst)
    px, jy, jyz = _tilted_pair(inst, R1)
    return spectrum_from_tilted(px, jy, jyz, n, cap)


@dataclass(frozen=True)
class CodeParams:
    n: int
    logM1: float
    logM1M2: float
    gamma1: float = 0.0
    gamma2: float = 0.0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("blocklength must be positive")
        if self.logM1 > self.logM1M2:
            raise ValueError("logM1 must not exceed logM1M2")
        if self.gamma1 < 0 or self.gamma2 < 0:
            raise ValueError("gamma1 and gamma2 must be non-negative")

    @classmethod
    def half_log(cls, n, logM1, logM1M2):
        g = 0.5 * math.log(n)
        return cls(n, logM1, logM1M2, g, g)


@dataclass(frozen=True)
class BoundResult:
    value: float  # clamped into [0, 1]
    raw: float
    stderr: float = 0.0
    diagnostics: dict = field(default_factory=dict)

    def __float__(self):
        return self.value

    def to_dict(self):
        return {"value": self.value, "raw": self.raw, "stderr": self.stderr, **self.diagnostics}


def _clamp(x):
    return min(max(x, 0.0), 1.0)


class TiltedSampler:
    """Monte-Carlo source of the two tilted sums with one random stream per trial.

    Trial ``i`` draws its counts from ``SeedSequence(seed, spawn_key=(i,))``,
    so results do not depend on how trials are split across workers.
    """

    def __init__(self, px, jy, jyz, n, trials=100_000, seed=0):
        self.px = np.asarray(px, dtype=float)
        self.jy = np.asarray(jy, dtype=float)
        self.jyz = np.asarray(jyz, dtype=float)
        self.n, self.trials, self.seed = int(n), int(trials), int(seed)

    def counts(self, start, stop):
        out = np.empty((stop - start, self.px.size), dtype=np.int64)
        for row, i in enumerate(range(start, stop)):
            rng = np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(i,)))
            out[row] = rng.multinomial(self.n, self.px)
        return out

    def sample(self, workers=None):
        """All trials' counts, assembled in trial order."""
        workers = worker_count() if workers is None else workers
        edges = np.linspace(0, self.trials, workers + 1).astype(int)
        chunks = list(zip(edges[:-1], edges[1:]))
        if workers == 1:
            parts = [self.counts(a, b) for a, b in chunks]
        else:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                parts = list(pool.map(lambda c: self.counts(*c), chunks))
        return np.vstack(parts)

    def sums(self, workers=None):
        c = self.sample(workers)
        return c @ self.jy, c @ self.jyz


def one_shot_converse(source, cp: CodeParams, workers=None) -> BoundResult:
    """Tilted-information converse ``P(a >= log M1 + g1 or b >= log M1M2 + g2) - e^{-g1} - e^{-g2}``.

    ``source`` is an :class:`ExcessSpectrum` (exact) or a
    :class:`TiltedSampler` (estimate with standard error).
    """
    t1, t2 = cp.logM1 + cp.gamma1, cp.logM1M2 + cp.gamma2
    slack = math.exp(-cp.gamma1) + math.exp(-cp.gamma2)
    if isinstance(source, ExcessSpectrum):
        prob = source.probability(t1, t2)
        se = 0.0
    else:
        a, b = source.sums(workers)
        hit = (a >= t1) | (b >= t2)
        prob = float(hit.mean())
        se = float(np.sqrt(prob * (1.0 - prob) / hit.size))
    raw = prob - slack
    return BoundResult(_clamp(raw), raw, se, {"probability": prob})


@dataclass(frozen=True)
class TypeSweepConfig:
    shape: tuple  # (|X|, |Y|, |Z|)
    n: int
    logM1: float
    logM1M2: float
    mode: str = "exact"
    trials: int = 10_000
    seed: int = 0
    c1: int = field(init=False)
    c2: int = field(init=False)

    def __post_init__(self):
        nx, ny, nz = self.shape
        object.__setattr__(self, "c1", 4 * nx * ny + 9)
        object.__setattr__(self, "c2", 6 * nx * ny * nz + 2 * nx * ny + 17)
        if self.mode not in ("exact", "mc"):
            raise ValueError("mode must be 'exact' or 'mc'")
        if self.n < 2:
            raise ValueError("blocklength must be at least 2")

    @classmethod
    def for_instance(cls, inst, n, logM1, logM1M2, **kw):
        return cls(inst.shape, n, logM1, logM1M2, **kw)

    def corrected_rates(self):
        nx = self.shape[0]
        n = self.n
        r1 = (self.logM1 - self.c1 * math.log(n) - nx * math.log(n + 1)) / n
        r2 = (self.logM1M2 - self.c2 * math.log(n)) / n
        return r1, r2


def converse_beta(nx: int, n: int) -> float:
    return nx * math.log(n + 1) + 2.0 * math.log(n)


_TYPE_CACHE = SolveCache()


class _TypeOracle:
    """Decides, per type, whether a rate pair violates the first-order conditions."""

    def __init__(self, inst, R1n, R2n, D1, D2, cache=_TYPE_CACHE):
        self.inst = inst
        self.R1n, self.R2n = R1n, R2n
        self.D1, self.D2 = D1, D2
        self.cache = cache
        self.solves = 0

    def _rd(self, which, q):
        d = self.inst.d1.values if which == 1 else self.inst.d2.values
        D = self.D1 if which == 1 else self.D2
        key = ("rd", which, q.tobytes(), d.tobytes(), d.shape, D)
        return self.cache.get_or_compute(key, lambda: rd_solve(q, d, D).rate)

    def _sr(self, q):
        key = ("sr", q.tobytes(), self.inst.d1.values.tobytes(), self.inst.d2.values.tobytes(), self.D1, self.D2, self.R1n)

        def solve():
            self.solves += 1
            inst = SourceInstance(q, self.inst.d1, self.inst.d2, self.D1, self.D2)
            return sr_solve(inst, self.R1n).value

        return self.cache.get_or_compute(key, solve)

    def violates(self, counts) -> bool:
        counts = np.asarray(counts)
        q = counts / counts.sum()
        ry = self._rd(1, q)
        if self.R1n < ry:
            return True
        rz = self._rd(2, q)
        if self.R2n < rz:
            return True
        # independent stages reach R_Y + R_Z, an upper bound on the minimal sum rate
        if self.R2n >= ry + rz:
            return False
        return bool(self.R2n < self._sr(q))


def _type_sweep(oracle, px, n, mode, trials, seed, workers=None, cap=DEFAULT_CAP):
    """Probability that the empirical type violates, and diagnostics.

    Exact mode visits types in decreasing mass until the unvisited mass is
    below ``TAIL_MASS``; that remainder is reported separately so callers can
    apply it in the conservative direction.
    """
    px = np.asarray(px, dtype=float)
    live = np.flatnonzero(px > 0)
    workers = worker_count() if workers is None else workers

    def expand(c):
        full = np.zeros(px.size, dtype=np.int64)
        full[live] = c
        return full

    if mode == "mc":
        sampler = TiltedSampler(px[live], np.zeros(live.size), np.zeros(live.size), n, trials, seed)
        counts = sampler.sample(workers)
        uniq, inverse = np.unique(counts, axis=0, return_inverse=True)
        flags = _evaluate(oracle, [expand(c) for c in uniq], workers)
        hits = np.asarray(flags)[inverse.reshape(-1)]
        p = float(hits.mean())
        return p, float(np.sqrt(p * (1 - p) / trials)), {"distinct_types": int(uniq.shape[0])}

    total = composition_count(n, live.size)
    if total > cap:
        raise ValueError(f"{total} types exceed the cap {cap}; use Monte-Carlo mode")
    counts = compositions(n, live.size)
    mass = np.exp(log_multinomial(counts, px[live]))
    order = np.argsort(-mass, kind="stable")
    tail = np.cumsum(mass[order][::-1])[::-1]  # mass of order[i:]
    keep = order[tail > TAIL_MASS]
    remainder = float(mass.sum() - mass[keep].sum())
    # lexicographic order keeps neighbouring types together
    keep = np.sort(keep)
    flags = _evaluate(oracle, [expand(counts[i]) for i in keep], workers, masses=mass[keep])
    p = float(mass[keep][np.asarray(flags, dtype=bool)].sum())
    return p, 0.0, {"types": int(total), "visited": int(keep.size), "unvisited_mass": max(remainder, 0.0)}


def _evaluate(oracle, items, workers, masses=None):
    def one(i):
        try:
            return oracle.violates(items[i])
        except Exception:
            if masses is not None and masses[i] < SKIP_MASS:
                log.info("skipping type %s with mass %.3g after a solver failure", items[i].tolist(), masses[i])
                return False
            raise

    if workers == 1:
        return [one(i) for i in range(len(items))]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, range(len(items))))


def dms_achievability_bound(inst: SourceInstance, cfg: TypeSweepConfig, workers=None) -> BoundResult:
    """Upper bound on the joint excess-distortion probability from the type-covering code.

    Sums type-class probabilities over types with ``R_{1,n} < R_Y(Q, D1)``
    or ``R_{2,n} < R(R_{1,n}, D1, D2 | Q)``.
    """
    inst = validate_instance(inst)
    if tuple(cfg.shape) != inst.shape:
        raise ValueError("configuration shape does not match the instance")
    r1, r2 = cfg.corrected_rates()
    oracle = _TypeOracle(inst, r1, r2, inst.D1, inst.D2)
    p, se, diag = _type_sweep(oracle, inst.px.probs, cfg.n, cfg.mode, cfg.trials, cfg.seed, workers)
    # unvisited types count as errors, which keeps the bound valid
    raw = p + diag.get("unvisited_mass", 0.0)
    diag.update(R1n=r1, R2n=r2, c1=cfg.c1, c2=cfg.c2, sr_solves=oracle.solves)
    return BoundResult(_clamp(raw), raw, se, diag)


def dms_converse_bound(inst: SourceInstance, n: int, logM1: float, logM1M2: float, mode="exact", trials=10_000, seed=0, workers=None) -> BoundResult:
    """Lower bound on the joint excess-distortion probability of every code.

    Uses the inflated levels ``D_i + max d_i / n`` and the corrected rates
    ``(log M + beta_n) / n`` with ``beta_n = |X| log(n+1) + 2 log n``.
    """
    inst = validate_instance(inst)
    beta = converse_beta(inst.shape[0], n)
    r1 = (logM1 + beta) / n
    r2 = (logM1M2 + beta) / n
    D1n = inst.D1 + inst.d1.values.max() / n
    D2n = inst.D2 + inst.d2.values.max() / n
    oracle = _TypeOracle(inst, r1, r2, D1n, D2n)
    p, se, diag = _type_sweep(oracle, inst.px.probs, n, mode, trials, seed, workers)
    raw = p - 1.0 / n
    diag.update(R1n=r1, R2n=r2, D1n=D1n, D2n=D2n, beta=beta, sr_solves=oracle.solves)
    return BoundResult(_clamp(raw), raw, se, diag)


def achievability_code_sizes(shape, n, R1, R2, L1, L2):
    """Code sizes whose corrected achievability rates equal ``R_i + L_i / sqrt(n)``."""
    cfg = TypeSweepConfig(tuple(shape), n, 0.0, 0.0)
    logM1 = n * R1 + L1 * math.sqrt(n) + cfg.c1 * math.log(n) + shape[0] * math.log(n + 1)
    logM1M2 = n * R2 + L2 * math.sqrt(n) + cfg.c2 * math.log(n)
    return logM1, logM1M2


def converse_code_sizes(inst: SourceInstance, n, L1, L2, R1=None):
    """Code sizes whose corrected converse rates equal ``R*_n + L / sqrt(n)``.

    ``R*_n`` is the first-order boundary point at the inflated levels
    ``D_i + max d_i / n`` that the converse evaluates, shifted from the
    boundary at the nominal levels along the first rate. ``R1`` defaults
    to the corner ``R_Y(P_X, D1)``.
    """
    inst = validate_instance(inst)
    px = inst.px.probs
    ry = rd_solve(px, inst.d1.values, inst.D1).rate
    R1 = ry if R1 is None else float(R1)
    inflated = inst.with_levels(inst.D1 + inst.d1.values.max() / n, inst.D2 + inst.d2.values.max() / n)
    R1c = R1 - ry + rd_solve(px, inflated.d1.values, inflated.D1).rate
    R2c = sr_solve(inflated, R1c).value
    beta = converse_beta(inst.shape[0], n)
    return n * R1c + L1 * math.sqrt(n) - beta, n * R2c + L2 * math.sqrt(n) - beta


def one_shot_code_params(n, R1, R2, L1, L2) -> CodeParams:
    """Half-log-n slack with thresholds at ``n R_i + L_i sqrt(n)``."""
    g = 0.5 * math.log(n)
    return CodeParams(n, n * R1 + L1 * math.sqrt(n) - g, n * R2 + L2 * math.sqrt(n) - g, g, g)


@dataclass(frozen=True)
class TrendPoint:
    n: int
    exponent: float  # -log eps_n / (n rho_n^2), or a lower bound when underflowed
    probability: float
    underflow: bool = False


def mdc_trend(inst: SourceInstance, R1: float, R2: float, theta1: float, theta2: float, rho, n_list, cap: int = DEFAULT_CAP):
    """Normalized exponents of the exact tilted-sum excess probability.

    For each ``n`` evaluates ``eps_n = P(a >= n(R1 + theta1 rho_n) or b >= n(R2 + theta2 rho_n))``
    and reports ``-log(eps_n) / (n rho_n^2)``.
    """
    inst = validate_instance(inst)
    px, jy, jyz = _tilted_pair(inst, R1)
    out = []
    for n in n_list:
        r = float(rho(n))
        spec = spectrum_from_tilted(px, jy, jyz, n, cap)
        eps = spec.probability(n * (R1 + theta1 * r), n * (R2 + theta2 * r))
        scale = n * r * r
        if eps < 1e-300:
            out.append(TrendPoint(n, -math.log(1e-300) / scale, eps, True))
        else:
            out.append(TrendPoint(n, -math.log(eps) / scale, eps))
    return out
