"""Validated problem data: source laws, distortion matrices, query points."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

PMF_ATOL = 1e-12


class InstanceError(ValueError):
    """Raised when problem data violates one of its invariants."""


@dataclass(frozen=True)
class Pmf:
    probs: np.ndarray

    def __post_init__(self):
        p = np.array(self.probs, dtype=float).reshape(-1)
        if p.size < 1:
            raise InstanceError("pmf is empty")
        if not np.all(np.isfinite(p)):
            raise InstanceError("pmf has non-finite entries")
        if np.any(p < 0):
            raise InstanceError("negative probability")
        if abs(p.sum() - 1.0) > PMF_ATOL:
            raise InstanceError("pmf not normalized")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @property
    def alphabet_size(self) -> int:
        return self.probs.size

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.probs, dtype=dtype)


@dataclass(frozen=True)
class DistortionMatrix:
    values: np.ndarray

    def __post_init__(self):
        d = np.array(self.values, dtype=float)
        if d.ndim != 2 or d.shape[0] < 1 or d.shape[1] < 1:
            raise InstanceError("distortion matrix must be a non-empty 2-D array")
        if not np.all(np.isfinite(d)):
            raise InstanceError("distortion matrix has non-finite entries")
        if np.any(d < 0):
            raise InstanceError("negative distortion entry")
        if np.any(d.min(axis=1) != 0):
            raise InstanceError("row lacks zero-distortion reproduction")
        d.setflags(write=False)
        object.__setattr__(self, "values", d)

    @property
    def shape(self):
        return self.values.shape

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)


@dataclass(frozen=True)
class RatePoint:
    R1: float
    R2: float

    def __post_init__(self):
        if not self.R1 >= 0:
            raise InstanceError("R1 must be non-negative")


@dataclass(frozen=True)
class SourceInstance:
    px: Pmf
    d1: DistortionMatrix
    d2: DistortionMatrix
    D1: float
    D2: float

    def __post_init__(self):
        for name in ("px", "d1", "d2"):
            value = getattr(self, name)
            cls = Pmf if name == "px" else DistortionMatrix
            if not isinstance(value, cls):
                object.__setattr__(self, name, cls(value))
        object.__setattr__(self, "D1", float(self.D1))
        object.__setattr__(self, "D2", float(self.D2))

    @property
    def shape(self):
        """Alphabet sizes ``(|X|, |Y|, |Z|)``."""
        return (self.px.alphabet_size, self.d1.shape[1], self.d2.shape[1])

    def with_source(self, px) -> "SourceInstance":
        return SourceInstance(px=Pmf(px), d1=self.d1, d2=self.d2, D1=self.D1, D2=self.D2)

    def with_levels(self, D1=None, D2=None) -> "SourceInstance":
        return SourceInstance(
            px=self.px,
            d1=self.d1,
            d2=self.d2,
            D1=self.D1 if D1 is None else D1,
            D2=self.D2 if D2 is None else D2,
        )

    def to_dict(self) -> dict:
        return {
            "px": self.px.probs.tolist(),
            "d1": self.d1.values.tolist(),
            "d2": self.d2.values.tolist(),
            "D1": self.D1,
            "D2": self.D2,
        }


def validate_instance(inst: SourceInstance) -> SourceInstance:
    """Check every invariant of ``inst`` and return it unchanged.

    The element types validate themselves on construction; this adds the
    cross-field checks. Raises :class:`InstanceError` naming the first
    violated invariant.
    """
    if not isinstance(inst, SourceInstance):
        raise InstanceError("expected a SourceInstance")
    nx = inst.px.alphabet_size
    if nx < 2:
        raise InstanceError("source alphabet must have at least 2 symbols")
    if inst.d1.shape[0] != nx or inst.d2.shape[0] != nx:
        raise InstanceError("distortion matrix row count must equal source alphabet size")
    if not (np.isfinite(inst.D1) and inst.D1 > 0):
        raise InstanceError("non-positive distortion level D1")
    if not (np.isfinite(inst.D2) and inst.D2 > 0):
        raise InstanceError("non-positive distortion level D2")
    return inst


def hamming(m: int, k: int | None = None) -> np.ndarray:
    """Hamming distortion between an ``m``-ary source and ``k``-ary reproduction."""
    k = m if k is None else k
    return 1.0 - np.eye(m, k)


def entropy(p) -> float:
    """Shannon entropy in nats, with 0 log 0 = 0."""
    p = np.asarray(p, dtype=float)
    nz = p[p > 0]
    return float(-np.sum(nz * np.log(nz)))


def binary_entropy(x: float) -> float:
    return entropy([x, 1.0 - x])


def support_map(px, tol: float = 0.0):
    """Indices of the symbols with mass above ``tol`` and the restricted law."""
    p = np.asarray(px, dtype=float)
    idx = np.flatnonzero(p > tol)
    q = p[idx]
    return idx, q / q.sum()


def _field(doc: dict, key: str, source: str):
    if key not in doc:
        raise InstanceError(f"{source}: missing field '{key}'")
    return doc[key]


def instance_from_dict(doc, source: str = "<instance>") -> SourceInstance:
    if not isinstance(doc, dict):
        raise InstanceError(f"{source}: top-level JSON value must be an object")
    fields = {}
    for key in ("px", "d1", "d2", "D1", "D2"):
        value = _field(doc, key, source)
        try:
            if key in ("D1", "D2"):
                if isinstance(value, bool):
                    raise TypeError
                fields[key] = float(value)
            else:
                arr = np.array(value, dtype=np.float64)
                if arr.dtype == object:
                    raise TypeError
                fields[key] = arr
        except (TypeError, ValueError):
            raise InstanceError(f"{source}: field '{key}' is not numeric") from None
    try:
        inst = SourceInstance(**fields)
        return validate_instance(inst)
    except InstanceError as exc:
        raise InstanceError(f"{source}: {exc}") from None


def load_instance(path) -> SourceInstance:
    """Read a :class:`SourceInstance` from a JSON document."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InstanceError(f"{path}: malformed JSON at line {exc.lineno} column {exc.colno}") from None
    return instance_from_dict(doc, str(path))
