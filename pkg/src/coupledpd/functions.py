"""Closed family of (nonsmooth) convex function atoms.

Every atom knows its value, a subgradient selection, and the shape of its
subdifferential near a kink. At kinks the minimal-norm element is selected:
``0`` for the Euclidean norm at the origin and ``0`` per coordinate for the
absolute deviation at ``x_k == d_k``.

Atoms (de)serialize to ``{"family": ..., "params": {...}}`` dictionaries.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import DomainError, InstanceFormatError


def _vec(v):
    a = np.atleast_1d(np.asarray(v, dtype=float)).copy()
    a.setflags(write=False)
    return a


class Kink(NamedTuple):
    """Set ``weight * U`` added to a subgradient selection.

    ``kind == "interval"``: U = [-1, 1] on the single coordinate ``coords[0]``.
    ``kind == "ball"``: U = closed unit ball on ``coords``.
    """

    kind: str
    weight: float
    coords: tuple


class Family:
    dim = None  # None: accepts any dimension
    smooth = True

    def value(self, x) -> float:
        raise NotImplementedError

    def subgrad(self, x) -> np.ndarray:
        raise NotImplementedError

    def subdifferential(self, x, tol: float = 1e-9):
        """``(selection, kinks)``; the subdifferential is selection + sum of kink sets."""
        return self.subgrad(x), []

    def atoms(self):
        return (self,)

    def to_dict(self) -> dict:
        raise NotImplementedError

    def __add__(self, other):
        return Sum((self, other))


@dataclass(frozen=True, eq=False)
class QuadraticForm(Family):
    """``x^T A x + b^T x + c`` with ``A`` symmetric PSD."""

    A: np.ndarray
    b: np.ndarray
    c: float = 0.0

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float)).copy()
        if A.shape[0] != A.shape[1] or not np.allclose(A, A.T, atol=1e-12):
            raise ValueError("QuadraticForm needs a symmetric matrix")
        if np.linalg.eigvalsh(A).min() < -1e-10 * max(1.0, np.abs(A).max()):
            raise ValueError("QuadraticForm matrix is not PSD")
        A.setflags(write=False)
        b = _vec(self.b)
        if b.size != A.shape[0]:
            raise ValueError("QuadraticForm b has wrong length")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", float(self.c))

    @property
    def dim(self):
        return self.b.size

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return float(x @ self.A @ x + self.b @ x + self.c)

    def subgrad(self, x):
        return 2.0 * (self.A @ np.asarray(x, dtype=float)) + self.b

    def to_dict(self):
        return {"family": "quadratic", "params": {"A": self.A.tolist(), "b": self.b.tolist(), "c": self.c}}


@dataclass(frozen=True, eq=False)
class EuclideanNorm(Family):
    """``weight * ||x||_2``."""

    weight: float = 1.0
    smooth = False

    def __post_init__(self):
        w = float(self.weight)
        if w < 0:
            raise ValueError("EuclideanNorm weight must be nonnegative")
        object.__setattr__(self, "weight", w)

    def value(self, x):
        return self.weight * float(np.linalg.norm(x))

    def subgrad(self, x):
        x = np.asarray(x, dtype=float)
        nx = np.linalg.norm(x)
        if nx == 0.0:
            return np.zeros_like(x)
        return (self.weight / nx) * x

    def subdifferential(self, x, tol=1e-9):
        x = np.asarray(x, dtype=float)
        if np.linalg.norm(x) <= tol and self.weight > 0:
            return np.zeros_like(x), [Kink("ball", self.weight, tuple(range(x.size)))]
        return self.subgrad(x), []

    def to_dict(self):
        return {"family": "norm", "params": {"weight": self.weight}}


@dataclass(frozen=True, eq=False)
class AbsDeviation(Family):
    """``c * ||x - d||_1``."""

    c: float
    d: np.ndarray
    smooth = False

    def __post_init__(self):
        c = float(self.c)
        if c < 0:
            raise ValueError("AbsDeviation c must be nonnegative")
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "d", _vec(self.d))

    @property
    def dim(self):
        return self.d.size

    def value(self, x):
        return self.c * float(np.abs(np.asarray(x, dtype=float) - self.d).sum())

    def subgrad(self, x):
        # np.sign(0) == 0 is exactly the minimal-norm element of [-1, 1]
        return self.c * np.sign(np.asarray(x, dtype=float) - self.d)

    def subdifferential(self, x, tol=1e-9):
        x = np.asarray(x, dtype=float)
        r = x - self.d
        at_kink = np.abs(r) <= tol
        sel = self.c * np.where(at_kink, 0.0, np.sign(r))
        kinks = [Kink("interval", self.c, (int(k),)) for k in np.flatnonzero(at_kink)] if self.c > 0 else []
        return sel, kinks

    def to_dict(self):
        return {"family": "absdev", "params": {"c": self.c, "d": self.d.tolist()}}


@dataclass(frozen=True, eq=False)
class LogAffine(Family):
    """``ln(1 + b^T x)``; concave, included because the random benchmark uses it."""

    b: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "b", _vec(self.b))

    @property
    def dim(self):
        return self.b.size

    def _arg(self, x):
        u = 1.0 + float(self.b @ np.asarray(x, dtype=float))
        if u <= 0:
            raise DomainError(f"log argument 1 + b.x = {u} is not positive")
        return u

    def value(self, x):
        return float(np.log(self._arg(x)))

    def subgrad(self, x):
        return self.b / self._arg(x)

    def to_dict(self):
        return {"family": "logaffine", "params": {"b": self.b.tolist()}}


@dataclass(frozen=True, eq=False)
class Affine(Family):
    """``p^T x + q``."""

    p: np.ndarray
    q: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "p", _vec(self.p))
        object.__setattr__(self, "q", float(self.q))

    @property
    def dim(self):
        return self.p.size

    def value(self, x):
        return float(self.p @ np.asarray(x, dtype=float) + self.q)

    def subgrad(self, x):
        return self.p.copy()

    def to_dict(self):
        return {"family": "affine", "params": {"p": self.p.tolist(), "q": self.q}}


@dataclass(frozen=True, eq=False)
class Sum(Family):
    terms: tuple

    def __post_init__(self):
        flat = []
        for t in self.terms:
            if not isinstance(t, Family):
                raise TypeError("Sum terms must be Family instances")
            flat.extend(t.atoms())
        if not flat:
            raise ValueError("empty Sum")
        dims = {t.dim for t in flat if t.dim is not None}
        if len(dims) > 1:
            raise ValueError(f"Sum terms disagree on dimension: {sorted(dims)}")
        object.__setattr__(self, "terms", tuple(flat))

    @property
    def dim(self):
        for t in self.terms:
            if t.dim is not None:
                return t.dim
        return None

    @property
    def smooth(self):
        return all(t.smooth for t in self.terms)

    def atoms(self):
        return self.terms

    def value(self, x):
        return float(sum(t.value(x) for t in self.terms))

    def subgrad(self, x):
        return np.sum([t.subgrad(x) for t in self.terms], axis=0)

    def subdifferential(self, x, tol=1e-9):
        sel = np.zeros(np.asarray(x).size)
        kinks = []
        for t in self.terms:
            s, k = t.subdifferential(x, tol)
            sel = sel + s
            kinks.extend(k)
        return sel, kinks

    def to_dict(self):
        return {"family": "sum", "params": {"terms": [t.to_dict() for t in self.terms]}}


def eval(family: Family, x) -> float:  # noqa: A001 - mirrors the operation name
    return family.value(x)


def subgrad(family: Family, x) -> np.ndarray:
    return family.subgrad(x)


def family_from_dict(doc: dict) -> Family:
    try:
        kind, p = doc["family"], doc.get("params", {})
        if kind == "quadratic":
            return QuadraticForm(p["A"], p["b"], p.get("c", 0.0))
        if kind == "norm":
            return EuclideanNorm(p.get("weight", 1.0))
        if kind == "absdev":
            return AbsDeviation(p["c"], p["d"])
        if kind == "logaffine":
            return LogAffine(p["b"])
        if kind == "affine":
            return Affine(p["p"], p.get("q", 0.0))
        if kind == "sum":
            return Sum(tuple(family_from_dict(t) for t in p["terms"]))
    except (KeyError, TypeError) as exc:
        raise InstanceFormatError(f"bad function description {doc!r}: {exc}") from exc
    raise InstanceFormatError(f"unknown function family {doc.get('family')!r}")
