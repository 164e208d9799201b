"""Scalar nonlinearities with Lipschitz constants and polynomial envelopes.

An :class:`Activation` is a frozen value object.  Built-in kinds carry their
exact Lipschitz constant and a canonical envelope ``|phi(s)| <= a + b|s|^m``
with ``a, b > 0``.  A ``custom-table`` activation is a piecewise-linear
interpolant of a sampled table, extended linearly past its ends with the end
slopes; its Lipschitz constant is whatever the user declares (possibly
nothing, in which case only finite-dimensional experiments make sense).

Piecewise-linear activations (identity, relu, custom tables) expose their
knots and per-piece slopes/intercepts through :meth:`Activation.pieces` so the
kernel quadrature can integrate across kinks exactly.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np
from scipy.special import erf as _erf

from .errors import DomainError


class Kind(str, Enum):
    IDENTITY = "identity"
    RELU = "relu"
    TANH = "tanh"
    ERF = "erf"
    CUSTOM_TABLE = "custom-table"


@dataclass(frozen=True)
class Envelope:
    """Growth bound ``|phi(s)| <= a + b * |s|**m``."""

    a: float
    b: float
    m: float = 1.0

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise DomainError(f"envelope needs a > 0 and b > 0, got a={self.a}, b={self.b}")
        if not self.m >= 1:
            raise DomainError(f"envelope exponent m must be >= 1, got {self.m}")

    def __call__(self, s):
        return self.a + self.b * np.abs(s) ** self.m


class Pieces(NamedTuple):
    """phi(s) = intercepts[k] + slopes[k] * s on the k-th piece between knots."""

    knots: np.ndarray
    slopes: np.ndarray
    intercepts: np.ndarray


CANONICAL_ENVELOPES = {
    Kind.IDENTITY: Envelope(1e-6, 1.0, 1.0),
    Kind.RELU: Envelope(1e-6, 1.0, 1.0),
    Kind.TANH: Envelope(1.0, 1e-6, 1.0),
    Kind.ERF: Envelope(1.0, 1e-6, 1.0),
}

EXACT_LIPSCHITZ = {
    Kind.IDENTITY: 1.0,
    Kind.RELU: 1.0,
    Kind.TANH: 1.0,
    Kind.ERF: 2.0 / math.sqrt(math.pi),
}


@dataclass(frozen=True, eq=False)
class Activation:
    kind: Kind
    lipschitz_constant: Optional[float]
    envelope: Envelope
    table_s: Optional[np.ndarray] = field(default=None, repr=False)
    table_phi: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        if self.lipschitz_constant is not None and not self.lipschitz_constant >= 0:
            raise DomainError("lipschitz_constant must be nonnegative")
        if self.kind is Kind.CUSTOM_TABLE:
            s = np.asarray(self.table_s, dtype=float)
            p = np.asarray(self.table_phi, dtype=float)
            if s.ndim != 1 or s.shape != p.shape or s.size < 2:
                raise DomainError("custom table needs two equal-length columns with >= 2 rows")
            if not (np.all(np.isfinite(s)) and np.all(np.isfinite(p))):
                raise DomainError("custom table contains non-finite values")
            if np.any(np.diff(s) <= 0):
                raise DomainError("custom table s column must be strictly increasing")
            s.setflags(write=False)
            p.setflags(write=False)
            object.__setattr__(self, "table_s", s)
            object.__setattr__(self, "table_phi", p)

    # -- construction -----------------------------------------------------

    @classmethod
    def builtin(cls, kind: str | Kind) -> "Activation":
        kind = Kind(kind)
        if kind is Kind.CUSTOM_TABLE:
            raise DomainError("use Activation.from_table for custom-table activations")
        return cls(kind, EXACT_LIPSCHITZ[kind], CANONICAL_ENVELOPES[kind])

    @classmethod
    def from_table(cls, s, phi, lipschitz_constant=None, envelope=None) -> "Activation":
        s = np.asarray(s, dtype=float)
        phi = np.asarray(phi, dtype=float)
        if envelope is None:
            # linear extension gives |phi(s)| <= |phi(0)| + max|slope| |s|
            tmp = cls(Kind.CUSTOM_TABLE, None, Envelope(1.0, 1.0), s, phi)
            steepest = float(np.max(np.abs(tmp.pieces().slopes)))
            envelope = Envelope(max(abs(float(tmp(0.0))), 1e-6), max(steepest, 1e-6), 1.0)
        act = cls(Kind.CUSTOM_TABLE, lipschitz_constant, envelope, s, phi)
        if lipschitz_constant is not None:
            probe = lipschitz_probe(act, act.table_s)
            if probe > lipschitz_constant + 1e-9:
                raise DomainError(
                    f"declared Lipschitz constant {lipschitz_constant} is below the table's "
                    f"steepest slope {probe}"
                )
        return act

    @classmethod
    def from_csv(cls, path, lipschitz_constant=None, envelope=None) -> "Activation":
        s, phi = load_table_csv(path)
        return cls.from_table(s, phi, lipschitz_constant, envelope)

    # -- evaluation -------------------------------------------------------

    @property
    def name(self) -> str:
        return self.kind.value

    @property
    def is_lipschitz(self) -> bool:
        return self.lipschitz_constant is not None

    def __call__(self, s):
        """Vectorized evaluation; no finiteness checks (see :func:`evaluate`)."""
        k = self.kind
        if k is Kind.RELU:
            return np.maximum(s, 0.0)
        if k is Kind.IDENTITY:
            return np.asarray(s, dtype=float) * 1.0
        if k is Kind.TANH:
            return np.tanh(s)
        if k is Kind.ERF:
            return _erf(s)
        knots, slopes, intercepts = self.pieces()
        s = np.asarray(s, dtype=float)
        idx = np.searchsorted(knots, s, side="right")
        return intercepts[idx] + slopes[idx] * s

    def pieces(self) -> Optional[Pieces]:
        """Piecewise-linear representation, or ``None`` for smooth kinds."""
        k = self.kind
        if k is Kind.IDENTITY:
            return Pieces(np.empty(0), np.array([1.0]), np.array([0.0]))
        if k is Kind.RELU:
            return Pieces(np.array([0.0]), np.array([0.0, 1.0]), np.array([0.0, 0.0]))
        if k is Kind.CUSTOM_TABLE:
            s, p = self.table_s, self.table_phi
            slopes = np.diff(p) / np.diff(s)
            intercepts = p[:-1] - slopes * s[:-1]
            # end pieces reuse the first/last interval, so only interior knots are kinks
            return Pieces(s[1:-1].copy(), slopes, intercepts)
        return None

    def to_spec(self) -> dict:
        spec = {"kind": self.kind.value}
        if self.kind is Kind.CUSTOM_TABLE:
            spec["lipschitz"] = self.lipschitz_constant
            spec["envelope"] = [self.envelope.a, self.envelope.b, self.envelope.m]
        return spec


def load_table_csv(path):
    """Read a two-column ``s,phi_s`` CSV with a mandatory header row."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0]] != ["s", "phi_s"]:
        raise DomainError(f"{path}: expected header 's,phi_s'")
    try:
        data = np.array([[float(c) for c in r] for r in rows[1:] if r], dtype=float)
    except ValueError as exc:
        raise DomainError(f"{path}: {exc}") from None
    if data.ndim != 2 or data.shape[1] != 2:
        raise DomainError(f"{path}: expected exactly two columns")
    if np.any(np.diff(data[:, 0]) <= 0):
        raise DomainError(f"{path}: s column must be strictly increasing")
    return data[:, 0], data[:, 1]


def evaluate(act: Activation, s: float) -> float:
    """phi(s) for a single finite real."""
    if not math.isfinite(s):
        raise DomainError(f"activation input must be finite, got {s}")
    return float(act(float(s)))


class EnvelopeCheck(NamedTuple):
    ok: bool
    worst_point: float
    worst_ratio: float


def envelope_check(act: Activation, grid) -> EnvelopeCheck:
    """Check ``|phi(s)| <= a + b|s|^m`` on every grid point.

    Also reports the grid point with the largest ratio ``|phi(s)| / (a + b|s|^m)``.
    """
    grid = np.asarray(grid, dtype=float).ravel()
    if grid.size == 0:
        raise DomainError("envelope_check needs a nonempty grid")
    if not np.all(np.isfinite(grid)):
        raise DomainError("envelope_check grid must be finite")
    ratio = np.abs(act(grid)) / act.envelope(grid)
    i = int(np.argmax(ratio))
    return EnvelopeCheck(bool(np.all(ratio <= 1.0)), float(grid[i]), float(ratio[i]))


def lipschitz_probe(act: Activation, grid) -> float:
    """Largest finite-difference slope between adjacent points of a sorted grid."""
    grid = np.asarray(grid, dtype=float).ravel()
    if grid.size < 2:
        raise DomainError("lipschitz_probe needs at least two grid points")
    if not np.all(np.isfinite(grid)):
        raise DomainError("lipschitz_probe grid must be finite")
    ds = np.diff(grid)
    if np.any(ds == 0):
        raise DomainError("lipschitz_probe grid has duplicate points")
    if np.any(ds < 0):
        raise DomainError("lipschitz_probe grid must be sorted ascending")
    return float(np.max(np.abs(np.diff(act(grid))) / ds))
