"""Distances between finite-width samples and the Gaussian limit."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np
from scipy.special import kolmogorov, ndtr, ndtri
from scipy.stats import qmc

from . import _rng
from .errors import DomainError
from .kernel import CovMatrix
from .netsim import SampleBatch

SCHEMA = "nngp-report/1"
MIN_KS_SAMPLES = 1000
FAMILY_LEVEL = 0.01


class TGrid:
    """Evaluation points for characteristic functions; row 0 is t = 0.

    Default: 199 Halton points mapped into the ball of radius 3 / sqrt(max diag),
    directions from the normal quantile transform, radius u^(1/k) for
    uniform filling.
    """

    def __init__(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if not np.all(pts[0] == 0):
            raise DomainError("TGrid must start with t = 0")
        pts.setflags(write=False)
        self.points = pts

    @classmethod
    def default(cls, cov: CovMatrix, size: int = 200) -> "TGrid":
        k = cov.k
        radius = 3.0 / math.sqrt(cov.max_diag)
        h = qmc.Halton(d=k + 1, scramble=False)
        h.fast_forward(1)
        u = h.random(size - 1)
        d = ndtri(np.clip(u[:, :k], 1e-12, 1 - 1e-12))
        norms = np.linalg.norm(d, axis=1, keepdims=True)
        d = np.divide(d, norms, out=np.zeros_like(d), where=norms > 0)
        r = radius * u[:, k:] ** (1.0 / k)
        return cls(np.vstack([np.zeros(k), d * r]))


def ecf_distance(batch: SampleBatch, cov: CovMatrix, grid: Optional[TGrid] = None) -> float:
    """max over units and t of |mean_s exp(i t.f_s) - exp(-t' Sigma t / 2)|."""
    if batch.layer != cov.layer:
        raise DomainError(f"batch is layer {batch.layer} but covariance is layer {cov.layer}")
    if batch.k != cov.k:
        raise DomainError(f"batch has k={batch.k} inputs, covariance has k={cov.k}")
    grid = grid or TGrid.default(cov)
    T = grid.points
    target = np.exp(-0.5 * np.einsum("gi,ij,gj->g", T, cov.entries, T))
    worst = 0.0
    for u in range(batch.U):
        phase = batch.values[:, u, :] @ T.T
        ecf = np.cos(phase).mean(axis=0) + 1j * np.sin(phase).mean(axis=0)
        worst = max(worst, float(np.max(np.abs(ecf - target))))
    return worst


def ks_distance(samples, variance: float) -> tuple[float, float]:
    """Two-sided KS statistic against N(0, variance) and its asymptotic p-value."""
    if not variance > 0:
        raise DomainError(f"variance must be > 0, got {variance}")
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    S = x.size
    if S == 0:
        raise DomainError("ks_distance needs at least one sample")
    F = ndtr(x / math.sqrt(variance))
    i = np.arange(1, S + 1)
    D = float(max(np.max(i / S - F), np.max(F - (i - 1) / S)))
    return D, float(kolmogorov(math.sqrt(S) * D))


class MarginalKS(NamedTuple):
    unit: int
    input: int
    D: float
    p: float


def marginal_ks(batch: SampleBatch, cov: CovMatrix) -> list[MarginalKS]:
    """KS of every (unit, input) marginal against N(0, Sigma_rr)."""
    if batch.S < MIN_KS_SAMPLES:
        raise DomainError(f"asymptotic KS p-values need S >= {MIN_KS_SAMPLES}, got {batch.S}")
    out = []
    for u in range(batch.U):
        for r in range(batch.k):
            D, p = ks_distance(batch.values[:, u, r], cov.entries[r, r])
            out.append(MarginalKS(u, r, D, p))
    return out


def bonferroni_pass(results, family_level: float = FAMILY_LEVEL) -> bool:
    return all(r.p > family_level / len(results) for r in results)


def cov_frobenius_error(empirical: CovMatrix, target: CovMatrix) -> float:
    if empirical.entries.shape != target.entries.shape:
        raise DomainError("covariances have different shapes")
    norm = float(np.linalg.norm(target.entries))
    if norm == 0:
        raise DomainError("target covariance has zero Frobenius norm")
    return float(np.linalg.norm(empirical.entries - target.entries)) / norm


class RateFit(NamedTuple):
    slope: float
    se: float
    intercept: float


def rate_fit(errors) -> RateFit:
    """Least-squares slope of log(error) against log(n)."""
    pts = [(float(n), float(e)) for n, e in errors]
    if len(pts) < 3:
        raise DomainError("rate_fit needs at least three widths")
    if any(e <= 0 or n <= 0 for n, e in pts):
        raise DomainError("rate_fit needs positive widths and errors")
    x = np.log([n for n, _ in pts])
    y = np.log([e for _, e in pts])
    xc = x - x.mean()
    sxx = float(xc @ xc)
    slope = float(xc @ (y - y.mean())) / sxx
    resid = y - y.mean() - slope * xc
    se = float(np.sqrt((resid @ resid) / (len(x) - 2) / sxx))
    return RateFit(slope, se, float(y.mean() - slope * x.mean()))


def _allowed(bound, moment, se):
    return bound if moment == 0 else bound * (1.0 + 4.0 * se / moment)


@dataclass(frozen=True)
class MomentMargin:
    theta: int
    moment: float
    se: float
    bound: float
    passed: bool

    @property
    def allowed(self) -> float:
        """The bound widened by the Monte Carlo slack, ``B (1 + 4 se / M)``."""
        return _allowed(self.bound, self.moment, self.se)

    @property
    def margin(self) -> float:
        """``allowed - moment``; nonnegative iff passed."""
        return self.allowed - self.moment


def moment_bound_check(fx, fy, theta: int, bound_constant: float, dist: float,
                       seed: int = 0, resamples: int = 200) -> MomentMargin:
    """Compare mean |f(y) - f(x)|^(2 theta) with H ||y - x||^(2 theta).

    ``fx`` and ``fy`` must come from the same weight draws, sample by sample.
    The standard error is a seeded bootstrap; the check passes when
    ``M <= B (1 + 4 se / M)`` (and trivially when M = 0).
    """
    if int(theta) != theta or not 1 <= theta <= 4:
        raise DomainError(f"theta must be an integer in 1..4, got {theta}")
    fx = np.asarray(fx, dtype=float).ravel()
    fy = np.asarray(fy, dtype=float).ravel()
    if fx.shape != fy.shape or fx.size < 2:
        raise DomainError("fx and fy must be paired samples of equal length >= 2")
    vals = np.abs(fy - fx) ** (2 * int(theta))
    M = float(vals.mean())
    rng = _rng.stream(seed, int(theta), 0, _rng.BOOTSTRAP)
    idx = rng.integers(0, vals.size, size=(resamples, vals.size))
    se = float(vals[idx].mean(axis=1).std(ddof=1))
    B = float(bound_constant) * float(dist) ** (2 * int(theta))
    return MomentMargin(int(theta), M, se, B, bool(M <= _allowed(B, M, se)))


def rinf_distance(a, b) -> tuple[float, float]:
    """Truncated d_inf = sum_i xi(|a_i - b_i|) / 2^i, xi(t) = t / (1 + t).

    Returns the value and the bound 2^-len on the omitted tail.
    """
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.shape != b.shape:
        raise DomainError("rinf_distance needs prefixes of equal length")
    d = np.abs(a - b)
    w = 0.5 ** np.arange(1, a.size + 1)
    return float(np.sum(w * d / (1.0 + d))), 0.5**a.size


def _plain(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


@dataclass
class WidthRecord:
    n: int
    cov_frobenius_error: float
    cov_frobenius_error_centered: float
    ecf_distance: float
    ks: list
    moments: list
    cross_unit_corr: Optional[float] = None
    cross_unit_skipped: int = 0

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "cov_frobenius_error": self.cov_frobenius_error,
            "cov_frobenius_error_centered": self.cov_frobenius_error_centered,
            "ecf_distance": self.ecf_distance,
            "ks_per_marginal": [r._asdict() for r in self.ks],
            "moment_margins": [
                {"theta": m.theta, "moment": m.moment, "se": m.se, "bound": m.bound,
                 "allowed": m.allowed, "margin": m.margin, "passed": m.passed}
                for m in self.moments
            ],
            "cross_unit_corr": self.cross_unit_corr,
            "cross_unit_skipped_pairs": self.cross_unit_skipped,
        }


@dataclass
class ConvergenceReport:
    seed: int
    config: dict
    widths: list = field(default_factory=list)
    rate: Optional[RateFit] = None
    extra: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)
    partial: bool = False
    error: Optional[dict] = None
    timestamp: Optional[str] = None

    def validate(self):
        ns = [w.n for w in self.widths]
        if any(b <= a for a, b in zip(ns, ns[1:])):
            raise DomainError("report widths must be strictly increasing")
        for w in self.widths:
            for v in (w.cov_frobenius_error, w.ecf_distance):
                if not math.isfinite(v):
                    raise DomainError(f"non-finite statistic at n={w.n}")

    @property
    def passed(self) -> bool:
        return self.error is None and all(c["passed"] for c in self.checks.values())

    def to_dict(self) -> dict:
        d = {
            "schema": SCHEMA,
            "seed": self.seed,
            "config": self.config,
            "partial": self.partial,
            "widths": [w.to_dict() for w in self.widths],
            "rate": None if self.rate is None else self.rate._asdict(),
            "checks": self.checks,
            "passed": self.passed,
        }
        d.update(self.extra)
        if self.error is not None:
            d["error"] = self.error
        if self.timestamp is not None:
            d["timestamp"] = self.timestamp
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=False,
                          default=_plain) + "\n"

    def write_widths_csv(self, path) -> Path:
        """One row per width: the scalar statistics only."""
        path = Path(path)
        thetas = sorted({m.theta for w in self.widths for m in w.moments})
        with path.open("w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["n", "cov_frobenius_error", "cov_frobenius_error_centered", "ecf_distance",
                         "ks_min_p", "cross_unit_corr"] + [f"moment_margin_theta{t}" for t in thetas])
            for w in self.widths:
                margins = {m.theta: m.margin for m in w.moments}
                wr.writerow([w.n, repr(w.cov_frobenius_error), repr(w.cov_frobenius_error_centered),
                             repr(w.ecf_distance), repr(min((r.p for r in w.ks), default=float("nan"))),
                             "" if w.cross_unit_corr is None else repr(w.cross_unit_corr)]
                            + [repr(margins[t]) if t in margins else "" for t in thetas])
        return path
