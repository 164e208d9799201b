"""Sampling the limiting Gaussian process and estimating path regularity."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import _rng
from .activation import Activation
from .errors import DomainError, NumericError, ResourceError
from .kernel import CovMatrix, InputSet, NetworkParams, QuadratureSpec, kernel_at_depth
from .netsim import SampleBatch

DEFAULT_MAX_K = 2049
_BLOCK = 4096
_JITTER_CAP = 1e-6
# below this (relative) a negative eigenvalue is rounding, and clipping it is harmless
_CLIP_TOLERANCE = 1e-8


@dataclass(frozen=True)
class GPSampleRequest:
    cov: CovMatrix
    units: int
    samples: int
    seed: int
    jitter: float = 1e-10

    def __post_init__(self):
        if not self.jitter >= 0:
            raise DomainError(f"jitter must be >= 0, got {self.jitter}")
        for name in ("units", "samples"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise DomainError(f"{name} must be an integer >= 1, got {v}")


class Factor(NamedTuple):
    L: np.ndarray  # cov ~= L @ L.T
    jitter: float  # relative jitter that was added (0 for the eigen fallback)
    method: str  # "cholesky" or "eigen-clip"


def factorize(cov: CovMatrix, jitter: float = 1e-10) -> Factor:
    """Cholesky of cov + j * max_diag * I, escalating j by 10x up to 1e-6.

    If every attempt fails, fall back to clipping negative eigenvalues, which
    is only allowed when they are rounding-sized (>= -1e-8 max_diag).
    """
    m = cov.entries
    scale = max(cov.max_diag, np.finfo(float).tiny)
    eye = np.eye(cov.k)
    j = jitter
    while True:
        try:
            return Factor(np.linalg.cholesky(m + j * scale * eye), j, "cholesky")
        except np.linalg.LinAlgError:
            pass
        if j >= _JITTER_CAP:
            break
        j = min(max(j * 10.0, 1e-10), _JITTER_CAP)
    lam, vec = np.linalg.eigh(m)
    if lam[0] < -_CLIP_TOLERANCE * scale:
        raise NumericError(
            f"covariance is not PSD: min eigenvalue {lam[0]:.6e} "
            f"(max diagonal {scale:.6e}); jitter up to {_JITTER_CAP} did not help"
        )
    return Factor(vec * np.sqrt(np.maximum(lam, 0.0)), 0.0, "eigen-clip")


def sample_gp(req: GPSampleRequest) -> SampleBatch:
    """S x U iid draws from N_k(0, cov); units are independent copies."""
    fac = factorize(req.cov, req.jitter)
    total = req.samples * req.units
    k = req.cov.k
    z = np.empty((total, k))
    for block, start in enumerate(range(0, total, _BLOCK)):
        stop = min(start + _BLOCK, total)
        z[start:stop] = _rng.stream(req.seed, block, 0, _rng.GP).standard_normal((stop - start, k))
    values = (z @ fac.L.T).reshape(req.samples, req.units, k)
    meta = {"jitter": fac.jitter, "factorization": fac.method}
    return SampleBatch(values, req.cov.layer, 0, req.seed, meta)


def segment_inputs(x0, x1, levels: int) -> InputSet:
    """The 2^J + 1 dyadic points x0 + t (x1 - x0), t = i / 2^J."""
    x0 = np.asarray(x0, dtype=float).ravel()
    x1 = np.asarray(x1, dtype=float).ravel()
    if x0.shape != x1.shape:
        raise DomainError("segment endpoints must have the same dimension")
    if np.array_equal(x0, x1):
        raise DomainError("segment endpoints must differ")
    if int(levels) != levels or levels < 1:
        raise DomainError(f"levels must be an integer >= 1, got {levels}")
    t = np.arange(2**levels + 1) / 2**levels
    return InputSet(x0[:, None] + np.outer(x1 - x0, t))


def segment_kernel(x0, x1, levels: int, act: Activation, params: NetworkParams,
                   quad: QuadratureSpec = QuadratureSpec(), max_k: int = DEFAULT_MAX_K,
                   threads: int = 1) -> CovMatrix:
    """Sigma(L) on the finest dyadic grid of the segment x0 -> x1."""
    k = 2**int(levels) + 1
    if k > max_k:
        raise ResourceError(f"segment grid has {k} points, above the configured max k = {max_k}")
    return kernel_at_depth(segment_inputs(x0, x1, levels), act, params, quad, threads=threads)[-1]


@dataclass(frozen=True, eq=False)
class SegmentPath:
    """Process values on the finest dyadic grid; coarser levels are subsamples of it."""

    x0: np.ndarray
    x1: np.ndarray
    levels: int
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        if v.size != 2**self.levels + 1:
            raise DomainError(f"path needs 2^J + 1 = {2**self.levels + 1} values, got {v.size}")
        object.__setattr__(self, "values", v)

    @property
    def length(self) -> float:
        return float(np.linalg.norm(np.asarray(self.x1, float) - np.asarray(self.x0, float)))

    def level(self, j: int) -> tuple[np.ndarray, np.ndarray]:
        """(t, values) on the level-j grid, 2^j + 1 points."""
        stride = 2 ** (self.levels - j)
        t = np.arange(2**j + 1) / 2**j
        return t, self.values[::stride]

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["level", "t", "value"])
            for j in range(self.levels + 1):
                for t, v in zip(*self.level(j)):
                    w.writerow([j, repr(float(t)), repr(float(v))])
        return path


def sample_segment_paths(x0, x1, levels: int, cov: CovMatrix, paths: int, seed: int,
                         jitter: float = 1e-10) -> list[SegmentPath]:
    if cov.k != 2**levels + 1:
        raise DomainError(f"kernel has k={cov.k}, segment grid has {2**levels + 1} points")
    batch = sample_gp(GPSampleRequest(cov, 1, paths, seed, jitter))
    x0 = np.asarray(x0, dtype=float)
    x1 = np.asarray(x1, dtype=float)
    return [SegmentPath(x0, x1, levels, batch.values[s, 0]) for s in range(paths)]


@dataclass(frozen=True)
class HolderEstimate:
    gamma: float
    se: float
    band: tuple
    scales: np.ndarray
    max_increments: np.ndarray
    excluded: list  # levels dropped because some increment was exactly zero


def holder_exponent_estimate(path: SegmentPath) -> HolderEstimate:
    """Slope of log(max |increment| at scale h) against log h over levels 1..J."""
    if path.levels < 4:
        raise DomainError(f"Holder estimate needs at least 4 dyadic levels, got {path.levels}")
    scales, incs, excluded = [], [], []
    for j in range(1, path.levels + 1):
        d = np.abs(np.diff(path.level(j)[1]))
        if np.any(d == 0):
            excluded.append(j)
            continue
        scales.append(path.length / 2**j)
        incs.append(float(d.max()))
    if len(scales) < 3:
        raise DomainError(f"only {len(scales)} usable scales after excluding ties at levels {excluded}")
    x = np.log(scales)
    y = np.log(incs)
    xc = x - x.mean()
    sxx = float(xc @ xc)
    slope = float(xc @ (y - y.mean())) / sxx
    resid = y - y.mean() - slope * xc
    se = float(np.sqrt((resid @ resid) / (len(x) - 2) / sxx))
    return HolderEstimate(slope, se, (slope - 2 * se, slope + 2 * se),
                          np.array(scales), np.array(incs), excluded)
