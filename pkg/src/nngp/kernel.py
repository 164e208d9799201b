"""Infinite-width covariance recursion for fully-connected Gaussian networks.

Layer 1 is exact::

    Sigma(1)[r, s] = sigma_b^2 + sigma_w^2 <x_r, x_s>

and every later layer is

    Sigma(l)[r, s] = sigma_b^2 + sigma_w^2 E[phi(U) phi(V)],
    (U, V) ~ N2(0, [[Sigma(l-1)[r,r], Sigma(l-1)[r,s]], [., Sigma(l-1)[s,s]]]).

Write U = su X and V = sv (rho X + sqrt(1 - rho^2) Z) with X, Z iid N(0, 1).

* Smooth activations (tanh, erf) use a tensorized Gauss-Hermite rule.  The
  poles of tanh sit at distance pi / (2 sigma) from the real axis, so
  convergence slows as the variance grows; ``nodes_per_axis`` is the node
  count at unit scale and is doubled per octave of ``1.5 * max variance``
  (at most 16x).
* Piecewise-linear activations (identity, relu, custom tables) are exact:
  the plane splits into rectangles on which phi(U) phi(V) is a bilinear
  polynomial, and each rectangle moment of a standard bivariate normal has a
  closed form through Owen's T function.  A Gauss-Hermite rule across a kink
  loses about three digits at 64 nodes, and even kink-split rules lose PSD-ness
  for nearly collinear inputs, so no quadrature is used here.  The only
  exception is perfect correlation, handled by a kink-split 1-D rule.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.special import ndtr, owens_t, roots_hermitenorm

from .activation import Activation
from .errors import DomainError, NumericError, RangeError

# outer-axis truncation for the Gauss-Legendre panels; phi(10) ~ 8e-23
TRUNCATION = 10.0
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
_CHUNK_ELEMENTS = 1 << 21


@dataclass(frozen=True)
class NetworkParams:
    depth: int
    sigma_w_sq: float
    sigma_b_sq: float

    def __post_init__(self):
        if int(self.depth) != self.depth or self.depth < 1:
            raise DomainError(f"depth must be an integer >= 1, got {self.depth}")
        if not self.sigma_w_sq > 0:
            raise DomainError(f"sigma_w_sq must be > 0, got {self.sigma_w_sq}")
        if not self.sigma_b_sq >= 0:
            raise DomainError(f"sigma_b_sq must be >= 0, got {self.sigma_b_sq}")
        object.__setattr__(self, "depth", int(self.depth))
        object.__setattr__(self, "sigma_w_sq", float(self.sigma_w_sq))
        object.__setattr__(self, "sigma_b_sq", float(self.sigma_b_sq))


class InputSet:
    """``I x k`` matrix whose columns are k distinct inputs in R^I."""

    def __init__(self, X):
        X = np.array(X, dtype=float)
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise DomainError(f"input matrix must be 2-D and nonempty, got shape {X.shape}")
        if not np.all(np.isfinite(X)):
            raise DomainError("input matrix has non-finite entries")
        cols = X.T
        _, first = np.unique(cols, axis=0, return_index=True)
        if first.size != cols.shape[0]:
            dup = sorted(set(range(cols.shape[0])) - set(first.tolist()))
            raise DomainError(f"inputs must be distinct; duplicate column(s) {dup}")
        X.setflags(write=False)
        self.X = X

    @classmethod
    def from_points(cls, points) -> "InputSet":
        """Build from a ``k x I`` array of points (one input per row)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return cls(pts.T)

    @property
    def I(self) -> int:  # noqa: E743 - matches the usual notation
        return self.X.shape[0]

    @property
    def k(self) -> int:
        return self.X.shape[1]

    @property
    def points(self) -> np.ndarray:
        return self.X.T

    def subset(self, idx) -> "InputSet":
        return InputSet(self.X[:, list(idx)])


@dataclass(frozen=True, eq=False)
class CovMatrix:
    entries: np.ndarray
    layer: int = 0

    def __post_init__(self):
        m = np.array(self.entries, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DomainError(f"covariance must be square, got shape {m.shape}")
        scale = max(float(np.max(np.abs(m))), np.finfo(float).tiny) if m.size else 1.0
        if np.max(np.abs(m - m.T), initial=0.0) > 1e-12 * scale:
            raise DomainError("covariance matrix is not symmetric to 1e-12 relative")
        m.setflags(write=False)
        object.__setattr__(self, "entries", m)

    @property
    def k(self) -> int:
        return self.entries.shape[0]

    @property
    def max_diag(self) -> float:
        return float(np.max(np.diag(self.entries)))

    def submatrix(self, idx) -> "CovMatrix":
        idx = np.asarray(idx)
        return CovMatrix(self.entries[np.ix_(idx, idx)], self.layer)


@dataclass(frozen=True)
class QuadratureSpec:
    nodes_per_axis: int = 64
    degenerate_variance_floor: float = 1e-12

    def __post_init__(self):
        if int(self.nodes_per_axis) != self.nodes_per_axis or self.nodes_per_axis < 2:
            raise DomainError("nodes_per_axis must be an integer >= 2")
        if not self.degenerate_variance_floor >= 0:
            raise DomainError("degenerate_variance_floor must be >= 0")


@lru_cache(maxsize=16)
def _hermite_rule(n: int):
    z, w = roots_hermitenorm(n)
    w = w / math.sqrt(2.0 * math.pi)
    z.setflags(write=False)
    w.setflags(write=False)
    return z, w


@lru_cache(maxsize=16)
def _legendre_rule(n: int):
    x, w = leggauss(n)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def base_kernel(inputs: InputSet, params: NetworkParams) -> CovMatrix:
    X = inputs.X
    gram = X.T @ X
    gram = np.triu(gram) + np.triu(gram, 1).T
    return CovMatrix(params.sigma_b_sq + params.sigma_w_sq * gram, layer=1)


def _validated(var_u, var_v, cov_uv, floor):
    vu = np.asarray(var_u, dtype=float)
    vv = np.asarray(var_v, dtype=float)
    c = np.asarray(cov_uv, dtype=float)
    if not (np.all(np.isfinite(vu)) and np.all(np.isfinite(vv)) and np.all(np.isfinite(c))):
        raise DomainError("variances and covariance must be finite")
    if np.any(vu < 0) or np.any(vv < 0):
        raise DomainError("variances must be nonnegative")
    bound = np.sqrt(vu * vv)
    excess = np.abs(c) - bound
    if np.any(excess > 1e-8 * bound + floor):
        i = int(np.argmax(excess - 1e-8 * bound))
        raise DomainError(
            f"2x2 covariance is indefinite: |cov|={abs(float(c.flat[i]))} exceeds "
            f"sqrt(var_u var_v)={float(bound.flat[i])}"
        )
    su = np.sqrt(vu)
    sv = np.sqrt(vv)
    live = (vu >= floor) & (vv >= floor) & (bound > 0)
    rho = np.zeros_like(bound)
    np.divide(c, bound, out=rho, where=live)
    rho = np.clip(rho, -1.0, 1.0)
    su = np.where(vu >= floor, su, 0.0)
    sv = np.where(vv >= floor, sv, 0.0)
    return su, sv, rho


def _smooth_chunk(act, su, sv, rho, n):
    z, w = _hermite_rule(n)
    s = np.sqrt(np.maximum(1.0 - rho * rho, 0.0))
    U = su[:, None] * z
    V = sv[:, None, None] * (rho[:, None, None] * z[None, :, None] + s[:, None, None] * z[None, None, :])
    inner = (act(V) * w).sum(axis=-1)
    return (w * act(U) * inner).sum(axis=-1)


def _outer_panels(cuts, n):
    """Gauss-Legendre nodes/weights (against the N(0,1) density) on panels between cuts."""
    x, w = _legendre_rule(n)
    P = cuts.shape[0]
    edges = np.concatenate(
        [np.full((P, 1), -TRUNCATION), np.sort(cuts, axis=1), np.full((P, 1), TRUNCATION)], axis=1
    )
    lo = edges[:, :-1, None]
    half = 0.5 * (edges[:, 1:, None] - lo)
    z = lo + half * (x + 1.0)
    wt = half * w * np.exp(-0.5 * z * z) * _INV_SQRT_2PI
    return z.reshape(P, -1), wt.reshape(P, -1)


def _pl_chunk(act, pieces, su, sv, rho, n):
    knots, slopes, intercepts = pieces
    P = su.shape[0]
    s = np.sqrt(np.maximum(1.0 - rho * rho, 0.0))
    if knots.size == 0:
        z, w = _hermite_rule(n)
        z1 = np.broadcast_to(z, (P, n))
        w1 = np.broadcast_to(w, (P, n))
    else:
        nz = knots[knots != 0.0]
        with np.errstate(divide="ignore", invalid="ignore"):
            c1 = nz[None, :] / su[:, None]
            c2 = nz[None, :] / (sv * rho)[:, None]
        cuts = np.concatenate([np.zeros((P, 1)), c1, c2], axis=1)
        cuts = np.clip(np.nan_to_num(cuts, nan=TRUNCATION), -TRUNCATION, TRUNCATION)
        z1, w1 = _outer_panels(cuts, n)

    a = (sv * rho)[:, None] * z1
    b = (sv * s)[:, None]
    live = b > 0
    bsafe = np.where(live, b, 1.0)
    c = (knots[None, None, :] - a[..., None]) / bsafe[..., None]
    F = ndtr(c)
    d = np.exp(-0.5 * c * c) * _INV_SQRT_2PI
    shape = a.shape + (1,)
    F = np.concatenate([np.zeros(shape), F, np.ones(shape)], axis=-1)
    d = np.concatenate([np.zeros(shape), d, np.zeros(shape)], axis=-1)
    lin = intercepts + slopes * a[..., None]
    g = (lin * np.diff(F, axis=-1) - slopes * b[..., None] * np.diff(d, axis=-1)).sum(axis=-1)
    g = np.where(live, g, act(a))
    return (w1 * act(su[:, None] * z1) * g).sum(axis=-1)


# stands in for +-inf: phi(50) underflows to 0 and Phi(50) rounds to 1
_BIG = 50.0


def _orthant_moments(h, k, rho, s):
    """E[g(X, Y) 1{X < h, Y < k}] for g in (1, X, Y, XY), (X, Y) standard with corr rho."""
    ph = np.exp(-0.5 * h * h) * _INV_SQRT_2PI
    pk = np.exp(-0.5 * k * k) * _INV_SQRT_2PI
    ck = ndtr((k - rho * h) / s)
    ch = ndtr((h - rho * k) / s)
    with np.errstate(divide="ignore", invalid="ignore"):
        ah = (k - rho * h) / (h * s)
        ak = (h - rho * k) / (k * s)
    ah = np.where(h == 0, np.where(k >= 0, np.inf, -np.inf), ah)
    ak = np.where(k == 0, np.where(h >= 0, np.inf, -np.inf), ak)
    corner = np.where((h * k > 0) | ((h * k == 0) & (h + k >= 0)), 0.0, 0.5)
    p0 = 0.5 * (ndtr(h) + ndtr(k)) - owens_t(h, ah) - owens_t(k, ak) - corner
    p0 = np.where((h == 0) & (k == 0), 0.25 + np.arcsin(rho) / (2 * math.pi), p0)
    ex = -ph * ck - rho * pk * ch
    ey = -pk * ch - rho * ph * ck
    exy = rho * p0 - rho * h * ph * ck - rho * k * pk * ch + s * ph * np.exp(
        -0.5 * ((k - rho * h) / s) ** 2) * _INV_SQRT_2PI
    return p0, ex, ey, exy


def _pl_exact(pieces, su, sv, rho):
    """Closed-form E[phi(su X) phi(sv Y)] for su, sv > 0 and |rho| < 1."""
    knots, slopes, intercepts = pieces
    P = su.shape[0]
    s = np.sqrt((1.0 - rho) * (1.0 + rho))
    big = np.full((P, 1), _BIG)
    h = np.clip(np.concatenate([-big, knots / su[:, None], big], axis=1), -_BIG, _BIG)
    k = np.clip(np.concatenate([-big, knots / sv[:, None], big], axis=1), -_BIG, _BIG)
    r = rho[:, None, None]
    m = _orthant_moments(h[:, :, None], k[:, None, :], r, s[:, None, None])
    rect = [np.diff(np.diff(q, axis=1), axis=2) for q in m]
    ai, bi = intercepts[None, :, None], (slopes * 1.0)[None, :, None] * su[:, None, None]
    aj, bj = intercepts[None, None, :], (slopes * 1.0)[None, None, :] * sv[:, None, None]
    total = ai * aj * rect[0] + bi * aj * rect[1] + ai * bj * rect[2] + bi * bj * rect[3]
    return total.reshape(P, -1).sum(axis=-1)


def _pl_1d(pieces, sigma):
    """E[phi(sigma Z)], exact for piecewise-linear phi."""
    knots, slopes, intercepts = pieces
    with np.errstate(divide="ignore", invalid="ignore"):
        c = np.where(sigma[:, None] > 0, knots / sigma[:, None], np.sign(knots) * _BIG)
    c = np.clip(c, -_BIG, _BIG)
    shape = (sigma.shape[0], 1)
    F = np.concatenate([np.zeros(shape), ndtr(c), np.ones(shape)], axis=1)
    d = np.concatenate([np.zeros(shape), np.exp(-0.5 * c * c) * _INV_SQRT_2PI, np.zeros(shape)], axis=1)
    return (intercepts * np.diff(F, axis=1) - slopes * sigma[:, None] * np.diff(d, axis=1)).sum(axis=1)


def _pl_chunk_exact(act, pieces, su, sv, rho, n):
    out = np.empty(su.shape[0])
    zero0 = float(act(0.0))
    du, dv = su == 0, sv == 0
    perfect = ~du & ~dv & (np.abs(rho) >= 1.0)
    regular = ~du & ~dv & ~perfect
    if np.any(regular):
        out[regular] = _pl_exact(pieces, su[regular], sv[regular], rho[regular])
    if np.any(perfect):
        out[perfect] = _pl_chunk(act, pieces, su[perfect], sv[perfect], rho[perfect], n)
    only_v = du & ~dv
    only_u = dv & ~du
    out[only_v] = zero0 * _pl_1d(pieces, sv[only_v])
    out[only_u] = zero0 * _pl_1d(pieces, su[only_u])
    out[du & dv] = zero0 * zero0
    return out


def bivariate_expectations(var_u, var_v, cov_uv, act: Activation, quad: QuadratureSpec = QuadratureSpec(),
                           threads: int = 1) -> np.ndarray:
    """Vectorized E[phi(U) phi(V)] over arrays of (var_u, var_v, cov_uv).

    Work is cut into fixed-size chunks; each entry is summed in a fixed order,
    so results do not depend on ``threads``.
    """
    su, sv, rho = _validated(var_u, var_v, cov_uv, quad.degenerate_variance_floor)
    shape = su.shape
    su, sv, rho = su.ravel(), sv.ravel(), rho.ravel()
    n = quad.nodes_per_axis
    pieces = act.pieces()
    if pieces is None:
        scale = _node_multiplier(np.maximum(su, sv))
        out = np.empty(su.size)
        for mult in np.unique(scale):
            sel = np.flatnonzero(scale == mult)
            m = int(n * mult)
            out[sel] = _run_chunks(lambda a, b, r: _smooth_chunk(act, a, b, r, m),  # noqa: B023
                                   m * m, su[sel], sv[sel], rho[sel], threads)
        return out.reshape(shape)
    out = _run_chunks(lambda a, b, r: _pl_chunk_exact(act, pieces, a, b, r, n),
                      8 * (pieces.knots.size + 2) ** 2, su, sv, rho, threads)
    return out.reshape(shape)


def _node_multiplier(sigma_max):
    want = np.maximum(1.0, 1.5 * sigma_max * sigma_max)
    return np.minimum(2.0 ** np.ceil(np.log2(want)), 16.0)


def _run_chunks(fn, per_entry, su, sv, rho, threads):
    step = max(1, _CHUNK_ELEMENTS // per_entry)
    bounds = [(i, min(i + step, su.size)) for i in range(0, su.size, step)]
    out = np.empty(su.size)

    def work(span):
        i, j = span
        out[i:j] = fn(su[i:j], sv[i:j], rho[i:j])

    if threads > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(work, bounds))
    else:
        for span in bounds:
            work(span)
    return out


def bivariate_expectation(var_u: float, var_v: float, cov_uv: float, act: Activation,
                          quad: QuadratureSpec = QuadratureSpec()) -> float:
    """E[phi(U) phi(V)] for (U, V) ~ N2(0, [[var_u, cov_uv], [cov_uv, var_v]]).

    Covariances that overshoot ``sqrt(var_u var_v)`` by less than 1e-8 relative
    are clamped to the boundary; larger overshoots raise :class:`DomainError`.
    A variance below ``quad.degenerate_variance_floor`` is treated as a point
    mass at zero.
    """
    return float(bivariate_expectations(np.array([var_u]), np.array([var_v]), np.array([cov_uv]),
                                        act, quad)[0])


def psd_repair(m, rel_floor: float = 0.0):
    """Clip eigenvalues of a symmetric matrix from below at ``rel_floor * max(diag)``.

    Returns ``(matrix, clipped)`` where ``clipped`` is the largest amount any
    eigenvalue was raised.  Eigenvalues within rounding noise of the floor are
    left alone, so a matrix that is already PSD comes back unchanged.
    """
    m = np.array(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DomainError(f"psd_repair needs a square matrix, got shape {m.shape}")
    scale = float(np.max(np.abs(m))) if m.size else 0.0
    if np.max(np.abs(m - m.T), initial=0.0) > 1e-8 * max(scale, np.finfo(float).tiny):
        raise DomainError("psd_repair: matrix is asymmetric beyond 1e-8 relative")
    m = 0.5 * (m + m.T)
    if m.size == 0:
        return m, 0.0
    floor = rel_floor * float(np.max(np.diag(m)))
    lam, vec = np.linalg.eigh(m)
    noise = 64 * np.finfo(float).eps * m.shape[0] * max(float(np.max(np.abs(lam))), floor)
    if lam[0] >= floor - noise:
        return m, 0.0
    clipped = float(floor - lam[0])
    fixed = (vec * np.maximum(lam, floor)) @ vec.T
    return 0.5 * (fixed + fixed.T), clipped


def layer_step(prev: CovMatrix, act: Activation, params: NetworkParams,
               quad: QuadratureSpec = QuadratureSpec(), threads: int = 1) -> CovMatrix:
    """One application of the recursion: Sigma(l-1) -> Sigma(l)."""
    P = prev.entries
    k = P.shape[0]
    r, s = np.triu_indices(k)
    diag = np.diag(P)
    e = bivariate_expectations(diag[r], diag[s], P[r, s], act, quad, threads=threads)
    out = np.empty((k, k))
    out[r, s] = params.sigma_b_sq + params.sigma_w_sq * e
    out[s, r] = out[r, s]
    fixed, clipped = psd_repair(out, 0.0)
    if clipped > 1e-8 * max(float(np.max(np.diag(out))), np.finfo(float).tiny):
        raise NumericError(
            f"layer {prev.layer + 1} kernel has eigenvalue -{clipped:.3e}, beyond rounding; "
            "increase nodes_per_axis"
        )
    return CovMatrix(fixed, layer=prev.layer + 1)


def kernel_at_depth(inputs: InputSet, act: Activation, params: NetworkParams,
                    quad: QuadratureSpec = QuadratureSpec(), threads: int = 1) -> list[CovMatrix]:
    """[Sigma(1), ..., Sigma(L)]."""
    layers = [base_kernel(inputs, params)]
    for _ in range(params.depth - 1):
        layers.append(layer_step(layers[-1], act, params, quad, threads=threads))
    return layers


def abs_normal_moment(theta: int) -> float:
    """E|Z|^(2 theta) = (2 theta - 1)!! for a standard normal Z."""
    if int(theta) != theta or theta < 0:
        raise DomainError(f"theta must be a nonnegative integer, got {theta}")
    out = 1
    for j in range(1, 2 * int(theta), 2):
        out *= j
    return float(out)


def holder_moment_bound(theta: int, layer: int, params: NetworkParams, L_phi: float) -> float:
    """H(l) = C_theta^l (sigma_w^2)^(l theta) (L_phi^2)^((l-1) theta).

    Bounds E|f(y) - f(x)|^(2 theta) <= H(l) ||y - x||^(2 theta) at every width.
    """
    if int(theta) != theta or theta < 1:
        raise DomainError(f"theta must be an integer >= 1, got {theta}")
    if int(layer) != layer or layer < 1:
        raise DomainError(f"layer must be an integer >= 1, got {layer}")
    if not L_phi > 0:
        raise DomainError(f"L_phi must be > 0, got {L_phi}")
    theta, layer = int(theta), int(layer)
    C = abs_normal_moment(theta)
    log10 = (layer * math.log10(C) + layer * theta * math.log10(params.sigma_w_sq)
             + (layer - 1) * theta * 2 * math.log10(L_phi))
    if log10 > 307.5:
        raise RangeError(f"H({layer}) overflows float64: decimal exponent {log10:.1f}")
    return C ** layer * params.sigma_w_sq ** (layer * theta) * (L_phi * L_phi) ** ((layer - 1) * theta)


def write_kernel_csv(cov: CovMatrix, path) -> Path:
    """Row-major CSV: header ``k,layer``, one line with those values, then k rows."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "layer"])
        w.writerow([cov.k, cov.layer])
        for row in cov.entries:
            w.writerow([repr(float(v)) for v in row])
    return path


def read_kernel_csv(path) -> CovMatrix:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows or rows[0] != ["k", "layer"]:
        raise DomainError(f"{path}: expected header 'k,layer'")
    k, layer = int(rows[1][0]), int(rows[1][1])
    data = np.array([[float(v) for v in r] for r in rows[2:]], dtype=float)
    if data.shape != (k, k):
        raise DomainError(f"{path}: expected {k}x{k} entries, got {data.shape}")
    return CovMatrix(data, layer)
