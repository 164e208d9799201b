"""Finite-width fully-connected Gaussian networks.

A sample is one draw of every weight and bias; all k inputs go through the
same draw, and the U reported units of a layer share the hidden units below
them.  Layer widths are ``max(n, U)`` for hidden layers (the first n units
feed the next layer) and ``U`` for the last layer.  Layer 1 has fan-in I and
does not depend on n.

Two samplers produce the same law:

``weights``
    materializes every weight matrix, O(n^2 k) per hidden layer.  Needed for
    the per-realization Lipschitz witness.
``conditional``
    uses that, given the previous layer, unit i of layer l is
    ``sigma_w w_i . A / sqrt(n) + b_i`` with ``A = phi(f^(l-1)) in R^{n x k}``,
    i.e. Gaussian with covariance ``sigma_w^2 A^T A / n = sigma_w^2 R^T R``
    (``R`` from a thin QR of ``A / sqrt(n)``), so it draws ``z R`` with z in
    R^k.  O(n k^2) per layer; this is what makes n = 4096 cheap.

Draws are keyed by (sample, layer, role) on a counter-based generator, so a
sample never depends on which other samples were drawn or on threading.
"""

from __future__ import annotations

import csv
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import _rng
from .activation import Activation
from .errors import DomainError, ResourceError
from .kernel import CovMatrix, InputSet, NetworkParams

MAGIC = int.from_bytes(b"NNGPBATC", "little")
VERSION = 1
_HEADER = struct.Struct("<8Q")
DEFAULT_MEMORY_BUDGET = 10**10
_CHUNK = 64


@dataclass(frozen=True, eq=False)
class SampleBatch:
    values: np.ndarray  # S x U x k
    layer: int
    width: int
    seed: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 3 or min(v.shape) < 1:
            raise DomainError(f"batch values must be S x U x k with all sizes >= 1, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise DomainError("batch contains non-finite values")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def S(self) -> int:
        return self.values.shape[0]

    @property
    def U(self) -> int:
        return self.values.shape[1]

    @property
    def k(self) -> int:
        return self.values.shape[2]

    def to_bytes(self) -> bytes:
        head = _HEADER.pack(MAGIC, VERSION, self.S, self.U, self.k, self.layer, self.width, self.seed)
        return head + self.values.astype("<f8").tobytes(order="C")

    @classmethod
    def from_bytes(cls, data: bytes) -> "SampleBatch":
        magic, version, S, U, k, layer, n, seed = _HEADER.unpack_from(data)
        if magic != MAGIC or version != VERSION:
            raise DomainError("not a sample batch file (bad magic or version)")
        body = np.frombuffer(data, dtype="<f8", offset=_HEADER.size)
        if body.size != S * U * k:
            raise DomainError(f"batch body has {body.size} values, header says {S * U * k}")
        return cls(body.reshape(S, U, k), int(layer), int(n), int(seed))

    def save(self, path) -> Path:
        path = Path(path)
        path.write_bytes(self.to_bytes())
        return path

    @classmethod
    def load(cls, path) -> "SampleBatch":
        return cls.from_bytes(Path(path).read_bytes())

    def to_csv(self, path) -> Path:
        """Long format: ``sample,unit,input,value``."""
        path = Path(path)
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["sample", "unit", "input", "value"])
            for (s, u, r), v in np.ndenumerate(self.values):
                w.writerow([s, u, r, repr(float(v))])
        return path


@dataclass(frozen=True)
class LipschitzWitness:
    layer: int
    constants: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.constants, dtype=float)
        if np.any(c < 0):
            raise DomainError("witness constants must be nonnegative")


@dataclass
class Realization:
    """Explicit weights and biases of one network draw, layer by layer."""

    weights: list
    biases: list

    @property
    def depth(self) -> int:
        return len(self.weights)


def _layer_sizes(params: NetworkParams, width: int, units: int) -> list[int]:
    return [max(width, units)] * (params.depth - 1) + [units]


def _check_sizes(width, units, samples):
    for name, v in (("width", width), ("units", units), ("samples", samples)):
        if int(v) != v or v < 1:
            raise DomainError(f"{name} must be an integer >= 1, got {v}")


def draw_realization(inputs_dim: int, params: NetworkParams, width: int, units: int,
                     seed: int, sample: int = 0) -> Realization:
    """The explicit weights behind sample ``sample`` of the ``weights`` sampler."""
    _check_sizes(width, units, 1)
    sw, sb = np.sqrt(params.sigma_w_sq), np.sqrt(params.sigma_b_sq)
    Ws, bs = [], []
    fan_in = inputs_dim
    for layer, m in enumerate(_layer_sizes(params, width, units), start=1):
        Ws.append(sw * _rng.stream(seed, sample, layer, _rng.WEIGHTS).standard_normal((m, fan_in)))
        bs.append(sb * _rng.stream(seed, sample, layer, _rng.BIASES).standard_normal(m))
        fan_in = width
    return Realization(Ws, bs)


def forward(real: Realization, inputs, act: Activation) -> list[np.ndarray]:
    """Pre-activations per layer, each ``m_l x k``; inputs is an InputSet or an I x k array."""
    X = inputs.X if isinstance(inputs, InputSet) else np.asarray(inputs, dtype=float)
    out = [real.weights[0] @ X + real.biases[0][:, None]]
    for W, b in zip(real.weights[1:], real.biases[1:]):
        n = W.shape[1]
        out.append(W @ act(out[-1][:n]) / np.sqrt(n) + b[:, None])
    return out


def lipschitz_witness(real: Realization, act: Activation) -> list[LipschitzWitness]:
    """Per-unit constants with |f_i(x) - f_i(y)| <= H_i ||x - y|| for this draw.

    H_i(1) = sum_j |w_ij|,  H_i(l) = L_phi / sqrt(n) sum_{j <= n} |w_ij| H_j(l-1).
    """
    if not act.is_lipschitz:
        raise DomainError(f"activation {act.name} has no declared Lipschitz constant")
    L = act.lipschitz_constant
    H = np.abs(real.weights[0]).sum(axis=1)
    out = [LipschitzWitness(1, H)]
    for layer, W in enumerate(real.weights[1:], start=2):
        n = W.shape[1]
        H = (L / np.sqrt(n)) * (np.abs(W) @ H[:n])
        out.append(LipschitzWitness(layer, H))
    return out


def _one_sample_weights(X, params, act, width, units, seed, sample):
    real = draw_realization(X.shape[0], params, width, units, seed, sample)
    return [f[:units] for f in forward(real, X, act)]


def _one_sample_conditional(X, params, act, width, units, seed, sample):
    sw, sb = np.sqrt(params.sigma_w_sq), np.sqrt(params.sigma_b_sq)
    sizes = _layer_sizes(params, width, units)
    W1 = sw * _rng.stream(seed, sample, 1, _rng.WEIGHTS).standard_normal((sizes[0], X.shape[0]))
    f = W1 @ X + sb * _rng.stream(seed, sample, 1, _rng.BIASES).standard_normal(sizes[0])[:, None]
    outs = [f[:units]]
    for layer, m in enumerate(sizes[1:], start=2):
        R = np.linalg.qr(act(f[:width]) / np.sqrt(width), mode="r")
        z = _rng.stream(seed, sample, layer, _rng.WEIGHTS).standard_normal((m, R.shape[0]))
        b = _rng.stream(seed, sample, layer, _rng.BIASES).standard_normal(m)
        f = sw * (z @ R) + sb * b[:, None]
        outs.append(f[:units])
    return outs


def sample_network(inputs: InputSet, params: NetworkParams, act: Activation, width: int,
                   units: int, samples: int, seed: int, method: str = "conditional",
                   threads: int = 1, memory_budget: float = DEFAULT_MEMORY_BUDGET,
                   first_sample: int = 0) -> list[SampleBatch]:
    """Draw ``samples`` networks and return one :class:`SampleBatch` per layer.

    ``first_sample`` offsets the sample counter, so a run split into pieces
    reproduces a single long run exactly.
    """
    _check_sizes(width, units, samples)
    cost = float(width) * units * samples * inputs.k * params.depth
    if cost > memory_budget:
        raise ResourceError(
            f"n*U*S*k*L = {cost:.3g} exceeds the memory budget of {memory_budget:.3g} elements"
        )
    if method == "weights":
        one = _one_sample_weights
    elif method == "conditional":
        one = _one_sample_conditional
    else:
        raise DomainError(f"unknown sampling method {method!r}; use 'weights' or 'conditional'")
    X = inputs.X
    vals = [np.empty((samples, units, inputs.k)) for _ in range(params.depth)]

    def work(start):
        for s in range(start, min(start + _CHUNK, samples)):
            for layer, f in enumerate(one(X, params, act, width, units, seed, first_sample + s)):
                vals[layer][s] = f

    starts = range(0, samples, _CHUNK)
    if threads > 1 and samples > _CHUNK:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(work, starts))
    else:
        for st in starts:
            work(st)
    meta = {
        "params": {"depth": params.depth, "sigma_w_sq": params.sigma_w_sq, "sigma_b_sq": params.sigma_b_sq},
        "activation": act.to_spec(),
        "method": method,
    }
    return [SampleBatch(v, layer + 1, width, seed, dict(meta)) for layer, v in enumerate(vals)]


def empirical_cov(batch: SampleBatch, unit: int, centered: bool = False) -> CovMatrix:
    """Raw second moment sum_s f_r f_s / S (or the centered, S-1 normalized version)."""
    if batch.S < 2:
        raise DomainError("empirical_cov needs at least two samples")
    if not 0 <= unit < batch.U:
        raise DomainError(f"unit {unit} out of range for U={batch.U}")
    V = batch.values[:, unit, :]
    if centered:
        V = V - V.mean(axis=0)
        m = V.T @ V / (batch.S - 1)
    else:
        m = V.T @ V / batch.S
    m = np.triu(m) + np.triu(m, 1).T
    return CovMatrix(m, batch.layer)


class CrossUnit(NamedTuple):
    max_abs: float
    skipped: list  # (unit_i, unit_j, input) pairs with a zero-variance unit


def cross_unit_corr(batch: SampleBatch) -> CrossUnit:
    """Largest |Pearson correlation| between distinct units at a common input."""
    if batch.U < 2:
        raise DomainError("cross_unit_corr needs at least two units")
    best = 0.0
    skipped = []
    for r in range(batch.k):
        V = batch.values[:, :, r]
        V = V - V.mean(axis=0)
        sd = np.sqrt((V * V).sum(axis=0))
        for i in range(batch.U):
            for j in range(i + 1, batch.U):
                if sd[i] == 0 or sd[j] == 0:
                    skipped.append((i, j, r))
                    continue
                c = abs(float(V[:, i] @ V[:, j]) / (sd[i] * sd[j]))
                best = max(best, min(c, 1.0))
    return CrossUnit(float(best), skipped)
