"""Experiment configuration: YAML in, validated dataclass out.

Every problem in a config is collected before anything is raised, so a user
sees all of them at once.  Relative file paths resolve against the config
file's directory.
"""

from __future__ import annotations

import difflib
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from .activation import Activation, Envelope, Kind
from .errors import ConfigError, NNGPError
from .kernel import InputSet, NetworkParams, QuadratureSpec

DEFAULT_CHECKS = {
    "marginal_ks": True,
    "moment_bound": True,
    "ecf_final": True,
    "cross_unit": True,
    "cov_trend": True,
    "holder_window": True,
    "cov_error_strict": False,
    "rate_window": False,
}

TOP_KEYS = {
    "seed", "inputs", "inputs_csv", "network", "activation", "widths", "samples", "units",
    "thetas", "pair", "segment", "quadrature", "jitter", "sampler", "max_k", "memory_budget",
    "output_dir", "checks",
}
SECTION_KEYS = {
    "network": {"depth", "sigma_w_sq", "sigma_b_sq"},
    "activation": {"kind", "table", "lipschitz", "envelope"},
    "segment": {"x0", "x1", "levels", "paths"},
    "quadrature": {"nodes_per_axis", "degenerate_variance_floor"},
    "checks": set(DEFAULT_CHECKS),
}


@dataclass(frozen=True)
class SegmentSpec:
    x0: tuple
    x1: tuple
    levels: int = 10
    paths: int = 100


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int
    inputs: Optional[tuple] = None  # k points, each a tuple of I coordinates
    inputs_csv: Optional[str] = None
    depth: int = 3
    sigma_w_sq: float = 2.0
    sigma_b_sq: float = 0.1
    activation: dict = field(default_factory=lambda: {"kind": "relu"})
    widths: tuple = (8, 64, 512, 4096)
    samples: int = 10000
    units: int = 1
    thetas: tuple = (1, 2)
    pair: tuple = (0, 1)
    segment: Optional[SegmentSpec] = None
    nodes_per_axis: int = 64
    degenerate_variance_floor: float = 1e-12
    jitter: float = 1e-10
    sampler: str = "conditional"
    max_k: int = 2049
    memory_budget: float = 1e10
    output_dir: str = "out"
    checks: dict = field(default_factory=lambda: dict(DEFAULT_CHECKS))
    base_dir: str = field(default=".", compare=False)

    @property
    def params(self) -> NetworkParams:
        return NetworkParams(self.depth, self.sigma_w_sq, self.sigma_b_sq)

    @property
    def quadrature(self) -> QuadratureSpec:
        return QuadratureSpec(self.nodes_per_axis, self.degenerate_variance_floor)

    def resolve(self, p: str) -> Path:
        q = Path(p)
        return q if q.is_absolute() else Path(self.base_dir) / q

    def input_set(self) -> InputSet:
        if self.inputs is not None:
            return InputSet.from_points(np.array(self.inputs, dtype=float))
        return InputSet.from_points(read_points_csv(self.resolve(self.inputs_csv)))

    def make_activation(self) -> Activation:
        spec = self.activation
        kind = Kind(spec["kind"])
        if kind is not Kind.CUSTOM_TABLE:
            return Activation.builtin(kind)
        env = spec.get("envelope")
        return Activation.from_csv(
            self.resolve(spec["table"]),
            lipschitz_constant=spec.get("lipschitz"),
            envelope=None if env is None else Envelope(*env),
        )

    def echo(self) -> dict:
        """Plain-data view used in reports (no machine-specific paths)."""
        d = asdict(self)
        d.pop("base_dir")
        return d


class _Loader(yaml.SafeLoader):
    """SafeLoader that also reads exponent floats without a dot (``1e-10``)."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"""^(?:[-+]?(?:[0-9][0-9_]*)\.[0-9_]*(?:[eE][-+]?[0-9]+)?
    |[-+]?(?:[0-9][0-9_]*)(?:[eE][-+]?[0-9]+)
    |\.[0-9_]+(?:[eE][-+][0-9]+)?
    |[-+]?\.(?:inf|Inf|INF)
    |\.(?:nan|NaN|NAN))$""", re.X),
    list("-+0123456789."),
)


def read_points_csv(path) -> np.ndarray:
    """One input per row; a non-numeric first row is taken as a header."""
    path = Path(path)
    rows = [r.strip() for r in path.read_text(encoding="utf-8").splitlines() if r.strip()]
    try:
        [float(c) for c in rows[0].split(",")]
    except ValueError:
        rows = rows[1:]
    return np.array([[float(c) for c in r.split(",")] for r in rows], dtype=float)


def _suggest(key, valid):
    close = difflib.get_close_matches(key, sorted(valid), n=1)
    return f"unknown key '{key}'" + (f"; did you mean '{close[0]}'?" if close else "")


def _is_int(v):
    return isinstance(v, (int, np.integer)) and not isinstance(v, bool)


def _is_num(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def parse_config(text: str, base_dir=".") -> ExperimentConfig:
    """Parse and validate; raises :class:`ConfigError` listing every problem."""
    try:
        raw = yaml.load(text, Loader=_Loader)
    except yaml.YAMLError as exc:
        raise ConfigError([f"YAML syntax error: {exc}"]) from None
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(["config must be a mapping of keys to values"])
    errs: list[str] = []
    base = Path(base_dir)

    for key in raw:
        if key not in TOP_KEYS:
            errs.append(_suggest(str(key), TOP_KEYS))
    for sec, valid in SECTION_KEYS.items():
        body = raw.get(sec)
        if body is None:
            continue
        if not isinstance(body, dict):
            errs.append(f"'{sec}' must be a mapping")
            continue
        for key in body:
            if key not in valid:
                errs.append(f"{sec}: " + _suggest(str(key), valid))

    kw: dict = {"base_dir": str(base)}

    seed = raw.get("seed")
    if seed is None:
        errs.append("missing required key 'seed' (there is no clock-based default)")
    elif not _is_int(seed) or seed < 0 or seed >= 2**64:
        errs.append(f"seed must be an integer in [0, 2^64), got {seed!r}")
    else:
        kw["seed"] = int(seed)

    # inputs
    has_inline, has_csv = "inputs" in raw, "inputs_csv" in raw
    if has_inline == has_csv:
        errs.append("give exactly one of 'inputs' (list of points) or 'inputs_csv' (path)")
    elif has_inline:
        try:
            pts = np.array(raw["inputs"], dtype=float)
            if pts.ndim != 2:
                raise ValueError("inputs must be a list of points of equal dimension")
            InputSet.from_points(pts)
            kw["inputs"] = tuple(tuple(float(v) for v in p) for p in pts)
        except (ValueError, TypeError, NNGPError) as exc:
            errs.append(f"inputs: {exc}")
    else:
        p = Path(str(raw["inputs_csv"]))
        full = p if p.is_absolute() else base / p
        if not full.is_file():
            errs.append(f"inputs_csv: file not found: {full}")
        else:
            try:
                InputSet.from_points(read_points_csv(full))
                kw["inputs_csv"] = str(raw["inputs_csv"])
            except (ValueError, NNGPError) as exc:
                errs.append(f"inputs_csv {full}: {exc}")

    net = raw.get("network") or {}
    if isinstance(net, dict):
        for key, default in (("depth", 3), ("sigma_w_sq", 2.0), ("sigma_b_sq", 0.1)):
            v = net.get(key, default)
            ok = _is_int(v) if key == "depth" else _is_num(v)
            if not ok:
                errs.append(f"network.{key} must be a number, got {v!r}")
            else:
                kw[key] = int(v) if key == "depth" else float(v)
        if all(k in kw for k in ("depth", "sigma_w_sq", "sigma_b_sq")):
            try:
                NetworkParams(kw["depth"], kw["sigma_w_sq"], kw["sigma_b_sq"])
            except NNGPError as exc:
                errs.append(f"network: {exc}")

    act = raw.get("activation") or {"kind": "relu"}
    if isinstance(act, dict):
        kind = act.get("kind")
        if kind not in {k.value for k in Kind}:
            errs.append(f"activation.kind must be one of {[k.value for k in Kind]}, got {kind!r}")
        elif kind == Kind.CUSTOM_TABLE.value:
            spec = {"kind": kind}
            if "table" not in act:
                errs.append("activation.table (CSV path) is required for custom-table")
            else:
                p = Path(str(act["table"]))
                full = p if p.is_absolute() else base / p
                spec["table"] = str(act["table"])
                if act.get("lipschitz") is not None:
                    spec["lipschitz"] = float(act["lipschitz"])
                if act.get("envelope") is not None:
                    spec["envelope"] = tuple(float(v) for v in act["envelope"])
                if not full.is_file():
                    errs.append(f"activation.table: file not found: {full}")
                else:
                    try:
                        Activation.from_csv(full, spec.get("lipschitz"),
                                            Envelope(*spec["envelope"]) if "envelope" in spec else None)
                    except (NNGPError, TypeError) as exc:
                        errs.append(f"activation.table {full}: {exc}")
            kw["activation"] = spec
        else:
            extra = set(act) - {"kind"}
            if extra:
                errs.append(f"activation: keys {sorted(extra)} only apply to custom-table")
            kw["activation"] = {"kind": kind}

    widths = raw.get("widths", [8, 64, 512, 4096])
    if not isinstance(widths, list) or not widths or not all(_is_int(w) and w >= 1 for w in widths):
        errs.append(f"widths must be a nonempty list of positive integers, got {widths!r}")
    elif any(b <= a for a, b in zip(widths, widths[1:])):
        errs.append("widths must be strictly increasing")
    else:
        kw["widths"] = tuple(int(w) for w in widths)

    for key, lo in (("samples", 2), ("units", 1), ("max_k", 2)):
        if key not in raw:
            continue
        v = raw[key]
        if not _is_int(v) or v < lo:
            errs.append(f"{key} must be an integer >= {lo}, got {v!r}")
        else:
            kw[key] = int(v)

    thetas = raw.get("thetas", [1, 2])
    if not isinstance(thetas, list) or not all(_is_int(t) and 1 <= t <= 4 for t in thetas):
        errs.append(f"thetas must be a list of integers in 1..4, got {thetas!r}")
    else:
        kw["thetas"] = tuple(int(t) for t in thetas)

    pair = raw.get("pair", [0, 1])
    if not (isinstance(pair, list) and len(pair) == 2 and all(_is_int(p) and p >= 0 for p in pair)
            and pair[0] != pair[1]):
        errs.append(f"pair must be two distinct input indices, got {pair!r}")
    else:
        kw["pair"] = (int(pair[0]), int(pair[1]))

    seg = raw.get("segment")
    if isinstance(seg, dict):
        try:
            x0 = tuple(float(v) for v in seg["x0"])
            x1 = tuple(float(v) for v in seg["x1"])
            levels = seg.get("levels", 10)
            paths = seg.get("paths", 100)
            if len(x0) != len(x1) or x0 == x1:
                errs.append("segment: x0 and x1 must be distinct points of equal dimension")
            elif not (_is_int(levels) and levels >= 4):
                errs.append(f"segment.levels must be an integer >= 4, got {levels!r}")
            elif not (_is_int(paths) and paths >= 1):
                errs.append(f"segment.paths must be a positive integer, got {paths!r}")
            else:
                kw["segment"] = SegmentSpec(x0, x1, int(levels), int(paths))
        except (KeyError, TypeError, ValueError) as exc:
            errs.append(f"segment needs numeric x0 and x1 lists ({exc})")

    quad = raw.get("quadrature") or {}
    if isinstance(quad, dict):
        n = quad.get("nodes_per_axis", 64)
        fl = quad.get("degenerate_variance_floor", 1e-12)
        if not (_is_int(n) and n >= 2):
            errs.append(f"quadrature.nodes_per_axis must be an integer >= 2, got {n!r}")
        else:
            kw["nodes_per_axis"] = int(n)
        if not (_is_num(fl) and fl >= 0):
            errs.append(f"quadrature.degenerate_variance_floor must be >= 0, got {fl!r}")
        else:
            kw["degenerate_variance_floor"] = float(fl)

    for key in ("jitter", "memory_budget"):
        if key in raw:
            v = raw[key]
            if not (_is_num(v) and v >= 0):
                errs.append(f"{key} must be a nonnegative number, got {v!r}")
            else:
                kw[key] = float(v)

    if "sampler" in raw:
        if raw["sampler"] not in ("conditional", "weights"):
            errs.append(f"sampler must be 'conditional' or 'weights', got {raw['sampler']!r}")
        else:
            kw["sampler"] = raw["sampler"]

    if "output_dir" in raw:
        kw["output_dir"] = str(raw["output_dir"])

    checks = dict(DEFAULT_CHECKS)
    if isinstance(raw.get("checks"), dict):
        for key, v in raw["checks"].items():
            if key in DEFAULT_CHECKS:
                if not isinstance(v, bool):
                    errs.append(f"checks.{key} must be true or false")
                else:
                    checks[key] = v
    kw["checks"] = checks

    if errs:
        raise ConfigError(errs)
    cfg = ExperimentConfig(**kw)
    k = cfg.input_set().k
    if max(cfg.pair) >= k:
        raise ConfigError([f"pair {list(cfg.pair)} refers to inputs beyond k={k}"])
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError([f"cannot read config {path}: {exc}"]) from None
    return parse_config(text, base_dir=path.parent)


def emit_config(cfg: ExperimentConfig) -> str:
    """YAML text that parses back to an equal config."""
    d: dict = {"seed": cfg.seed}
    if cfg.inputs is not None:
        d["inputs"] = [list(p) for p in cfg.inputs]
    else:
        d["inputs_csv"] = cfg.inputs_csv
    d["network"] = {"depth": cfg.depth, "sigma_w_sq": cfg.sigma_w_sq, "sigma_b_sq": cfg.sigma_b_sq}
    act = dict(cfg.activation)
    if "envelope" in act:
        act["envelope"] = list(act["envelope"])
    d["activation"] = act
    d["widths"] = list(cfg.widths)
    d["samples"] = cfg.samples
    d["units"] = cfg.units
    d["thetas"] = list(cfg.thetas)
    d["pair"] = list(cfg.pair)
    if cfg.segment is not None:
        s = cfg.segment
        d["segment"] = {"x0": list(s.x0), "x1": list(s.x1), "levels": s.levels, "paths": s.paths}
    d["quadrature"] = {"nodes_per_axis": cfg.nodes_per_axis,
                       "degenerate_variance_floor": cfg.degenerate_variance_floor}
    d["jitter"] = cfg.jitter
    d["sampler"] = cfg.sampler
    d["max_k"] = cfg.max_k
    d["memory_budget"] = cfg.memory_budget
    d["output_dir"] = cfg.output_dir
    d["checks"] = dict(cfg.checks)
    return yaml.safe_dump(d, sort_keys=False)
