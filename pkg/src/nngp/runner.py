"""Orchestration: kernel, width ladder, diagnostics, Holder run, artifacts.

Every numeric byte written depends only on (config, seed); thread counts
change wall-clock time and nothing else.  No timings are ever recorded.
"""

from __future__ import annotations

import csv
import datetime
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import diagnostics as dg
from .config import ExperimentConfig
from .errors import NNGPError
from .gplimit import holder_exponent_estimate, sample_segment_paths, segment_kernel
from .kernel import QuadratureSpec, holder_moment_bound, kernel_at_depth, write_kernel_csv
from .netsim import cross_unit_corr, empirical_cov, sample_network

ECF_FINAL_MAX = 0.05
CROSS_UNIT_MAX = 0.05
HOLDER_WINDOW = (0.7, 1.05)
HOLDER_SE_MAX = 0.05
RATE_WINDOW = (-0.7, -0.3)


@dataclass
class RunResult:
    report: dg.ConvergenceReport
    kernels: list = field(default_factory=list)
    holder: Optional[dict] = None

    @property
    def exit_code(self) -> int:
        if self.report.error is not None:
            return 2
        return 0 if self.report.passed else 1


def _pooled_cov(batch, centered):
    covs = [empirical_cov(batch, u, centered).entries for u in range(batch.U)]
    return dg.CovMatrix(np.mean(covs, axis=0), batch.layer)


def cov_noise(target: dg.CovMatrix, samples: int, units: int = 1) -> float:
    """Standard deviation scale of cov_frobenius_error under Gaussian sampling.

    For the uncentered estimator, Var(entry rs) = (S_rr S_ss + S_rs^2) / S.
    """
    m = target.entries
    d = np.diag(m)
    var = (np.outer(d, d) + m * m) / (samples * units)
    return float(math.sqrt(var.sum()) / np.linalg.norm(m))


def _width_record(cfg, n, batches, kernels, act, inputs):
    L = cfg.depth
    last, first = batches[-1], batches[0]
    target = kernels[-1]
    err = dg.cov_frobenius_error(_pooled_cov(last, False), target)
    err_c = dg.cov_frobenius_error(_pooled_cov(last, True), target)
    ecf = dg.ecf_distance(last, target)
    ks = dg.marginal_ks(first, kernels[0]) if first.S >= dg.MIN_KS_SAMPLES else []
    moments = []
    if act.is_lipschitz:
        a, b = cfg.pair
        dist = float(np.linalg.norm(inputs.X[:, a] - inputs.X[:, b]))
        for theta in cfg.thetas:
            H = holder_moment_bound(theta, L, cfg.params, act.lipschitz_constant)
            moments.append(dg.moment_bound_check(last.values[:, 0, a], last.values[:, 0, b], theta, H,
                                                 dist, seed=cfg.seed))
    cu, skipped = (None, 0)
    if last.U >= 2:
        res = cross_unit_corr(last)
        cu, skipped = res.max_abs, len(res.skipped)
    return dg.WidthRecord(n, err, err_c, ecf, ks, moments, cu, skipped)


def _checks(cfg, report, noise, holder):
    on = cfg.checks
    W = report.widths
    out = {}
    if on["marginal_ks"] and any(w.ks for w in W):
        fails = [w.n for w in W if w.ks and not dg.bonferroni_pass(w.ks)]
        out["marginal_ks"] = {"passed": not fails, "family_level": dg.FAMILY_LEVEL, "failing_widths": fails}
    if on["moment_bound"] and any(w.moments for w in W):
        fails = [[w.n, m.theta] for w in W for m in w.moments if not m.passed]
        out["moment_bound"] = {"passed": not fails, "failing": fails}
    if on["ecf_final"] and W:
        v = W[-1].ecf_distance
        out["ecf_final"] = {"passed": v < ECF_FINAL_MAX, "value": v, "threshold": ECF_FINAL_MAX}
    if on["cross_unit"] and W and W[-1].cross_unit_corr is not None:
        v = W[-1].cross_unit_corr
        out["cross_unit"] = {"passed": v < CROSS_UNIT_MAX, "value": v, "threshold": CROSS_UNIT_MAX}
    if on["cov_trend"] and len(W) >= 2:
        ecf_noise = 1.0 / math.sqrt(cfg.samples)
        bad = [w2.n for w1, w2 in zip(W, W[1:])
               if w2.cov_frobenius_error > w1.cov_frobenius_error + 2 * noise
               or w2.ecf_distance > w1.ecf_distance + 2 * ecf_noise]
        out["cov_trend"] = {"passed": not bad, "noise": noise, "ecf_noise": ecf_noise, "violations_at": bad}
    if on["cov_error_strict"] and len(W) >= 2:
        errs = [w.cov_frobenius_error for w in W]
        out["cov_error_strict"] = {"passed": all(b < a for a, b in zip(errs, errs[1:])), "values": errs}
    if on["rate_window"] and report.rate is not None:
        s = report.rate.slope
        out["rate_window"] = {"passed": RATE_WINDOW[0] <= s <= RATE_WINDOW[1], "slope": s,
                              "window": list(RATE_WINDOW)}
    if on["holder_window"] and holder is not None:
        g, se = holder["mean_gamma"], holder["mean_se"]
        out["holder_window"] = {"passed": HOLDER_WINDOW[0] < g < HOLDER_WINDOW[1] and se < HOLDER_SE_MAX,
                                "mean_gamma": g, "mean_se": se, "window": list(HOLDER_WINDOW),
                                "se_max": HOLDER_SE_MAX}
    return out


def run_holder(cfg: ExperimentConfig, act, threads: int = 1) -> dict:
    seg = cfg.segment
    K = segment_kernel(seg.x0, seg.x1, seg.levels, act, cfg.params, cfg.quadrature, cfg.max_k, threads)
    paths = sample_segment_paths(seg.x0, seg.x1, seg.levels, K, seg.paths, cfg.seed, cfg.jitter)
    ests = [holder_exponent_estimate(p) for p in paths]
    gammas = np.array([e.gamma for e in ests])
    return {
        "levels": seg.levels,
        "paths": seg.paths,
        "mean_gamma": float(gammas.mean()),
        "sd_gamma": float(gammas.std(ddof=1)) if gammas.size > 1 else 0.0,
        "mean_se": float(np.mean([e.se for e in ests])),
        "excluded_levels": sorted({j for e in ests for j in e.excluded}),
        "_estimates": ests,
        "_paths": paths,
    }


def run_experiment(cfg: ExperimentConfig, threads: int = 1, timestamp: bool = True,
                   with_holder: bool = True) -> RunResult:
    report = dg.ConvergenceReport(cfg.seed, cfg.echo())
    if timestamp:
        report.timestamp = datetime.datetime.now(datetime.timezone.utc).isoformat()
    result = RunResult(report)
    stage = "setup"
    try:
        inputs = cfg.input_set()
        act = cfg.make_activation()
        stage = "kernel"
        kernels = kernel_at_depth(inputs, act, cfg.params, cfg.quadrature, threads)
        result.kernels = kernels
        fine = kernel_at_depth(inputs, act, cfg.params,
                               QuadratureSpec(2 * cfg.nodes_per_axis, cfg.degenerate_variance_floor), threads)
        report.extra["kernel"] = {
            "layers": [k.entries.tolist() for k in kernels],
            "quadrature_node_delta": float(max(np.max(np.abs(a.entries - b.entries))
                                               for a, b in zip(kernels, fine))),
            "nodes_per_axis": [cfg.nodes_per_axis, 2 * cfg.nodes_per_axis],
        }
        if not act.is_lipschitz:
            report.extra["notes"] = ["activation has no Lipschitz constant; moment bounds skipped"]
        for n in cfg.widths:
            stage = f"sample n={n}"
            batches = sample_network(inputs, cfg.params, act, n, cfg.units, cfg.samples, cfg.seed,
                                     method=cfg.sampler, threads=threads, memory_budget=cfg.memory_budget)
            stage = f"diagnostics n={n}"
            report.widths.append(_width_record(cfg, n, batches, kernels, act, inputs))
        stage = "rate"
        if len(report.widths) >= 3:
            report.rate = dg.rate_fit([(w.n, w.cov_frobenius_error) for w in report.widths])
        noise = cov_noise(kernels[-1], cfg.samples, cfg.units)
        report.extra["cov_noise"] = noise
        if with_holder and cfg.segment is not None:
            stage = "holder"
            result.holder = run_holder(cfg, act, threads)
            report.extra["holder"] = {k: v for k, v in result.holder.items() if not k.startswith("_")}
        report.validate()
        report.checks = _checks(cfg, report, noise, result.holder)
    except NNGPError as exc:
        report.partial = True
        report.error = {"stage": stage, "type": type(exc).__name__, "message": str(exc)}
        report.checks = {}
    return result


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def emit_plotdata(result: RunResult, out_dir) -> list[Path]:
    """rate.csv, marginals.csv and (if a segment ran) holder.csv."""
    out = Path(out_dir)
    rep = result.report
    written = []
    p = out / "rate.csv"
    with p.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n", "cov_frobenius_error", "cov_frobenius_error_centered", "ecf_distance"])
        for r in rep.widths:
            w.writerow([r.n, repr(r.cov_frobenius_error), repr(r.cov_frobenius_error_centered),
                        repr(r.ecf_distance)])
    written.append(p)
    p = out / "marginals.csv"
    with p.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n", "input", "unit", "ks_D", "ks_p"])
        for r in rep.widths:
            for m in r.ks:
                w.writerow([r.n, m.input, m.unit, repr(m.D), repr(m.p)])
    written.append(p)
    if result.holder is not None:
        p = out / "holder.csv"
        with p.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["path", "scale", "max_increment"])
            for i, e in enumerate(result.holder["_estimates"]):
                for h, m in zip(e.scales, e.max_increments):
                    w.writerow([i, repr(float(h)), repr(float(m))])
        written.append(p)
    return written


def write_artifacts(result: RunResult, out_dir) -> list[Path]:
    """Report JSON, widths CSV, kernels, plot data and a hashed manifest."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from None
    rep = result.report
    files = []
    p = out / "report.json"
    p.write_text(rep.to_json(), encoding="utf-8")
    files.append(p)
    p = out / "widths.csv"
    rep.write_widths_csv(p)
    files.append(p)
    for cov in result.kernels:
        files.append(write_kernel_csv(cov, out / f"kernel_layer{cov.layer}.csv"))
    files += emit_plotdata(result, out)
    manifest = {
        "schema": dg.SCHEMA,
        "partial": rep.partial,
        "artifacts": {f.name: _sha256(f) for f in files},
        "absent": {} if result.holder is not None else {"holder.csv": "no segment configured"},
    }
    p = out / "manifest.json"
    p.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return files + [p]
