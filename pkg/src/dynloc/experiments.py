"""Experiments behind the CLI subcommands.

Each experiment turns a resolved :class:`RunConfig` into tables, JSON
documents, figure data and named verdicts.  Randomness enters only through
``(seed, realization index)``, and every reduction runs in index order.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from .config import RunConfig
from .disorder import DisorderSpec, sample_field, stream
from .dynamics import (
    AveragedTrace,
    cesaro,
    disorder_average,
    geometric_T_grid,
    second_moment_trace,
    uniform_time_grid,
)
from .estimators import (
    abel_trend_from_values,
    abel_values,
    decade_windows,
    dynloc_statistic,
    fit_exponents,
    interval_block,
    wegner_pair,
)
from .green import energy_grid_for, gre_identity_residual, resolve, residuum_check
from .lattice import Box, LatticeSpec, indicator
from .msa import (
    CertificateParams,
    MsaParams,
    certificate_report,
    estimate_m1_probability,
    estimate_m2_probability,
    remark23_bound,
    schedule,
    separated_site,
)
from .operator import FilterSpec, apply_filter, assemble, diagonalize
from .parallel import pool_map

GRE_TOL = 1e-10
RESIDUUM_RTOL = 1e-3
FULL_RANGE_RTOL = 1e-2
FULL_RANGE_MARGIN = 1000.0  # in units of eps
WEGNER_POWER = (2.0, 0.2)
WEGNER_SPREAD = 3.0
CEILING_TOL = 0.02
_PSI_STREAM = 0x9E3779B97F4A7C15  # sub-seed for random test vectors


@dataclass
class Verdict:
    name: str
    passed: bool
    detail: str


@dataclass
class Outcome:
    name: str
    tables: dict = field(default_factory=dict)  # file -> (header, rows)
    documents: dict = field(default_factory=dict)  # file -> JSON-able object
    figures: dict = field(default_factory=dict)  # file -> (plot function, data)
    verdicts: list = field(default_factory=list)


# -- shared construction ------------------------------------------------------


def lattice_of(cfg: RunConfig) -> LatticeSpec:
    return LatticeSpec(cfg["lattice"]["dim"], cfg["lattice"]["extent"])


def disorder_of(cfg: RunConfig) -> Optional[DisorderSpec]:
    """``None`` for zero disorder (``half_width = 0``)."""
    d = cfg["disorder"]
    if d["half_width"] == 0:
        return None
    return DisorderSpec(
        kind=d["kind"],
        half_width=d["half_width"],
        window=d["window"],
        seed=cfg.seed,
        samples=d["samples"],
        density_grid=d["density_grid"] or None,
        density_values=d["density_values"] or None,
    )


def _operator(spec: Optional[DisorderSpec], index: int, lattice: LatticeSpec):
    return assemble(lattice, None if spec is None else sample_field(spec, index, lattice))


def _realizations(cfg: RunConfig, wanted: int) -> int:
    spec = disorder_of(cfg)
    if spec is None:
        return 1
    if wanted > spec.samples:
        raise ValueError(f"{wanted} realizations requested but [disorder] samples = {spec.samples}")
    return wanted


def initial_state(cfg: RunConfig, decomp, lattice: LatticeSpec) -> np.ndarray:
    o = cfg["operator"]
    delta = indicator(lattice, (0,) * lattice.dim)
    if o["initial_state"] == "delta":
        return delta
    if o["initial_state"] == "filtered":
        return apply_filter(FilterSpec(o["filter_a"], o["filter_b"], o["filter_delta"]), decomp, delta)
    raise ValueError(f"initial_state must be 'delta' or 'filtered', got {o['initial_state']!r}")


def state_label(cfg: RunConfig) -> str:
    o = cfg["operator"]
    if o["initial_state"] == "delta":
        return "delta_0"
    return f"f(H)delta_0 on [{o['filter_a']:g},{o['filter_b']:g}] margin {o['filter_delta']:g}"


# -- dynamics -----------------------------------------------------------------


def _dynamics_job(job):
    cfg, spec, index = job
    lattice = lattice_of(cfg)
    dyn = cfg["dynamics"]
    decomp = diagonalize(_operator(spec, index, lattice), cap=cfg["operator"]["matrix_cap"])
    psi = initial_state(cfg, decomp, lattice)
    times = uniform_time_grid(dyn["t_max"], dyn["dt"])
    trace = second_moment_trace(
        decomp, psi, times, realization=index, initial_state=state_label(cfg),
        leak_margin=dyn["leak_margin"], leak_threshold=dyn["leak_threshold"],
    )
    T = geometric_T_grid(dyn["t_min"], trace.t[-1], dyn["per_decade"])
    return cesaro(trace, T)


def dynamics_traces(cfg: RunConfig, workers: int):
    spec = disorder_of(cfg)
    R = _realizations(cfg, cfg["dynamics"]["realizations"])
    return pool_map(_dynamics_job, [(cfg, spec, i) for i in range(R)], workers, chunksize=1)


def _fit_windows(cfg: RunConfig, avg: AveragedTrace):
    w = cfg["estimators"]["windows"]
    if w == "auto":
        return decade_windows(max(cfg["dynamics"]["t_min"], float(avg.T.min())), float(avg.T.max()))
    return list(w)


def run_dynamics(cfg: RunConfig, workers: int, cache: dict) -> Outcome:
    traces = cache.get("traces") or dynamics_traces(cfg, workers)
    cache["traces"] = traces
    avg = disorder_average(traces)
    out = Outcome("dynamics")
    stride = max(1, cfg["dynamics"]["m_stride"])
    out.tables["dynamics_m.csv"] = (
        ("realization", "t", "m"),
        [(tr.realization, t, m) for tr in traces for t, m in zip(tr.t[::stride], tr.m[::stride])],
    )
    out.tables["dynamics_cesaro.csv"] = (
        ("realization", "T", "C", "quad_error"),
        [(tr.realization, T, C, e) for tr in traces for T, C, e in zip(tr.T, tr.C, tr.quad_error)],
    )
    out.tables["dynamics_mean.csv"] = (
        ("T", "mean_C", "se_C"), list(zip(avg.T, avg.mean_C, avg.se_C))
    )
    doc = {
        "initial_state": avg.initial_state,
        "realizations": avg.realizations,
        "seed": cfg.seed,
        "max_leak": max(tr.leak for tr in traces),
        "max_quad_error": max(float(tr.quad_error.max()) for tr in traces),
        "mean_sup_C": avg.mean_sup_C,
        "se_sup_C": avg.se_sup_C,
    }
    est = cfg["estimators"]
    if avg.T.max() >= 1e3 * (1 - 1e-9):
        stat = dynloc_statistic(avg, est["stability_threshold"])
        last = decade_windows(float(avg.T.max()) / 10, float(avg.T.max()))[-1]
        fit = fit_exponents(avg, [last], est["bootstrap"], est["bootstrap_seed"])
        slope = float(fit.slopes[-1])
        doc.update(stability_ratio=stat.stability_ratio, last_decade_slope=slope,
                   last_decade_slope_se=float(fit.bootstrap_se[-1]))
        ok = stat.localized and slope <= est["slope_tolerance"]
        out.verdicts.append(Verdict(
            "dynamics.localization", ok,
            f"stability ratio {stat.stability_ratio:.6g} (<= {stat.threshold:g}), "
            f"last-decade slope {slope:.4g} (<= {est['slope_tolerance']:g})",
        ))
    out.documents["dynamics.json"] = doc
    out.figures["dynamics_cesaro.png"] = ("cesaro", {"T": avg.T, "C": avg.mean_C, "se": avg.se_C,
                                                      "label": avg.initial_state})
    return out


def run_exponents(cfg: RunConfig, workers: int, cache: dict) -> Outcome:
    traces = cache.get("traces") or dynamics_traces(cfg, workers)
    cache["traces"] = traces
    avg = disorder_average(traces)
    est = cfg["estimators"]
    windows = _fit_windows(cfg, avg)
    fit = fit_exponents(avg, windows, est["bootstrap"], est["bootstrap_seed"])
    out = Outcome("exponents")
    report = fit.as_dict()
    out.documents["exponents.json"] = report
    ceiling = 2 + 2 * fit.sigma_plus_se + CEILING_TOL
    out.verdicts.append(Verdict(
        "exponents.ballistic_ceiling", fit.sigma_plus <= ceiling,
        f"sigma+ = {fit.sigma_plus:.6g} +- {fit.sigma_plus_se:.2g} (<= {ceiling:.4g})",
    ))
    g = cfg["green"]
    if g["abel_realizations"] > 0:
        spec = disorder_of(cfg)
        lattice = lattice_of(cfg)
        R = _realizations(cfg, g["abel_realizations"])
        ensemble = pool_map(_abel_job, [(cfg, spec, i) for i in range(R)], workers, chunksize=1)
        trend = abel_trend_from_values(
            g["abel_eps"], np.array([e[0] for e in ensemble]), np.array([e[1] for e in ensemble]),
            est["bootstrap"], est["bootstrap_seed"],
        )
        out.tables["abel.csv"] = (
            ("eps", "value", "se", "quad_error"), list(zip(trend.eps, trend.values, trend.stderr, trend.quad_error))
        )
        report["abel"] = {"eps": trend.eps, "values": trend.values, "slope": trend.slope,
                          "slope_se": trend.slope_se, "vanishing": trend.vanishing, "lattice_extent": lattice.extent}
        out.verdicts.append(Verdict(
            "exponents.abel_vanishing", trend.vanishing,
            f"log-log slope {trend.slope:.4g} +- {trend.slope_se:.2g}, strictly decreasing: {trend.strictly_decreasing}",
        ))
    out.figures["exponents.png"] = ("exponents", {"T": avg.T, "C": avg.mean_C, "windows": windows,
                                                  "slopes": fit.slopes})
    return out


def _abel_job(job):
    cfg, spec, index = job
    lattice = lattice_of(cfg)
    decomp = diagonalize(_operator(spec, index, lattice), cap=cfg["operator"]["matrix_cap"])
    return abel_values(decomp, initial_state(cfg, decomp, lattice), cfg["green"]["abel_eps"])


# -- multi-scale --------------------------------------------------------------


def msa_params(cfg: RunConfig) -> MsaParams:
    m = cfg["msa"]
    interval = tuple(m["window"]) if m["window"] else (m["energy"], m["energy"])
    return MsaParams(
        variant=m["variant"], rho_kind=m["rho"], alpha=m["alpha"], p=m["p"], dim=cfg["lattice"]["dim"],
        interval=interval, nu=m["nu"], m=m["m"], beta=m["beta"], n=m["n"], c_n=m["c_n"],
    )


def run_msa(cfg: RunConfig, workers: int, cache: dict) -> Outcome:
    m = cfg["msa"]
    params = msa_params(cfg)
    spec = disorder_of(cfg)
    if spec is None:
        raise ValueError("the regularity probabilities need disorder (half_width > 0)")
    R = _realizations(cfg, m["realizations"])
    out = Outcome("msa")
    per_scale, rows, verdict_rows = [], [], []
    for L in m["scales"]:
        est = estimate_m2_probability(params, schedule(L, m["alpha"], 0), 0, m["energy"], spec, R,
                                      eps_min=m["eps_min"], workers=workers, L=L)
        q = separated_site(L, params.dim)
        for idx, norm, guard, ok in est.records:
            verdict_rows.append((idx, m["energy"], L, q, norm, params.threshold(L), guard, ok))
        rows.append((L, est.radius, est.samples, est.passes, est.fraction, est.ci_low, est.ci_high, est.bound,
                     est.verdict))
        per_scale.append({"L_k": L, "samples": est.samples, "pass_fraction": est.fraction, "ci_low": est.ci_low,
                          "ci_high": est.ci_high, "bound": est.bound, "verdict": est.verdict})
    fails = [1 - s["pass_fraction"] for s in per_scale]
    decreasing = all(b < a for a, b in zip(fails, fails[1:]))
    doc = {
        "variant": params.variant,
        "schedule": {"scales": list(m["scales"]), "alpha": m["alpha"]},
        "rho": params.rho_kind,
        "energy": m["energy"],
        "hypothesis_violations": params.violations(),
        "per_scale": per_scale,
        "failure_rates": fails,
        "failure_strictly_decreasing": decreasing,
    }
    out.verdicts.append(Verdict("msa.failure_trend", decreasing, f"failure rates {['%.4g' % f for f in fails]}"))
    last = per_scale[-1]
    out.verdicts.append(Verdict(
        "msa.largest_scale_bound", last["verdict"],
        f"L={last['L_k']:g}: Clopper-Pearson lower {last['ci_low']:.6g} vs 1-L^-p = {last['bound']:.6g}",
    ))
    if m["window"]:
        a, b = m["window"]
        energies = energy_grid_for((a, b), m["window_eps_min"])
        doc["m1"] = []
        for L in m["scales"]:
            q = (0,) * params.dim
            qp = separated_site(L, params.dim)
            est = estimate_m1_probability(params, schedule(L, m["alpha"], 0), 0, energies, (q, qp), spec, R,
                                          eps_min=m["window_eps_min"], workers=workers)
            doc["m1"].append({"L_k": L, "uniform": asdict_est(est.uniform), "per_energy": asdict_est(est.per_energy),
                              "gap": est.gap, "inclusion_holds": est.inclusion_holds,
                              "energy_spacing": float(energies[1] - energies[0])})
            out.verdicts.append(Verdict(f"msa.m1_inclusion_L{L:g}", est.inclusion_holds,
                                        "uniform-choice event implies per-energy event"))
    out.tables["msa_scales.csv"] = (
        ("L", "radius", "samples", "passes", "pass_fraction", "ci_low", "ci_high", "bound", "verdict"), rows
    )
    out.tables["msa_verdicts.csv"] = (
        ("realization", "E_or_window", "L", "q", "measured_norm", "threshold", "guard_distance", "pass"), verdict_rows
    )
    out.documents["msa.json"] = doc
    out.figures["msa.png"] = ("msa", {"L": np.array(m["scales"]), "failure": np.array(fails),
                                      "ci_low": np.array([s["ci_low"] for s in per_scale]),
                                      "ci_high": np.array([s["ci_high"] for s in per_scale])})
    return out


def asdict_est(est) -> dict:
    return {"samples": est.samples, "pass_fraction": est.fraction, "ci_low": est.ci_low, "ci_high": est.ci_high,
            "bound": est.bound, "verdict": est.verdict}


def certificate_params(cfg: RunConfig) -> CertificateParams:
    m = cfg["msa"]
    return CertificateParams(
        alpha=m["cert_alpha"], m=m["cert_m"], w=m["cert_w"], S=m["cert_S"], N=m["cert_N"], d=m["cert_d"],
        K0=m["cert_K0"], theta=m["cert_theta"], p=m["cert_p"], C_W=m["cert_C_W"],
        interval_length=m["cert_interval"], c_NSd=m["cert_c_NSd"], c_dN=m["cert_c_dN"], c_check=m["cert_c_check"],
    )


def run_certify(cfg: RunConfig, workers: int, cache: dict) -> Outcome:
    m = cfg["msa"]
    params = certificate_params(cfg)
    report = certificate_report(params, m["cert_ell"], m["cert_L0"])
    rb = remark23_bound(m["remark_alpha"], m["remark_d"], m["remark_n"])
    report["remark23"] = {"alpha": m["remark_alpha"], "d": m["remark_d"], "n": m["remark_n"], "bound": rb.value,
                          "hypothesis": rb.hypothesis}
    det, prob = report["deterministic"], report["probabilistic"]
    out = Outcome("certify")
    out.documents["certificate.json"] = report
    out.verdicts += [
        Verdict("certify.parameters", not params.violations, "; ".join(params.violations) or "N > 4, S even, 2 < S < N-1"),
        Verdict("certify.condition", det["condition"],
                f"(S-alpha)m = {det['condition_lhs']:.17g} vs {det['condition_rhs']:.17g}"),
        Verdict("certify.chain_bound", det["passed"],
                f"at L = {det['L']:.6g}: {det['chain_lhs']} <= {det['chain_rhs']}; smallest L {det['smallest_L']}"),
        Verdict("certify.probabilistic", prob["passed"],
                f"L1 = {prob['L1']:.6g}: lower {prob['lower']} vs {prob['target']} (deficit {prob['deficit']}); "
                f"hypothesis window {prob['hypothesis']}"),
        Verdict("certify.remark23", rb.hypothesis, f"bound {rb.value:.17g}, hypothesis n > alpha(d+2): {rb.hypothesis}"),
    ]
    return out


# -- Wegner -------------------------------------------------------------------


def wegner_blocks(block: int, gap: int):
    left = interval_block(-(gap // 2) - block, block)
    right = interval_block(gap - gap // 2, block)
    return left, right


def run_wegner(cfg: RunConfig, workers: int, cache: dict) -> Outcome:
    est = cfg["estimators"]
    if cfg["lattice"]["dim"] != 1:
        raise ValueError("the Wegner pair statistic is set up for d = 1 blocks")
    spec = disorder_of(cfg)
    if spec is None:
        raise ValueError("the Wegner pair statistic needs disorder (half_width > 0)")
    b1, b2 = wegner_blocks(est["wegner_block"], est["wegner_gap"])
    half = max(abs(b1[0][0]), abs(b2[-1][0]))
    lattice = LatticeSpec(1, 2 * half + 1)
    R = _realizations(cfg, est["wegner_realizations"])
    res = wegner_pair(spec, lattice, est["wegner_energy"], est["wegner_etas"], (b1, b2), R,
                      est["wegner_min_separation"], workers, est["bootstrap"], est["bootstrap_seed"])
    out = Outcome("wegner")
    out.tables["wegner.csv"] = (("eta", "estimate", "se", "bound_ratio"),
                                list(zip(res.etas, res.estimate, res.stderr, res.bound_ratio)))
    out.documents["wegner.json"] = {
        "E": res.E, "etas": res.etas, "sizes": list(res.sizes), "separation": res.separation, "samples": res.samples,
        "estimate": res.estimate, "stderr": res.stderr, "mean_n1": res.mean_n1, "mean_n2": res.mean_n2,
        "product_of_means": res.mean_n1 * res.mean_n2, "slope": res.slope, "slope_se": res.slope_se,
        "C_W_fitted": res.C_W, "ratio_spread": res.ratio_spread,
    }
    target, tol = WEGNER_POWER
    out.verdicts.append(Verdict("wegner.eta_power", abs(res.slope - target) <= tol,
                                f"fitted power {res.slope:.4g} +- {res.slope_se:.2g} (target {target:g} +- {tol:g})"))
    out.verdicts.append(Verdict("wegner.bounded_ratio", res.ratio_spread <= WEGNER_SPREAD,
                                f"max/min bound ratio {res.ratio_spread:.4g} (<= {WEGNER_SPREAD:g})"))
    out.figures["wegner.png"] = ("wegner", {"eta": res.etas, "estimate": res.estimate, "se": res.stderr,
                                            "sizes": res.sizes})
    return out


# -- Green's function checks --------------------------------------------------


def random_state(seed: int, index: int, n: int) -> np.ndarray:
    rng = stream(seed ^ _PSI_STREAM, index)
    v = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    return v / np.linalg.norm(v)


def _gre_job(job):
    cfg, spec, index = job
    g = cfg["green"]
    lattice = lattice_of(cfg)
    op = _operator(spec, index, lattice)
    pad = (0,) * (lattice.dim - 1)
    box = Box((g["box_center"],) + pad, g["box_radius"])
    q = (g["source"],) + pad
    res = gre_identity_residual(op, box, q, g["energy"], g["eps"])
    col_p = resolve(op, q, g["energy"], g["eps"])
    col_m = resolve(op, q, g["energy"], -g["eps"])
    conj = float(np.max(np.abs(col_p - np.conj(col_m))))
    norm_ok = bool(np.linalg.norm(col_p) <= 1 / abs(g["eps"]) * (1 + 1e-12))
    return res, conj, norm_ok


def _residuum_job(job):
    cfg, spec, index = job
    g = cfg["green"]
    lattice = lattice_of(cfg)
    decomp = diagonalize(_operator(spec, index, lattice), cap=cfg["operator"]["matrix_cap"])
    psi = random_state(cfg.seed, index, lattice.n_sites)
    rng = stream(cfg.seed ^ _PSI_STREAM ^ 1, index)
    lo, hi = float(decomp.values.min()), float(decomp.values.max())
    rows = []
    for eps in g["residuum_eps"]:
        a, b = np.sort(rng.uniform(lo - 1, hi + 1, size=2))
        sub = residuum_check(decomp, psi, (a, b), eps, rtol=RESIDUUM_RTOL)
        full = residuum_check(decomp, psi, (lo - FULL_RANGE_MARGIN * eps, hi + FULL_RANGE_MARGIN * eps), eps)
        rows.append((index, eps, a, b, sub.value, sub.error, sub.bound, sub.passed, full.value, full.error))
    return rows


def run_green(cfg: RunConfig, workers: int, cache: dict) -> Outcome:
    g = cfg["green"]
    spec = disorder_of(cfg)
    out = Outcome("green-checks")
    n = _realizations(cfg, g["instances"])
    gre = pool_map(_gre_job, [(cfg, spec, i) for i in range(n)], workers)
    out.tables["gre.csv"] = (("realization", "residual", "conjugation_defect", "norm_bound_ok"),
                             [(i, r, c, ok) for i, (r, c, ok) in enumerate(gre)])
    worst = max(r for r, _, _ in gre)
    out.verdicts.append(Verdict("green.gre_identity", worst <= GRE_TOL, f"max residual {worst:.3g} (<= {GRE_TOL:g})"))
    conj = max(c for _, c, _ in gre)
    out.verdicts.append(Verdict("green.conjugation", conj <= 1e-12, f"max |G(z) - conj G(conj z)| {conj:.3g}"))
    out.verdicts.append(Verdict("green.resolvent_norm", all(ok for *_, ok in gre), "||R(E+i eps) delta_q|| <= 1/|eps|"))
    n = _realizations(cfg, g["residuum_instances"])
    rows = [r for rows in pool_map(_residuum_job, [(cfg, spec, i) for i in range(n)], workers) for r in rows]
    out.tables["residuum.csv"] = (
        ("realization", "eps", "a", "b", "integral", "quad_error", "bound", "pass", "full_integral", "full_quad_error"),
        rows,
    )
    sub_ok = all(r[7] for r in rows)
    full_dev = max(abs(r[8] * r[1] / math.pi - 1) for r in rows)
    out.verdicts.append(Verdict("green.residuum", sub_ok, "sub-interval integral <= pi/eps (1 + 1e-3) on every sample"))
    out.verdicts.append(Verdict("green.residuum_full_range", full_dev <= FULL_RANGE_RTOL,
                                f"max relative deviation from pi/eps {full_dev:.3g} (<= {FULL_RANGE_RTOL:g})"))
    out.documents["green.json"] = {
        "gre_max_residual": worst, "conjugation_max_defect": conj, "residuum_full_max_deviation": full_dev,
        "energy": g["energy"], "eps": g["eps"], "box_center": g["box_center"], "box_radius": g["box_radius"],
        "source": g["source"],
    }
    return out


EXPERIMENTS: dict[str, Callable[[RunConfig, int, dict], Outcome]] = {
    "dynamics": run_dynamics,
    "exponents": run_exponents,
    "msa": run_msa,
    "wegner": run_wegner,
    "green-checks": run_green,
    "certify": run_certify,
}
