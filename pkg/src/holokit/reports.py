"""Experiment configuration, dispatch and machine-readable reports.

Configs are TOML files with [domain], [map], [run] and optional [tolerances]
tables; reports are JSON with the versioned schema tag "holokit-report-v1".
Identical configs reproduce identical reports except for the `meta` block
(timestamp and wall-clock), and every report carries the normalization
banner so numbers are never misread across metric conventions.
"""

from __future__ import annotations

import json
import sys
import time
from dataclasses import asdict, dataclass, is_dataclass
from pathlib import Path
from typing import Optional

import numpy as np

try:
    import tomllib  # py311+
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from . import backward_models as bwd
from . import dynamics as dyn
from . import domains as dom
from . import forward_models as fwd
from . import localization as loc
from .ball import NORMALIZATION_BANNER, ball_distance, geodesic, slimness_delta, filippo_check, region_A_vs_koranyi
from .errors import (
    HolokitError,
    InvariantViolationError,
    NonConvergentLimitError,
    PreconditionError,
    SchemaError,
)
from .numerics import SeededSampler

SCHEMA_TAG = "holokit-report-v1"
EXIT_OK = 0
EXIT_SCHEMA = 2
EXIT_NONCONVERGENT = 3
EXIT_INVARIANT = 4
EXIT_PRECONDITION = 5

VERBS = ("kobayashi", "squeeze", "classify", "dilation", "divergence-rate",
         "julia", "model-forward", "backward-orbit", "pre-model", "gromov",
         "localize", "compare-distance")


# ---------------------------------------------------------------------------
# config parsing
# ---------------------------------------------------------------------------

def _complex_of(v, where: str):
    if isinstance(v, (int, float)):
        return complex(v)
    if isinstance(v, str):
        try:
            return complex(v.replace(" ", "").replace("i", "j"))
        except ValueError as exc:
            raise SchemaError(f"cannot parse complex number {v!r}", field=where) from exc
    if isinstance(v, (list, tuple)) and len(v) == 2:
        return complex(v[0], v[1])
    raise SchemaError(f"cannot parse complex number {v!r}", field=where)


def _point_of(v, where: str) -> np.ndarray:
    if not isinstance(v, (list, tuple)):
        raise SchemaError("points must be arrays", field=where)
    return np.array([_complex_of(x, where) for x in v], dtype=complex)


@dataclass
class ExperimentConfig:
    domain: dict
    map: dict
    run: dict
    tolerances: dict
    seed: int
    output: Optional[str]
    raw: dict

    @staticmethod
    def from_file(path) -> "ExperimentConfig":
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
        return ExperimentConfig.from_dict(raw)

    @staticmethod
    def from_dict(raw: dict) -> "ExperimentConfig":
        run = raw.get("run")
        if not isinstance(run, dict) or "verb" not in run:
            raise SchemaError("missing [run] table with a 'verb' key", field="run.verb")
        if run["verb"] not in VERBS:
            raise SchemaError(f"unknown verb {run['verb']!r}; expected one of {VERBS}",
                              field="run.verb")
        return ExperimentConfig(domain=raw.get("domain", {}),
                                map=raw.get("map", {}),
                                run=run,
                                tolerances=raw.get("tolerances", {}),
                                seed=int(raw.get("seed", run.get("seed", 7))),
                                output=run.get("output"),
                                raw=raw)


def build_domain(spec: dict) -> dom.DomainSpec:
    kind = spec.get("kind")
    if kind == "ball":
        return dom.ball_domain(int(spec.get("q", 1)))
    if kind == "siegel":
        return dom.siegel_domain(int(spec.get("q", 1)))
    if kind == "egg":
        return dom.egg_domain()
    if kind == "ellipsoid":
        return dom.ellipsoid_domain(spec.get("coefficients", [1.0]))
    if kind == "custom":
        terms = {}
        for row in spec.get("terms", []):
            terms[(tuple(row["z"]), tuple(row["zbar"]))] = _complex_of(row["coeff"], "domain.terms")
        return dom.custom_domain(int(spec["q"]), terms,
                                 circumradius=float(spec["circumradius"]),
                                 balanced=bool(spec.get("balanced", False)))
    raise SchemaError(f"unknown domain kind {kind!r}", field="domain.kind")


def build_map(spec: dict, domain: Optional[dom.DomainSpec]) -> dyn.HoloMap:
    kind = spec.get("kind")
    if kind == "disc-automorphism":
        return dyn.disc_automorphism(_complex_of(spec.get("a", 0.0), "map.a"))
    if kind == "ball-automorphism":
        q = int(spec.get("q", 2))
        center = _point_of(spec.get("center", [0.0] * q), "map.center")
        from .ball import mobius_to_origin, BallAutomorphism
        aut = mobius_to_origin(center).inverse()
        U = spec.get("unitary")
        if U is not None:
            Umat = np.array([[_complex_of(x, "map.unitary") for x in row] for row in U])
            aut = BallAutomorphism.unitary(Umat).compose(aut)
        return dyn.from_ball_automorphism(aut)
    if kind == "siegel-linear":
        factors = [_complex_of(v, "map.factors") for v in spec["factors"]]
        return dyn.siegel_linear(len(factors), factors)
    if kind == "siegel-translation":
        q = int(spec.get("q", 1))
        b = _point_of(spec.get("b", [0.0] * (q - 1)), "map.b") if q > 1 else None
        return dyn.siegel_translation(q, _complex_of(spec.get("a", 1.0), "map.a"), b)
    if kind == "siegel-normal-form":
        return dyn.siegel_normal_form(int(spec.get("q", 1)), spec.get("form", "hyperbolic"),
                                      lam=spec.get("lam"), angles=spec.get("angles", ()),
                                      sign=int(spec.get("sign", 1)))
    if kind == "polynomial":
        if domain is None:
            raise SchemaError("polynomial maps need a [domain] table", field="map")
        tables = []
        for comp in spec["components"]:
            tables.append({tuple(row["z"]): _complex_of(row["coeff"], "map.components")
                           for row in comp})
        return dyn.polynomial_self_map(domain, tables)
    if kind == "cayley-conjugate":
        inner = build_map(spec["inner"], None)
        return dyn.cayley_conjugate_map(inner, anchor=None if "anchor" not in spec
                                        else _point_of(spec["anchor"], "map.anchor"))
    raise SchemaError(f"unknown map kind {kind!r}", field="map.kind")


# ---------------------------------------------------------------------------
# json encoding
# ---------------------------------------------------------------------------

def _encode(obj):
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    if isinstance(obj, np.ndarray):
        return [_encode(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, dict):
        return {str(k): _encode(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_encode(v) for v in obj]
    if is_dataclass(obj) and not isinstance(obj, type):
        out = {}
        for key, val in vars(obj).items() if hasattr(obj, "__dict__") else asdict(obj).items():
            if callable(val) or key in ("h_fun", "ell_fun", "tau", "map", "evaluator"):
                continue
            out[key] = _encode(val)
        return out
    if isinstance(obj, float) and not np.isfinite(obj):
        return str(obj)
    return obj


@dataclass
class Report:
    config: dict
    verb: str
    result: dict
    meta: dict

    def to_json(self) -> str:
        body = {
            "schema": SCHEMA_TAG,
            "normalization": NORMALIZATION_BANNER,
            "verb": self.verb,
            "config": _encode(self.config),
            "result": _encode(self.result),
            "meta": self.meta,
        }
        return json.dumps(body, indent=2, sort_keys=True, default=str)

    def comparable_json(self) -> str:
        """Deterministic content (meta block stripped)."""
        body = json.loads(self.to_json())
        body.pop("meta", None)
        return json.dumps(body, indent=2, sort_keys=True)


def emit_orbit_csv(orbit, path):
    """Plot-ready orbit table: index, coordinates, distance stats."""
    import csv as _csv
    with open(path, "w", newline="") as fh:
        writer = _csv.writer(fh)
        q = orbit.points.shape[1]
        header = ["index"] + [f"re_z{j}" for j in range(q)] + [f"im_z{j}" for j in range(q)]
        header += ["dist_to_base"]
        if orbit.horo is not None:
            header += ["horo"]
        writer.writerow(header)
        for i, p in enumerate(orbit.points):
            row = [i] + [f"{v.real:.17g}" for v in p] + [f"{v.imag:.17g}" for v in p]
            row += [f"{orbit.dist_to_base[i]:.17g}"]
            if orbit.horo is not None:
                row += [f"{orbit.horo[i]:.17g}"]
            writer.writerow(row)


def emit_trend_csv(rows, header, path):
    import csv as _csv
    with open(path, "w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([f"{v:.17g}" if isinstance(v, float) else v for v in row])


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

def _tol(cfg: ExperimentConfig, key: str, default):
    return cfg.tolerances.get(key, default)

def run(config: ExperimentConfig) -> Report:
    """Dispatch one experiment; raises holokit errors for the CLI to map to
    exit codes."""
    t0 = time.time()
    verb = config.run["verb"]
    result: dict = {}

    if verb == "kobayashi":
        domain = build_domain(config.domain)
        z = _point_of(config.run["z"], "run.z")
        w = _point_of(config.run["w"], "run.w")
        sb = dom.kobayashi_sandwich(domain, z, w)
        result = {"lower": sb.lower, "upper": sb.upper, "gap": sb.gap,
                  "midpoint": sb.midpoint,
                  "lower_witness": sb.lower_witness, "upper_witness": sb.upper_witness}

    elif verb == "squeeze":
        domain = build_domain(config.domain)
        if "trend_center" in config.run:
            trend = dom.squeeze_trend(domain, _point_of(config.run["trend_center"], "run.trend_center"),
                                      n_points=int(config.run.get("n_points", 8)))
            result = {"trend": [vars(p) for p in trend.points],
                      "center_strongly_convex": trend.center_strongly_convex,
                      "flag": trend.flag}
            if config.run.get("csv"):
                emit_trend_csv([(p.boundary_distance, p.lower_bound) for p in trend.points],
                               ["boundary_distance", "lower_bound"], config.run["csv"])
        else:
            cert = dom.squeeze_lower(domain, _point_of(config.run["z"], "run.z"))
            result = {"inner_radius": cert.inner_radius, "description": cert.description,
                      "witness": cert.witness}

    elif verb == "classify":
        f = build_map(config.map, _maybe_domain(config))
        res = dyn.classify(f, _point_of(config.run["x"], "run.x"),
                           n_max=int(config.run.get("n_max", 400)),
                           m_max=int(config.run.get("m_max", 200)))
        result = {"type": res.type, "denjoy_wolff": res.denjoy_wolff,
                  "dilation": res.dilation, "divergence_rate": res.divergence_rate,
                  "evidence": res.evidence}

    elif verb == "dilation":
        f = build_map(config.map, _maybe_domain(config))
        zeta = None if config.run.get("zeta") in (None, "infinity") \
            else _point_of(config.run["zeta"], "run.zeta")
        est = dyn.dilation(f, zeta,
                           pole=None if "pole" not in config.run
                           else _point_of(config.run["pole"], "run.pole"))
        result = {"lambda": est.lam, "log_lambda_liminf": est.log_lam_liminf,
                  "method": est.method, "klimit_ok": est.klimit_ok,
                  "step_report": vars(est.step_report)}

    elif verb == "divergence-rate":
        f = build_map(config.map, _maybe_domain(config))
        est = dyn.divergence_rate(f, _point_of(config.run["x"], "run.x"),
                                  m_max=int(config.run.get("m_max", 200)),
                                  tol=float(_tol(config, "divergence", 1e-3)))
        result = {"value": est.value, "converged": est.report.converged,
                  "tail": list(est.report.tail())}

    elif verb == "julia":
        f = build_map(config.map, _maybe_domain(config))
        rep = dyn.julia_check(f, _point_of(config.run["zeta"], "run.zeta"),
                              R_values=config.run.get("radii", (0.5, 1.0, 2.0)),
                              n_samples=int(config.run.get("n_samples", 300)),
                              lam=config.run.get("lam"), seed=config.seed)
        result = vars(rep)
        if rep.violations:
            raise InvariantViolationError(
                f"Julia inequality violated {rep.violations} times "
                f"(worst ratio {rep.worst_ratio:.9f} vs lambda {rep.lam:.9f})",
                witness=result)

    elif verb == "model-forward":
        f = build_map(config.map, _maybe_domain(config))
        est = fwd.extract_forward_model(f, _point_of(config.run["base"], "run.base"))
        result = _model_result(est)

    elif verb == "backward-orbit":
        f = build_map(config.map, _maybe_domain(config))
        orbit = bwd.backward_orbit(f, _backward_config(config))
        result = _orbit_result(orbit)
        if config.run.get("csv"):
            emit_orbit_csv(orbit, config.run["csv"])

    elif verb == "pre-model":
        f = build_map(config.map, _maybe_domain(config))
        orbit = bwd.backward_orbit(f, _backward_config(config))
        est = bwd.extract_pre_model(f, orbit)
        result = _model_result(est)
        result["c_tau"] = est.c_tau
        result["step_ratio_residual"] = est.step_ratio_residual
        result["klimit"] = {k: v for k, v in (est.klimit or {}).items() if k != "points"}

    elif verb == "gromov":
        q = int(config.domain.get("q", 2)) if config.domain else 2
        result = _gromov_survey(q, seed=config.seed,
                                n_triangles=int(config.run.get("n_triangles", 100)),
                                n_filippo=int(config.run.get("n_filippo", 100)),
                                n_inclusion=int(config.run.get("n_inclusion", 2000)),
                                M=float(config.run.get("M", 2.0)))
        if result["filippo_violations"] or result["inclusion_violations"]:
            raise InvariantViolationError("Gromov suite found violations", witness=result)

    elif verb == "localize":
        domain = build_domain(config.domain)
        chart = loc.fefferman_chart(domain, _point_of(config.run["zeta"], "run.zeta"))
        R = float(config.run.get("R", min(0.5, 0.5 / max(chart.D, 1e-9))))
        lchart = loc.localized_chart(chart, R)
        cert = loc.verify_inclusions(lchart, domain,
                                     n_samples=int(config.run.get("n_samples", 20000)),
                                     seed=config.seed)
        result = {"P4_sup": chart.P4.sup_coefficient(),
                  "P4_terms": {f"{a}|{b}": c for (a, b), c in chart.P4.terms.items()},
                  "C": chart.C, "D": chart.D, "residual": chart.residual,
                  "series_residual": lchart.series_residual,
                  "imaginary_dependence": lchart.imaginary_dependence,
                  "validity_radius": chart.validity_radius,
                  "inclusions": vars(cert),
                  "linear_condition": chart.verification["linear_condition"]}

    elif verb == "compare-distance":
        domain = build_domain(config.domain)
        chart = loc.fefferman_chart(domain, _point_of(config.run["zeta"], "run.zeta"))
        R = float(config.run.get("R", min(0.5, 0.5 / max(chart.D, 1e-9))))
        lchart = loc.localized_chart(chart, R)
        cmpres = loc.distance_comparison(domain, lchart,
                                         epsilon=float(config.run.get("epsilon", 0.05)),
                                         n_pairs=int(config.run.get("n_pairs", 200)),
                                         seed=config.seed)
        result = vars(cmpres)

    else:  # pragma: no cover - guarded by ExperimentConfig
        raise SchemaError(f"unknown verb {verb!r}", field="run.verb")

    meta = {"timestamp": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
            "wall_clock_s": round(time.time() - t0, 6)}
    return Report(config=config.raw, verb=verb, result=result, meta=meta)


def _maybe_domain(config: ExperimentConfig):
    return build_domain(config.domain) if config.domain else None


def _backward_config(config: ExperimentConfig) -> bwd.BackwardConfig:
    run = config.run
    if "zeta" not in run:
        raise SchemaError("backward runs need run.zeta", field="run.zeta")
    kw = {}
    for key in ("lam", "R0", "n_scan", "k_max", "trail_length", "max_iter",
                "cauchy_tol", "steps_tol", "seed_arclength"):
        if key in run:
            kw[key] = run[key]
    return bwd.BackwardConfig(zeta=_point_of(run["zeta"], "run.zeta"), **kw)


def _model_result(est) -> dict:
    X, Y = est.intertwiner
    return {"k": est.k, "type": est.type, "dilation": est.dilation,
            "angles": list(est.angles), "sign": est.sign,
            "residual": est.residual, "metric_agreement": est.metric_agreement,
            "experimental": est.experimental,
            "tolerance_widening": est.tolerance_widening,
            "evidence": est.evidence,
            "intertwiner_samples": {"x": X[:8], "h_x": Y[:8]}}


def _orbit_result(orbit) -> dict:
    return {"length": len(orbit), "points": orbit.points,
            "steps": orbit.steps, "dist_to_base": orbit.dist_to_base,
            "metadata": {k: v for k, v in orbit.metadata.items()
                         if k not in ("rescaled_pairs",)}}


def _gromov_survey(q: int, seed: int, n_triangles: int, n_filippo: int,
                   n_inclusion: int, M: float) -> dict:
    sampler = SeededSampler(seed, q)
    tris = 0.92 * sampler.complex_ball(3 * n_triangles)
    delta_emp = 0.0
    for i in range(n_triangles):
        rep = slimness_delta(tris[3 * i], tris[3 * i + 1], tris[3 * i + 2],
                             samples_per_side=128)
        if not rep.degenerate:
            delta_emp = max(delta_emp, rep.delta)
    e1 = np.eye(q, dtype=complex)[0]
    pole = np.zeros(q, dtype=complex)
    fili_viol = 0
    worst_slack = np.inf
    pts = 0.9 * sampler.complex_ball(2 * n_filippo)
    for i in range(n_filippo):
        x0 = pts[2 * i]
        zeta = pts[2 * i + 1] / max(np.linalg.norm(pts[2 * i + 1]), 1e-9)
        gamma = geodesic(x0, zeta, "line")
        res = filippo_check(gamma, x0, pts[2 * i], delta=max(delta_emp, 1e-6))
        worst_slack = min(worst_slack, res.slack)
        fili_viol += 0 if res.holds else 1
    samples = 0.97 * sampler.complex_ball(n_inclusion)
    incl = region_A_vs_koranyi(pole, e1, M=M, delta=max(delta_emp, 1e-6), samples=samples)
    return {"delta_emp": delta_emp, "samples_per_side": 128,
            "filippo_violations": fili_viol, "filippo_worst_slack": worst_slack,
            "inclusion_violations": incl.violations_first + incl.violations_second,
            "inclusion_report": vars(incl)}
