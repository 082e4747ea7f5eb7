"""Batch experiments: configuration, a deterministic work queue and result tables.

Each experiment expands its config into independent jobs, runs them (optionally
in worker processes), sorts the rows by job key and writes ``<name>.csv`` plus a
JSON summary ``<name>_summary.json`` into the output directory.  Every row carries
the hash of the effective configuration.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigInvalid, KobmetricError
from .geometry import (
    BarrierFunction,
    RegionSpec,
    boundary_project_batch,
    get_domain,
    is_plurisubharmonic,
    levi_form,
    levi_via_disc,
    sphere_points,
)
from .normalization import ball_sandwich, build_chart, fit_power_law

log = logging.getLogger(__name__)

LAMBDA_MAX = 0.15

DEFAULTS = {
    "levi-check": {"domains": ["ball", "siegel", "perturbed-ball(0.05)"], "n_points": 4, "rel_tol": 1e-4},
    "chirka": {"n_structures": 20, "epsilon": 0.05, "n_samples": 10000, "inner": 0.05},
    "disc-solve": {"n_structures": 50, "lambda_max": 0.1, "degree": 24, "c_bound": 5.0,
                   "max_ratio": 0.5, "residual_tol": 1e-6},
    "theorem-a": {"domain": "ball", "lambdas": [0.0], "deltas": [0.1, 0.05, 0.02],
                  "directions": ["normal", "tangential"], "alpha": 0.1, "alpha_prime": 0.25,
                  "min_r2": 0.9, "exact_tol": 1e-6},
    "ball-sandwich": {"domains": ["siegel", "ball"], "deltas": [0.1, 0.05, 0.02], "n": 4000,
                      "siegel_tol": 1e-9},
    "gromov": {"domain": "ball", "source": "kobayashi", "points": "collinear", "n_points": 4,
               "n_boundary": 600, "mesh_n": 800, "tol": 1e-9},
    "rough-similarity": {"domain": "perturbed-ball(0.02)", "n_points": 40, "depth_min": 0.02,
                         "depth_max": 0.3, "n_boundary": 600, "mesh_n": 800, "refinement": 2,
                         "max_change": 0.2},
}

EXPERIMENTS = tuple(DEFAULTS)


@dataclass
class ExperimentReport:
    name: str
    config: dict
    config_hash: str
    columns: list
    rows: list
    summary: dict
    passed: bool
    files: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# configuration

def load_config(path):
    """Read a JSON or YAML mapping."""
    import yaml

    with open(path) as fh:
        text = fh.read()
    try:
        data = json.loads(text) if path.endswith(".json") else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigInvalid(f"{path}: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigInvalid(f"{path}: top level must be a mapping")
    return data


def config_hash(config):
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def _domain_lambda(name):
    try:
        return get_domain(name).lam
    except KobmetricError as exc:
        raise ConfigInvalid(str(exc)) from exc


def validate_config(name, config, seed=0):
    """Merge with defaults and check ranges; returns the effective config."""
    if name not in DEFAULTS:
        raise ConfigInvalid(f"unknown experiment {name!r}; choose from {', '.join(EXPERIMENTS)}")
    cfg = copy.deepcopy(DEFAULTS[name])
    extra = set(config) - set(cfg) - {"seed"}
    if extra:
        raise ConfigInvalid(f"unknown keys for {name}: {sorted(extra)}")
    cfg.update(copy.deepcopy(config))
    cfg["seed"] = int(config.get("seed", seed))

    def need(cond, msg):
        if not cond:
            raise ConfigInvalid(f"{name}: {msg}")

    for key in ("n_points", "n_structures", "n_samples", "n", "n_boundary", "mesh_n", "degree"):
        if key in cfg:
            need(isinstance(cfg[key], int) and cfg[key] > 0, f"{key} must be a positive integer")
    if "deltas" in cfg:
        need(len(cfg["deltas"]) > 0 and all(0 < float(d) < 0.5 for d in cfg["deltas"]),
             "deltas must lie in (0, 0.5)")
    if "alpha" in cfg:
        need(0 < cfg["alpha"] < cfg["alpha_prime"] <= 0.5, "need 0 < alpha < alpha_prime <= 0.5")
    if "lambdas" in cfg:
        need(all(0 <= float(x) <= LAMBDA_MAX for x in cfg["lambdas"]), f"lambdas must lie in [0, {LAMBDA_MAX}]")
    if "lambda_max" in cfg:
        need(0 < cfg["lambda_max"] <= LAMBDA_MAX, f"lambda_max must lie in (0, {LAMBDA_MAX}]")
    if "epsilon" in cfg:
        need(0 < cfg["epsilon"] <= LAMBDA_MAX, f"epsilon must lie in (0, {LAMBDA_MAX}]")
    for key in ("domain",):
        if key in cfg:
            need(_domain_lambda(cfg[key]) <= LAMBDA_MAX, f"structure perturbation exceeds {LAMBDA_MAX}")
    for d in cfg.get("domains", []):
        need(_domain_lambda(d) <= LAMBDA_MAX, f"structure perturbation of {d} exceeds {LAMBDA_MAX}")
    if "directions" in cfg:
        need(set(cfg["directions"]) <= {"normal", "tangential", "mixed"}, "unknown direction type")
    if name == "theorem-a":
        need(cfg["domain"] in ("ball", "siegel"), "domain must be ball or siegel (lambdas perturb the ball)")
        need(cfg["domain"] == "ball" or all(float(x) == 0 for x in cfg["lambdas"]),
             "the siegel model is only catalogued with J_st")
    if name == "gromov":
        need(cfg["source"] in ("kobayashi", "ball-exact", "euclidean"), "source must be kobayashi, ball-exact or euclidean")
        need(cfg["n_points"] >= 4, "need at least 4 points")
    if name == "rough-similarity":
        need(0 < cfg["depth_min"] < cfg["depth_max"] < 0.5, "need 0 < depth_min < depth_max < 0.5")
        need(cfg["refinement"] > 1, "refinement must exceed 1")
    return cfg


# ---------------------------------------------------------------------------
# job functions (module level so that worker processes can import them)

def _job_levi(domain, index, seed):
    D = get_domain(domain)
    rng = np.random.default_rng([seed, index])
    if domain == "siegel":
        p = np.array([0.2, 0.0, 0.0, 0.0]) + np.concatenate([[0.0, 0.0], 0.3 * rng.normal(size=2)])
    else:
        p = 0.8 * sphere_points(1, seed=int(rng.integers(1 << 31)))[0]
    v = rng.normal(size=4)
    v /= np.linalg.norm(v)
    a = float(levi_form(D.rho, D.J, p, v))
    b = float(levi_via_disc(D.rho, D.J, p, v))
    return {"domain": domain, "index": index, "levi_form": a, "levi_disc": b,
            "rel_err": abs(a - b) / max(abs(a), 1e-12)}


def _job_chirka(index, eps, n_samples, inner, seed):
    from .structures import random_diagonal_structure

    J = random_diagonal_structure([seed, index], eps, vanish_at_origin=True)
    rho = BarrierFunction(eps).as_defining_function()
    rep = is_plurisubharmonic(rho, J, RegionSpec(n=n_samples, radius=1.0, inner=inner, seed=seed + index))
    return {"index": index, "epsilon": eps, "min_margin": rep.min_margin,
            "violations": int(not rep.passed), "n_samples": rep.n_samples}


def _job_disc(index, lam_max, degree, max_ratio, seed):
    from .disc import solve_disc
    from .structures import random_diagonal_structure

    rng = np.random.default_rng([seed, index])
    lam = float(rng.uniform(0.1, 1.0) * lam_max)
    J = random_diagonal_structure(rng, lam, vanish_at_origin=False)
    w = rng.normal(size=4)
    w *= rng.uniform(0.3, 1.0) / np.linalg.norm(w)
    u = solve_disc(J, w, N=degree, max_ratio=max_ratio, enforce=False)
    err = float(np.linalg.norm(u.derivative_at_origin() - w))
    return {"index": index, "lambda": lam, "w_norm": float(np.linalg.norm(w)),
            "iterations": u.info["iterations"], "contraction_ratio": u.info["contraction_ratio"],
            "residual": u.info["residual"], "derivative_error": err,
            "c_ratio": err / (lam * np.linalg.norm(w))}


def _base_point(domain, delta):
    """Point at distance delta from the boundary point (1, 0, 0, 0), or 0 for the Siegel model."""
    return np.array([delta, 0, 0, 0]) if domain == "siegel" else np.array([1.0 - delta, 0, 0, 0])


_DIRECTIONS = {"normal": np.array([1.0, 0, 0, 0]), "tangential": np.array([0, 0, 1.0, 0]),
               "mixed": np.array([1.0, 0, 1.0, 0]) / np.sqrt(2)}


def _job_theorem_a(domain, lam, delta, direction, alpha, alpha_prime):
    from .kobayashi import kobayashi_lower, kobayashi_upper, sharp_estimate

    name = domain if lam == 0 else f"perturbed-{domain}({lam:g})"
    D = get_domain(name)
    p = _base_point(domain, delta)
    v = _DIRECTIONS[direction]
    chart = build_chart(D.rho, D.J, p, alpha=alpha, alpha_prime=alpha_prime)
    up = kobayashi_upper(D.rho, D.J, p, v, chart=chart)
    lo = kobayashi_lower(D.rho, D.J, p, v, chart=chart)
    E = sharp_estimate(D.rho, D.J, p, v)
    return {"domain": domain, "lambda": lam, "delta": delta, "direction": direction,
            "lower": lo.lower, "E": E, "upper": up.upper,
            "certificate_valid": up.info["certificate_valid"], "epsilon": lo.info["epsilon"]}


def _job_sandwich(domain, delta, n, seed):
    D = get_domain(domain)
    p = _base_point(domain, delta)
    chart = build_chart(D.rho, D.J, p)
    sw = ball_sandwich(chart, n=n, seed=seed)
    return {"domain": domain, "delta": delta, "r_in": sw.r_in, "r_out": sw.r_out,
            "face_min": sw.face_min, "face_max": sw.face_max}


# ---------------------------------------------------------------------------
# experiment bodies: each returns (columns, jobs, finish) where finish(rows) -> (summary, passed)

def _plan_levi(cfg):
    jobs = [((d, i), _job_levi, dict(domain=d, index=i, seed=cfg["seed"]))
            for d in cfg["domains"] for i in range(cfg["n_points"])]

    def finish(rows):
        worst = max(r["rel_err"] for r in rows)
        return {"max_rel_err": worst}, worst <= cfg["rel_tol"]

    return ["domain", "index", "levi_form", "levi_disc", "rel_err"], jobs, finish


def _plan_chirka(cfg):
    jobs = [((i,), _job_chirka, dict(index=i, eps=cfg["epsilon"], n_samples=cfg["n_samples"],
                                     inner=cfg["inner"], seed=cfg["seed"]))
            for i in range(cfg["n_structures"])]

    def finish(rows):
        v = sum(r["violations"] for r in rows)
        return {"violations": v, "min_margin": min(r["min_margin"] for r in rows)}, v == 0

    return ["index", "epsilon", "min_margin", "violations", "n_samples"], jobs, finish


def _plan_disc(cfg):
    jobs = [((i,), _job_disc, dict(index=i, lam_max=cfg["lambda_max"], degree=cfg["degree"],
                                   max_ratio=cfg["max_ratio"], seed=cfg["seed"]))
            for i in range(cfg["n_structures"])]

    def finish(rows):
        c = max(r["c_ratio"] for r in rows)
        ratio = max(r["contraction_ratio"] for r in rows)
        res = max(r["residual"] for r in rows)
        ok = c <= cfg["c_bound"] and ratio <= cfg["max_ratio"] and res <= cfg["residual_tol"]
        return {"fitted_c": c, "max_contraction_ratio": ratio, "max_residual": res}, ok

    cols = ["index", "lambda", "w_norm", "iterations", "contraction_ratio", "residual",
            "derivative_error", "c_ratio"]
    return cols, jobs, finish


def _fit_group(rows, key, exact_tol):
    x = np.array([r["delta"] for r in rows])
    y = np.abs(np.log(np.array([r[key] for r in rows]) / np.array([r["E"] for r in rows])))
    if np.all(y <= exact_tol):
        return {"C": float(y.max()), "s": float("inf"), "r2": 1.0, "exact": True}
    C, s, r2 = fit_power_law(x, np.maximum(y, 1e-300))
    return {"C": C, "s": s, "r2": r2, "exact": False}


def _plan_theorem_a(cfg):
    domain = cfg["domain"]
    jobs = [((float(lam), direction, -float(d)), _job_theorem_a,
             dict(domain=domain, lam=float(lam), delta=float(d), direction=direction,
                  alpha=cfg["alpha"], alpha_prime=cfg["alpha_prime"]))
            for lam in cfg["lambdas"] for direction in cfg["directions"] for d in cfg["deltas"]]

    def finish(rows):
        fits, ok = {}, True
        for lam in cfg["lambdas"]:
            for direction in cfg["directions"]:
                grp = [r for r in rows if r["lambda"] == float(lam) and r["direction"] == direction]
                for key in ("upper", "lower"):
                    f = _fit_group(grp, key, cfg["exact_tol"])
                    fits[f"{lam:g}/{direction}/{key}"] = f
                    good = f["exact"] or (f["s"] > 0 and f["r2"] >= cfg["min_r2"])
                    ok &= bool(good)
                    for r in grp:
                        r[f"C_{key}"], r[f"s_{key}"] = f["C"], f["s"]
        ok &= all(r["lower"] <= r["upper"] for r in rows)
        return {"fits": fits}, ok

    cols = ["domain", "lambda", "delta", "direction", "lower", "E", "upper", "C_upper", "s_upper",
            "C_lower", "s_lower", "certificate_valid", "epsilon"]
    return cols, jobs, finish


def _plan_sandwich(cfg):
    jobs = [((d, -float(x)), _job_sandwich, dict(domain=d, delta=float(x), n=cfg["n"], seed=cfg["seed"]))
            for d in cfg["domains"] for x in cfg["deltas"]]

    def finish(rows):
        ok = True
        for r in rows:
            if r["domain"] == "siegel":
                ok &= abs(r["r_in"] - 1) <= cfg["siegel_tol"] and abs(r["r_out"] - 1) <= cfg["siegel_tol"]
            else:
                ok &= 0 < r["r_in"] <= r["r_out"]
        return {"n_rows": len(rows)}, bool(ok)

    return ["domain", "delta", "r_in", "r_out", "face_min", "face_max"], jobs, finish


# gromov and rough-similarity build one shared graph, so they run as a single job

def ball_distance(a, b):
    """Closed-form Kobayashi distance of the unit ball in C^2."""
    za, zb = a[..., 0::2] + 1j * a[..., 1::2], b[..., 0::2] + 1j * b[..., 1::2]
    na = 1 - np.sum(np.abs(za) ** 2, axis=-1)
    nb = 1 - np.sum(np.abs(zb) ** 2, axis=-1)
    x = na * nb / np.abs(1 - np.sum(za * np.conj(zb), axis=-1)) ** 2
    return np.arctanh(np.sqrt(np.clip(1 - x, 0.0, 1.0)))


def _gromov_points(cfg):
    n = cfg["n_points"]
    if cfg["points"] == "collinear":
        s = np.linspace(-0.6, 0.6, n)
        return np.column_stack([s, np.zeros((n, 3))])
    if cfg["points"] == "random":
        rng = np.random.default_rng(cfg["seed"])
        x = rng.normal(size=(n, 4))
        return x * (0.9 * rng.random(n) ** 0.25 / np.linalg.norm(x, axis=1))[:, None]
    pts = np.asarray(cfg["points"], dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 4:
        raise ConfigInvalid("points must be 'collinear', 'random' or a list of 4-vectors")
    return pts


def _job_gromov(cfg):
    from .gromov import DistanceMatrix, hyperbolicity_delta
    from .kobayashi import build_distance_graph, graph_distances

    pts = _gromov_points(cfg)
    D = get_domain(cfg["domain"])
    if cfg["source"] == "euclidean":
        M = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
    elif cfg["source"] == "ball-exact":
        M = ball_distance(pts[:, None], pts[None])
    else:
        dg = build_distance_graph(D.rho, D.J, n_boundary=cfg["n_boundary"], extra_points=pts)
        M = graph_distances(dg, pts)
    np.fill_diagonal(M, 0.0)
    dm = DistanceMatrix([f"p{i}" for i in range(len(pts))], M, check_triangle=False)
    return [{"source": cfg["source"], "n_points": len(pts), "delta_hyp": hyperbolicity_delta(dm, seed=cfg["seed"]),
             "max_distance": float(M.max())}]


def _plan_gromov(cfg):
    def finish(rows):
        return {"delta_hyp": rows[0]["delta_hyp"]}, bool(np.isfinite(rows[0]["delta_hyp"]))

    return ["source", "n_points", "delta_hyp", "max_distance"], [((0,), _job_gromov, dict(cfg=cfg))], finish


def collar_sample(rho, n, depth_min, depth_max, seed):
    """Points at log-uniform depths along inward normals from random boundary points."""
    rng = np.random.default_rng(seed)
    b, _, ok = boundary_project_batch(rho, sphere_points(n, seed=int(rng.integers(1 << 31))))
    if not ok.all():
        raise KobmetricError("collar sampling failed to project")
    depth = np.exp(rng.uniform(np.log(depth_min), np.log(depth_max), n))
    g = rho.gradient(b)
    return b - depth[:, None] * g / np.linalg.norm(g, axis=1, keepdims=True), b


def _job_rough(cfg, level):
    from .gromov import DistanceMatrix, balogh_bonk_matrix, build_boundary_mesh, hyperbolicity_delta, rough_similarity
    from .kobayashi import build_distance_graph, graph_distances

    D = get_domain(cfg["domain"])
    pts, b = collar_sample(D.rho, cfg["n_points"], cfg["depth_min"], cfg["depth_max"], cfg["seed"])
    f = cfg["refinement"] ** level
    # kappa is a parameter of the comparison metric: fixed at its base-mesh value across levels
    base = build_boundary_mesh(D.rho, D.J, n=cfg["mesh_n"], extra_points=b)
    mesh = base if level == 0 else build_boundary_mesh(D.rho, D.J, n=int(cfg["mesh_n"] * f),
                                                       extra_points=b, kappa=base.kappa)
    dg = build_distance_graph(D.rho, D.J, n_boundary=int(cfg["n_boundary"] * f),
                              interior_spacing=0.125 / f ** 0.25, extra_points=pts)
    labels = [f"p{i}" for i in range(len(pts))]
    dm = DistanceMatrix(labels, graph_distances(dg, pts), check_triangle=False)
    gm = DistanceMatrix(labels, balogh_bonk_matrix(D.rho, D.J, mesh, pts), check_triangle=False)
    return [{"level": level, "n_boundary": int(cfg["n_boundary"] * f), "mesh_n": int(cfg["mesh_n"] * f),
             "kappa": mesh.kappa, "C": rough_similarity(dm, gm), "delta_K": hyperbolicity_delta(dm),
             "delta_g": hyperbolicity_delta(gm), "n_nodes": len(dg.nodes)}]


def _plan_rough(cfg):
    jobs = [((lvl,), _job_rough, dict(cfg=cfg, level=lvl)) for lvl in (0, 1)]

    def finish(rows):
        a, b = sorted(rows, key=lambda r: r["level"])
        change_C = abs(b["C"] - a["C"]) / a["C"]
        change_d = abs(b["delta_K"] - a["delta_K"]) / a["delta_K"]
        finite = all(np.isfinite([a["C"], b["C"], a["delta_K"], b["delta_K"]]))
        ok = finite and change_C < cfg["max_change"] and change_d < cfg["max_change"]
        # delta(d) <= delta(g) + 2C must hold for any pair of functions on the same points
        implied = all(r["delta_K"] <= r["delta_g"] + 2 * r["C"] + 1e-9 for r in rows)
        return {"C": [a["C"], b["C"]], "change_C": change_C, "delta_K": [a["delta_K"], b["delta_K"]],
                "change_delta_K": change_d, "hyperbolicity_transfer": implied}, bool(ok and implied)

    cols = ["level", "n_boundary", "mesh_n", "kappa", "C", "delta_K", "delta_g", "n_nodes"]
    return cols, jobs, finish


PLANS = {"levi-check": _plan_levi, "chirka": _plan_chirka, "disc-solve": _plan_disc,
         "theorem-a": _plan_theorem_a, "ball-sandwich": _plan_sandwich, "gromov": _plan_gromov,
         "rough-similarity": _plan_rough}


# ---------------------------------------------------------------------------
# driver

def _call(fn, kw):
    out = fn(**kw)
    return out if isinstance(out, list) else [out]


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, np.integer):
        return str(int(x))
    return str(x)


def run_experiment(name, config=None, seed=0, out=None, workers=1):
    """Run one experiment; writes tables when ``out`` is given."""
    cfg = validate_config(name, config or {}, seed)
    h = config_hash({"experiment": name, **cfg})
    columns, jobs, finish = PLANS[name](cfg)
    jobs = sorted(jobs, key=lambda j: j[0])
    results = {}
    try:
        if workers > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                futs = {key: pool.submit(_call, fn, kw) for key, fn, kw in jobs}
                results = {key: f.result() for key, f in futs.items()}
        else:
            results = {key: _call(fn, kw) for key, fn, kw in jobs}
    except KobmetricError as exc:
        raise type(exc)(f"experiment {name}: {exc}", witness=exc.witness) from exc
    rows = [r for key, _, _ in jobs for r in results[key]]
    summary, passed = finish(rows)
    summary = {"experiment": name, "config_hash": h, "config": cfg, "passed": bool(passed), **summary}
    report = ExperimentReport(name, cfg, h, ["config_hash"] + columns, rows, summary, bool(passed))
    if out is not None:
        write_report(report, out)
    return report


def _json_safe(x):
    if isinstance(x, dict):
        return {k: _json_safe(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_json_safe(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    if isinstance(x, np.ndarray):
        return _json_safe(x.tolist())
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def write_report(report, out):
    os.makedirs(out, exist_ok=True)
    table = os.path.join(out, f"{report.name}.csv")
    with open(table, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(report.columns)
        for r in report.rows:
            w.writerow([report.config_hash] + [_fmt(r.get(c, "")) for c in report.columns[1:]])
    summ = os.path.join(out, f"{report.name}_summary.json")
    with open(summ, "w") as fh:
        json.dump(_json_safe(report.summary), fh, indent=2, sort_keys=True)
        fh.write("\n")
    report.files = [table, summ]
    return report.files
