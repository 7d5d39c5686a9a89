"""Experiment configuration, runners, and persistence.

Every runner writes a manifest (config echo, versions, timings) plus its
own CSV/JSON artifacts into the output directory; identical config and
seed give bit-identical CSV output.
"""

from __future__ import annotations

import itertools
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .dnmap import DNMeasurement, probe_field, write_probe_sweep_csv
from .errors import NonConvergence, PCalderonError
from .forward import (SolverConfig, solve_dirichlet, write_convergence_json,
                      write_solution_csv)
from .geometry import boundary_frame, build_disk_domain, generate_mesh
from .presets import (boundary_preset, conductivity_preset,
                      CONDUCTIVITY_PRESETS, BOUNDARY_PRESETS)
from .rellich import (datum_mesh_foci, recover_gamma_at, recover_grad_gamma,
                      smooth_probe_deltas)
from .wolff import (scaling_constant, smoothstep_cutoff, solve_profile,
                    write_profile_csv)

_TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class ExperimentConfig:
    domain: str = "disk"
    conductivity: str = "affine"
    p: float = 2.0
    theta0: float = 1.5 * np.pi          # boundary angle of x0 ((0, -1))
    alpha_theta: float = 0.0             # direction angle (0 -> e1)
    M_list: tuple = (3.0, 4.0, 6.0, 8.0)
    h: float = 0.08
    eps_schedule: tuple = (1e-2, 1e-4, 1e-6, 1e-8)
    gamma_mode: str = "oracle"
    boundary_data: str = "manufactured"
    bc_constant: float = 1.0
    quad_order: int = 3
    mesh_budget: int = 400_000
    profile_tol: float = 1e-10
    out_dir: str = "out"
    seed: int = 0
    threads: int = 1
    sweep: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.domain != "disk":
            raise ValueError(f"unknown domain {self.domain!r}")
        if self.conductivity not in CONDUCTIVITY_PRESETS:
            raise ValueError(f"unknown conductivity preset {self.conductivity!r}")
        if self.boundary_data not in BOUNDARY_PRESETS:
            raise ValueError(f"unknown boundary data preset {self.boundary_data!r}")
        if not (0.0 <= self.theta0 < _TWO_PI):
            raise ValueError("theta0 must lie in [0, 2*pi)")
        if not self.p > 1:
            raise ValueError("p must exceed 1")
        object.__setattr__(self, "M_list", tuple(float(m) for m in self.M_list))
        object.__setattr__(self, "eps_schedule",
                           tuple(float(e) for e in self.eps_schedule))

    @property
    def x0(self):
        return np.array([np.cos(self.theta0), np.sin(self.theta0)])

    @property
    def alpha(self):
        return np.array([np.cos(self.alpha_theta), np.sin(self.alpha_theta)])

    def to_json_dict(self):
        d = asdict(self)
        d["M_list"] = list(self.M_list)
        d["eps_schedule"] = list(self.eps_schedule)
        return d

    @classmethod
    def from_json_dict(cls, d):
        d = dict(d)
        for key in ("M_list", "eps_schedule"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    def write_json(self, path):
        with open(path, "w") as f:
            json.dump(self.to_json_dict(), f, indent=2, sort_keys=True)
            f.write("\n")

    @classmethod
    def read_json(cls, path):
        with open(path) as f:
            return cls.from_json_dict(json.load(f))


def load_config(path=None, **overrides) -> ExperimentConfig:
    if path is not None:
        with open(path) as f:
            data = json.load(f)
    else:
        data = {}
    data.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig.from_json_dict(data)


def _write_manifest(out_dir, config, timings, outputs, extra=None):
    manifest = {
        "config": config.to_json_dict() if isinstance(config, ExperimentConfig)
        else config,
        "versions": {"pcalderon": __version__, "numpy": np.__version__,
                     "scipy": scipy.__version__},
        "timings_s": timings,
        "outputs": sorted(outputs),
    }
    if extra:
        manifest.update(extra)
    path = Path(out_dir) / "manifest.json"
    with open(path, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True, default=float)
        f.write("\n")
    return path


def _ensure_out(out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ------------------------------------------------------------------- runners

def run_wolff(p: float, tol: float = 1e-10, out_dir: str = "out"):
    out = _ensure_out(out_dir)
    t0 = time.perf_counter()
    profile = solve_profile(p, tol)
    cutoff = smoothstep_cutoff()
    summary = {
        "p": profile.p,
        "lambda": profile.period,
        "K": profile.energy_mean,
        "c_p": scaling_constant(profile, cutoff),
        "closure_defect": profile.closure_defect,
        "tol": tol,
    }
    csv_path = out / "profile.csv"
    json_path = out / "wolff.json"
    write_profile_csv(profile, csv_path, cutoff)
    with open(json_path, "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")
    _write_manifest(out, {"command": "wolff", "p": p, "tol": tol},
                    {"total": time.perf_counter() - t0},
                    [csv_path.name, json_path.name])
    return summary


def _build_model(config: ExperimentConfig, foci=None):
    domain = build_disk_domain()
    mesh = generate_mesh(domain, config.h, foci, seed=config.seed,
                         max_vertices=config.mesh_budget)
    gamma = conductivity_preset(config.conductivity, config.p)
    solver = SolverConfig(p=config.p, eps_schedule=config.eps_schedule)
    return domain, mesh, gamma, solver


def run_forward(config: ExperimentConfig):
    out = _ensure_out(config.out_dir)
    t0 = time.perf_counter()
    domain, mesh, gamma, solver = _build_model(config)
    v = boundary_preset(config.boundary_data, config.bc_constant)
    outputs = []
    extra = {}
    try:
        sol = solve_dirichlet(mesh, gamma, config.p, v, solver)
        failed = None
    except NonConvergence as exc:
        sol = exc.solution
        failed = str(exc)
    sol_path = out / "solution.csv"
    conv_path = out / "convergence.json"
    write_solution_csv(sol, sol_path)
    write_convergence_json(sol, conv_path)
    outputs += [sol_path.name, conv_path.name]
    if config.conductivity == "manufactured" and config.boundary_data == "manufactured":
        uex = np.exp(-mesh.vertices[:, 0])
        num = assemble_l2(mesh, sol.u - uex)
        den = assemble_l2(mesh, uex)
        extra["rel_l2_error"] = num / den
    extra["failed"] = failed
    _write_manifest(out, config, {"total": time.perf_counter() - t0}, outputs,
                    {"result": extra})
    if failed is not None:
        raise NonConvergence(failed, solution=sol)
    return {"solution": sol, **extra}


def assemble_l2(mesh, vertex_values):
    """L2 norm of a P1 field via the exact element mass matrix."""
    vals = vertex_values[mesh.triangles]
    q = (vals ** 2).sum(axis=1) + (vals * np.roll(vals, 1, axis=1)).sum(axis=1)
    return float(np.sqrt((mesh.areas / 6.0 * q).sum()))


def run_dnmap_probe(config: ExperimentConfig, n_points: int = 8):
    """Probe sweep of the configured boundary data at points spread around
    the boundary; exports the raw/normalized/extrapolated values."""
    out = _ensure_out(config.out_dir)
    t0 = time.perf_counter()
    thetas = config.theta0 + np.linspace(0, _TWO_PI, n_points, endpoint=False)
    raw = np.column_stack([np.cos(thetas), np.sin(thetas)])
    # refine around each probe point so a 3-level schedule fits the floor
    local_h = min(config.h, 0.01)
    foci = [(q, local_h, 0.2) for q in raw]
    domain, mesh, gamma, solver = _build_model(config, foci)
    meas = DNMeasurement(domain, mesh, gamma, config.p, solver)
    v = boundary_preset(config.boundary_data, config.bc_constant)
    pts = domain.project_to_boundary(raw)
    deltas = smooth_probe_deltas(max(meas.local_size_at(q) for q in pts))
    values, results = probe_field(meas, v, pts, deltas)
    csv_path = out / "probe_sweep.csv"
    write_probe_sweep_csv(csv_path, pts, results)
    _write_manifest(out, config, {"total": time.perf_counter() - t0},
                    [csv_path.name], {"deltas": list(deltas)})
    return {"points": pts, "values": values, "results": results}


def _reconstruct_core(config: ExperimentConfig, conductivity_name=None):
    """Shared pipeline: graded mesh for the M list, measurement, recovery."""
    name = conductivity_name or config.conductivity
    domain = build_disk_domain()
    profile = solve_profile(config.p, config.profile_tol)
    cutoff = smoothstep_cutoff()
    x0 = domain.project_to_boundary(config.x0)
    foci = datum_mesh_foci(profile, x0, config.M_list, config.h)
    mesh = generate_mesh(domain, config.h, foci, seed=config.seed,
                         max_vertices=config.mesh_budget)
    gamma = conductivity_preset(name, config.p)
    solver = SolverConfig(p=config.p, eps_schedule=config.eps_schedule)
    meas = DNMeasurement(domain, mesh, gamma, config.p, solver)
    frame = boundary_frame(domain, x0)
    alphas = {"alpha": config.alpha, "tangent": frame.tangent, "normal": frame.nu}
    result = recover_grad_gamma(
        meas, domain, x0, alphas, profile, cutoff, config.M_list,
        gamma_boundary_mode=config.gamma_mode, truth=gamma,
        quad_order=config.quad_order)
    return result


def run_reconstruct(config: ExperimentConfig):
    out = _ensure_out(config.out_dir)
    t0 = time.perf_counter()
    result = _reconstruct_core(config)
    json_path = out / "reconstruction.json"
    csv_path = out / "reconstruction.csv"
    result.write_json(json_path)
    result.write_csv(csv_path)
    _write_manifest(out, config, {"total": time.perf_counter() - t0},
                    [json_path.name, csv_path.name])
    lines = _truth_table(result)
    return {"result": result, "table": lines}


def _truth_table(result):
    lines = ["M       N    gamma_hat  dgamma_hat(alpha)  err_gamma  err_dgamma"]
    for row in result.rows:
        eg = row.get("err_gamma", float("nan"))
        ed = row.get("err_dgamma", {}).get("alpha", float("nan"))
        lines.append(f"{row['M']:<7g} {row['N']:<4g} {row['gamma_hat']:<10.4f} "
                     f"{row['dgamma_hat']['alpha']:<18.4f} {eg:<10.4f} {ed:.4f}")
    return lines


# --------------------------------------------------------------------- study

_SWEEPABLE = ("M", "h", "p", "eps_floor")


def _apply_override(config, key, value):
    if key == "M":
        return replace(config, M_list=(float(value),))
    if key == "h":
        return replace(config, h=float(value))
    if key == "p":
        return replace(config, p=float(value))
    if key == "eps_floor":
        sched = tuple(e for e in config.eps_schedule if e > float(value)) \
            + (float(value),)
        return replace(config, eps_schedule=sched)
    raise ValueError(f"unsupported sweep key {key!r}; allowed: {_SWEEPABLE}")


def _study_row(args):
    config, keys, values = args
    row = dict(zip(keys, values))
    t0 = time.perf_counter()
    try:
        cfg = config
        for k, v in zip(keys, values):
            cfg = _apply_override(cfg, k, v)
        result = _reconstruct_core(cfg)
        last = result.rows[-1]
        row.update({
            "status": "ok",
            "gamma_hat": last["gamma_hat"],
            "dgamma_hat": last["dgamma_hat"]["alpha"],
            "err_gamma": last.get("err_gamma", ""),
            "err_dgamma": last.get("err_dgamma", {}).get("alpha", ""),
        })
    except PCalderonError as exc:
        row.update({"status": f"error:{type(exc).__name__}", "gamma_hat": "",
                    "dgamma_hat": "", "err_gamma": "", "err_dgamma": ""})
    row["runtime_s"] = time.perf_counter() - t0
    return row


def run_study(config: ExperimentConfig):
    if not config.sweep:
        raise ValueError("study needs a non-empty sweep specification")
    for key, vals in config.sweep.items():
        if key not in _SWEEPABLE:
            raise ValueError(f"unsupported sweep key {key!r}; allowed: {_SWEEPABLE}")
        if not isinstance(vals, (list, tuple)) or len(vals) == 0:
            raise ValueError(f"sweep list for {key!r} must be non-empty")
    out = _ensure_out(config.out_dir)
    t0 = time.perf_counter()
    keys = sorted(config.sweep.keys())
    tuples = sorted(itertools.product(*(config.sweep[k] for k in keys)))
    if len(set(tuples)) != len(tuples):
        raise ValueError("duplicate sweep tuples")
    jobs = [(config, keys, values) for values in tuples]
    if config.threads > 1:
        with ProcessPoolExecutor(max_workers=config.threads) as pool:
            rows = list(pool.map(_study_row, jobs))
    else:
        rows = [_study_row(j) for j in jobs]
    columns = keys + ["status", "gamma_hat", "dgamma_hat", "err_gamma",
                      "err_dgamma", "runtime_s"]
    csv_path = out / "study.csv"
    with open(csv_path, "w", newline="") as f:
        f.write(",".join(columns) + "\n")
        for row in rows:
            f.write(",".join(repr(row[c]) if isinstance(row[c], float)
                             else str(row[c]) for c in columns) + "\n")
    failures = sum(1 for r in rows if r["status"] != "ok")
    _write_manifest(out, config, {"total": time.perf_counter() - t0},
                    [csv_path.name], {"rows": len(rows), "failures": failures})
    return {"rows": rows, "failures": failures}


# ------------------------------------------------------------ A/B uniqueness

def run_ab(config: ExperimentConfig, gamma1: str, gamma2: str):
    """Contrapositive demo: two hidden models probed with identical data;
    distinct boundary gradients must separate beyond the diagnostic bars."""
    out = _ensure_out(config.out_dir)
    t0 = time.perf_counter()
    results = {}
    for label, name in (("model1", gamma1), ("model2", gamma2)):
        results[label] = _reconstruct_core(config, conductivity_name=name)

    def final_est(res):
        return res.rows[-1]["dgamma_hat"]["alpha"]

    def error_bar(res):
        # Cauchy-style diagnostic bar from the tail increments of the
        # estimate sequence (the convergence rate in M is not known)
        vals = [r["dgamma_hat"]["alpha"] for r in res.rows]
        if len(vals) >= 3:
            return abs(vals[-1] - vals[-2]) + 0.5 * abs(vals[-2] - vals[-3])
        if len(vals) == 2:
            return 2.0 * abs(vals[-1] - vals[-2])
        return abs(vals[-1])

    est1, est2 = final_est(results["model1"]), final_est(results["model2"])
    bar1, bar2 = error_bar(results["model1"]), error_bar(results["model2"])
    g1 = results["model1"].rows[-1]["gamma_hat"]
    g2 = results["model2"].rows[-1]["gamma_hat"]
    report = {
        "gamma1": gamma1, "gamma2": gamma2,
        "dgamma_alpha": {"model1": est1, "model2": est2},
        "gamma_hat": {"model1": g1, "model2": g2},
        "separation": abs(est1 - est2),
        "error_bars": {"model1": bar1, "model2": bar2},
        "separated_beyond_bars": bool(abs(est1 - est2) > bar1 + bar2),
        "gamma_hat_rel_gap": abs(g1 - g2) / max(abs(g1), abs(g2)),
    }
    path = out / "ab_report.json"
    with open(path, "w") as f:
        json.dump(report, f, indent=2, sort_keys=True, default=float)
        f.write("\n")
    for label, res in results.items():
        res.write_json(out / f"reconstruction_{label}.json")
        res.write_csv(out / f"reconstruction_{label}.csv")
    _write_manifest(out, config, {"total": time.perf_counter() - t0},
                    [path.name] + [f"reconstruction_{l}.{e}" for l in results
                                   for e in ("json", "csv")])
    return {"report": report, "results": results}
