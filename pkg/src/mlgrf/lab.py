"""Experiment orchestration: configuration, runners, and serialization.

Configs are TOML files with dotted sections (mesh, spde, forward, mcmc,
...).  Every runner writes its artifacts plus a run manifest into an
output directory; identical config and seeds reproduce bit-identical
numeric output.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import time
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .chain import (
    ChainError,
    iact,
    ml_estimate,
    plan_allocation,
    run_single_level,
    run_two_level,
    subsample_rate,
)
from .darcy import ForwardSetup, Observation, make_forward_fn, make_synthetic_data
from .grid import LevelMesh, MeshSpec, build_hierarchy
from .noise import RngStreams, hierarchical_noise, hierarchical_noise_batch, single_level_noise
from .sampler import (
    SpdeConfig,
    decompose_realization,
    dense_covariance,
    sample_prior,
    solve_spde,
)
from .spaces import build_hierarchy_operators

KINDS = ("verify-covariance", "sample", "decompose", "timing", "mcmc-sl", "mcmc-ml")

OUTPUT_ROOT_ENV = "MLGRF_OUT"


class ConfigError(ValueError):
    pass


class VerificationError(RuntimeError):
    pass


@dataclass
class ExperimentConfig:
    kind: str
    mesh: MeshSpec
    spde: SpdeConfig
    lump_rt_mass: bool
    forward: dict
    mcmc: dict
    verify: dict
    sample: dict
    timing: dict
    out_dir: Path
    raw: dict
    config_hash: str

    def forward_setup(self, mesh: LevelMesh) -> ForwardSetup:
        pts = self.forward.get("observation_points")
        if pts is None:
            g = int(self.forward.get("observation_grid", 5))
            axes = [
                np.linspace(mesh.phys_min[a], mesh.phys_max[a], g + 2)[1:-1]
                for a in range(mesh.dim)
            ]
            mesh_pts = np.meshgrid(*axes, indexing="ij")
            pts = np.stack([m.reshape(-1) for m in mesh_pts], axis=-1).tolist()
        return ForwardSetup(
            observation_points=tuple(tuple(p) for p in pts),
            sigma_eta2=float(self.forward.get("sigma_eta2", 0.005)),
            p_inflow=float(self.forward.get("p_inflow", 1.0)),
            p_outflow=float(self.forward.get("p_outflow", 0.0)),
        )


def _require(table: dict, key: str, section: str):
    if key not in table:
        raise ConfigError(f"missing required config key {section}.{key}")
    return table[key]


def load_config(path, kind: str | None = None, out_dir=None) -> ExperimentConfig:
    path = Path(path)
    data = path.read_bytes()
    cfg = tomllib.loads(data.decode())

    kind = kind or cfg.get("kind")
    if kind not in KINDS:
        raise ConfigError(f"experiment kind must be one of {KINDS}, got {kind!r}")

    mesh_tab = _require(cfg, "mesh", "")
    dim = int(_require(mesh_tab, "dim", "mesh"))
    mesh = MeshSpec(
        dim=dim,
        domain_min=tuple(mesh_tab.get("domain_min", [0.0] * dim)),
        domain_max=tuple(mesh_tab.get("domain_max", [1.0] * dim)),
        coarse_cells=tuple(_require(mesh_tab, "coarse_cells", "mesh")),
        num_levels=int(_require(mesh_tab, "num_levels", "mesh")),
        pad_cells=int(mesh_tab.get("pad_cells", 0)),
    )

    spde_tab = cfg.get("spde", {})
    solver_kw = dict(
        tol=float(spde_tab.get("tol", 1e-10)),
        method=spde_tab.get("method", "lu"),
        maxiter=int(spde_tab.get("maxiter", 10000)),
    )
    if "kappa" in spde_tab or "g" in spde_tab:
        spde = SpdeConfig(
            kappa=float(_require(spde_tab, "kappa", "spde")),
            g=float(_require(spde_tab, "g", "spde")),
            **solver_kw,
        )
    else:
        spde = SpdeConfig.from_matern(
            sigma2=float(spde_tab.get("marginal_variance", 1.0)),
            lam=float(spde_tab.get("correlation_length", 0.3)),
            dim=max(dim, 2),
            **solver_kw,
        )

    mcmc = dict(cfg.get("mcmc", {}))
    if kind.startswith("mcmc") and "seed" not in mcmc:
        raise ConfigError("mcmc.seed is mandatory for mcmc experiment kinds")

    root = Path(os.environ.get(OUTPUT_ROOT_ENV, "."))
    out = Path(out_dir) if out_dir is not None else root / cfg.get("output", {}).get("dir", "out")

    return ExperimentConfig(
        kind=kind,
        mesh=mesh,
        spde=spde,
        lump_rt_mass=bool(spde_tab.get("lump_rt_mass", False)),
        forward=dict(cfg.get("forward", {})),
        mcmc=mcmc,
        verify=dict(cfg.get("verify", {})),
        sample=dict(cfg.get("sample", {})),
        timing=dict(cfg.get("timing", {})),
        out_dir=out,
        raw=cfg,
        config_hash=hashlib.sha256(data).hexdigest(),
    )


# -- serialization --------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)


def write_csv(path, header: list[str], rows) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def read_csv_column(path, column: str) -> np.ndarray:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if column not in header:
            raise ConfigError(f"column {column!r} not found in {path}")
        j = header.index(column)
        return np.array([float(line.strip().split(",")[j]) for line in fh if line.strip()])


def write_json(path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1, default=_json_default)
        fh.write("\n")


def _json_default(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(f"cannot serialize {type(v)}")


def write_field(path, mesh: LevelMesh, values: np.ndarray) -> None:
    """Field dump: header `level dim nx [ny [nz]]`, one value per line."""
    with open(path, "w") as fh:
        dims = " ".join(str(int(n)) for n in mesh.cells_per_dir)
        fh.write(f"{mesh.level} {mesh.dim} {dims}\n")
        for v in values:
            fh.write(f"{v:.17g}\n")


def read_field(path) -> tuple[int, int, tuple[int, ...], np.ndarray]:
    with open(path) as fh:
        head = fh.readline().split()
        level, dim = int(head[0]), int(head[1])
        cells = tuple(int(x) for x in head[2:])
        values = np.array([float(line) for line in fh if line.strip()])
    return level, dim, cells, values


class RunManifest:
    """Tracks artifacts and metrics for one run; written atomically."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.start = time.time()
        self.files: list[dict] = []
        self.summary: dict = {}

    def register(self, path: Path) -> None:
        digest = hashlib.sha256(Path(path).read_bytes()).hexdigest()
        self.files.append({"name": Path(path).name, "sha256": digest})

    def write(self) -> Path:
        out = self.cfg.out_dir / "manifest.json"
        payload = {
            "kind": self.cfg.kind,
            "config_hash": self.cfg.config_hash,
            "version": __version__,
            "start_time": self.start,
            "end_time": time.time(),
            "files": self.files,
            "summary": self.summary,
        }
        tmp = out.with_suffix(".json.tmp")
        write_json(tmp, payload)
        tmp.replace(out)
        return out

    def verify_files(self) -> bool:
        for entry in self.files:
            digest = hashlib.sha256((self.cfg.out_dir / entry["name"]).read_bytes()).hexdigest()
            if digest != entry["sha256"]:
                return False
        return True


# -- shared helpers -------------------------------------------------------


def build_problem(cfg: ExperimentConfig):
    meshes = build_hierarchy(cfg.mesh)
    ops, transfers = build_hierarchy_operators(meshes, lump_rt_mass=cfg.lump_rt_mass)
    return meshes, ops, transfers


def reference_operators(cfg: ExperimentConfig):
    """Operators on a mesh one refinement finer than level 0 (synthetic
    truth generation, inverse-crime guard)."""
    spec = cfg.mesh
    ref_spec = MeshSpec(
        dim=spec.dim,
        domain_min=spec.domain_min,
        domain_max=spec.domain_max,
        coarse_cells=spec.coarse_cells,
        num_levels=spec.num_levels + 1,
        pad_cells=spec.pad_cells,
    )
    ref_mesh = LevelMesh(ref_spec, 0)
    from .spaces import build_level_operators

    return build_level_operators(ref_mesh, lump_rt_mass=cfg.lump_rt_mass)


def covariance_se(target: np.ndarray, n: int) -> np.ndarray:
    """Standard error of empirical covariance entries of a Gaussian
    sample: SE_ij = sqrt((C_ii C_jj + C_ij^2)/N)."""
    d = np.diag(target)
    return np.sqrt((np.outer(d, d) + target**2) / n)


def max_se_multiple(emp: np.ndarray, target: np.ndarray, n: int) -> float:
    return float(np.max(np.abs(emp - target) / covariance_se(target, n)))


# -- experiment runners ---------------------------------------------------


def run_verify_covariance(cfg: ExperimentConfig) -> dict:
    """Empirical-covariance checks of the noise constructions and (dim>=2)
    of the GRF samples against the dense oracle."""
    meshes, ops, transfers = build_problem(cfg)
    n = int(cfg.verify.get("num_samples", 200_000))
    se_limit = float(cfg.verify.get("se_limit", 5.0))
    seed = int(cfg.verify.get("seed", 1))
    L = len(ops) - 1

    report: dict = {"num_samples": n, "se_limit": se_limit, "checks": []}

    def check(name, emp, target, nn):
        stat = max_se_multiple(emp, target, nn)
        ok = stat <= se_limit
        report["checks"].append({"name": name, "max_se_multiple": stat, "pass": bool(ok)})
        return ok

    # single-level noise at the finest level: Cov[b] = W
    streams = RngStreams(seed)
    W0 = np.diag(ops[0].W)
    b_sl = ops[0].W_sqrt[:, None] * streams.normal_matrix(0, (ops[0].num_elements, n))
    check("noise_single_level", np.cov(b_sl, bias=True), W0, n)

    # hierarchical noise down to the finest level
    b_ml = hierarchical_noise_batch(ops, transfers, streams, 0, n)
    check("noise_hierarchical", np.cov(b_ml, bias=True), W0, n)

    # deterministic coarse consistency on a handful of full draws
    worst = 0.0
    for _ in range(20):
        draws = hierarchical_noise(ops, transfers, streams, 0)
        by_level = {nv.level: nv for nv in draws}
        for l in range(L):
            lhs = transfers[l].P.T @ by_level[l].b
            worst = max(worst, float(np.abs(lhs - by_level[l + 1].b).max()))
    ok = worst <= 1e-12
    report["checks"].append(
        {"name": "coarse_consistency", "max_abs_error": worst, "pass": bool(ok)}
    )

    # GRF law (dense oracle) when RT operators exist and the size allows
    if ops[0].M is not None and ops[0].num_elements + ops[0].num_flux_dofs <= 5000:
        from .sampler import dense_schur

        C = dense_covariance(ops[0], cfg.spde)
        Ad = dense_schur(ops[0], cfg.spde)
        u_sl = np.linalg.solve(Ad, b_sl)
        check("grf_single_level", np.cov(u_sl, bias=True), C, n)
        u_ml = np.linalg.solve(Ad, b_ml)
        check("grf_hierarchical", np.cov(u_ml, bias=True), C, n)

    report["pass"] = all(c["pass"] for c in report["checks"])

    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(cfg)
    out = cfg.out_dir / "verify_covariance.json"
    write_json(out, report)
    manifest.register(out)
    manifest.summary = {
        "pass": report["pass"],
        "max_se_multiple": max(
            (c.get("max_se_multiple", 0.0) for c in report["checks"]), default=0.0
        ),
    }
    manifest.write()
    if not report["pass"]:
        raise VerificationError(f"covariance verification failed: {report['checks']}")
    return report


def run_sample(cfg: ExperimentConfig, hierarchical: bool) -> dict:
    """Generate field realizations (single-level or hierarchical) and dump
    them in the field format."""
    meshes, ops, transfers = build_problem(cfg)
    level = int(cfg.sample.get("level", 0))
    count = int(cfg.sample.get("num_fields", 4))
    streams = RngStreams(int(cfg.sample.get("seed", 1)))

    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(cfg)
    files = []
    for i in range(count):
        if hierarchical:
            b = hierarchical_noise(ops, transfers, streams, level)[-1]
            real = solve_spde(ops[level], cfg.spde, b)
        else:
            real = sample_prior(ops[level], cfg.spde, streams)
        path = cfg.out_dir / f"field_{i:04d}.txt"
        write_field(path, meshes[level], real.u)
        manifest.register(path)
        files.append(str(path))
    manifest.summary = {"num_fields": count, "level": level, "hierarchical": hierarchical}
    manifest.write()
    return {"files": files}


def run_decompose(cfg: ExperimentConfig) -> dict:
    """Hierarchical draw at the finest level, split into per-level field
    components."""
    meshes, ops, transfers = build_problem(cfg)
    streams = RngStreams(int(cfg.sample.get("seed", 1)))
    b = hierarchical_noise(ops, transfers, streams, 0)[-1]
    real = solve_spde(ops[0], cfg.spde, b)
    comps = decompose_realization(real, transfers, ops, cfg.spde, streams)

    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(cfg)
    path = cfg.out_dir / "field_total.txt"
    write_field(path, meshes[0], real.u)
    manifest.register(path)
    total = np.zeros_like(real.u)
    for level, u_comp in comps:
        path = cfg.out_dir / f"component_level{level}.txt"
        write_field(path, meshes[0], u_comp)
        manifest.register(path)
        total += u_comp
    err = float(np.abs(total - real.u).max())
    manifest.summary = {"component_sum_error": err, "levels": [l for l, _ in comps]}
    manifest.write()
    return {"component_sum_error": err}


def run_timing(cfg: ExperimentConfig) -> dict:
    """Seconds per level to generate a batch of realizations."""
    meshes, ops, transfers = build_problem(cfg)
    count = int(cfg.timing.get("num_fields", 50))
    streams = RngStreams(int(cfg.timing.get("seed", 1)))

    rows = []
    for level in range(len(ops)):
        if ops[level].M is None:
            continue
        t0 = time.perf_counter()
        checksum = 0.0
        for _ in range(count):
            real = sample_prior(ops[level], cfg.spde, streams)
            checksum += float(real.u[0])
        dt = time.perf_counter() - t0
        rows.append((level, ops[level].num_elements, count, dt, checksum))

    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(cfg)
    path = cfg.out_dir / "timing.csv"
    write_csv(path, ["level", "elements", "samples", "seconds", "checksum"], rows)
    manifest.register(path)
    ratios = {}
    if count > 0 and len(rows) > 1:
        finest = rows[0][3]
        for row in rows[1:]:
            ratios[f"level{row[0]}_vs_finest"] = row[3] / finest if finest > 0 else math.nan
    manifest.summary = {"ratios": ratios}
    manifest.write()
    return {"rows": rows, "ratios": ratios}


def _chain_csv(path, rec, level: int, beta: float):
    rows = [
        (i + 1, level, q, ll, int(acc), beta)
        for i, (q, ll, acc) in enumerate(zip(rec.qoi, rec.log_like, rec.accepted))
    ]
    write_csv(path, ["step", "level", "Q", "log_like", "accepted", "beta"], rows)


def _forwards(cfg: ExperimentConfig, meshes, obs: Observation, setup: ForwardSetup):
    flat = bool(cfg.mcmc.get("flat_likelihood", False))
    fns = []
    for mesh in meshes:
        base = make_forward_fn(mesh, setup, obs.p_obs)
        if flat:
            def fn(u, _base=base):
                _, qoi = _base(u)
                return 0.0, qoi
            fns.append(fn)
        else:
            fns.append(base)
    return fns


def _timed(fn):
    """Wrap a forward so each call's wall time is accumulated."""
    stats = {"calls": 0, "seconds": 0.0}

    def wrapped(u):
        t0 = time.perf_counter()
        out = fn(u)
        stats["seconds"] += time.perf_counter() - t0
        stats["calls"] += 1
        return out

    return wrapped, stats


def _level_cost(cfg: ExperimentConfig, ops, stats) -> float:
    if cfg.mcmc.get("cost_model", "measured") == "dofs":
        return float(ops.num_elements + ops.num_flux_dofs)
    if stats["calls"] == 0:
        return math.nan
    return stats["seconds"] / stats["calls"]


def run_mcmc_sl(cfg: ExperimentConfig) -> dict:
    """Single-level pCN MCMC at the finest level with pilot-based
    subsampling."""
    meshes, ops, transfers = build_problem(cfg)
    streams = RngStreams(int(cfg.mcmc["seed"]))
    beta = math.sqrt(float(cfg.mcmc.get("beta2", 0.3)))
    pilot_steps = int(cfg.mcmc.get("pilot_steps", 2000))
    main_steps = int(cfg.mcmc.get("main_steps", 2000))

    ref_ops = reference_operators(cfg)
    setup = cfg.forward_setup(meshes[0])
    obs = make_synthetic_data(ref_ops, cfg.spde, setup, streams)
    forward = _forwards(cfg, meshes[:1], obs, setup)[0]

    pilot, state = run_single_level(ops[0], cfg.spde, forward, beta, pilot_steps, streams)
    t0 = subsample_rate(pilot.qoi)
    t_cap = cfg.mcmc.get("max_subsample")
    if t_cap is not None:
        t0 = min(t0, int(t_cap))
    burn = 2 * t0
    rec, _ = run_single_level(ops[0], cfg.spde, forward, beta, main_steps, streams, state=state)

    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(cfg)
    path = cfg.out_dir / "chain_sl.csv"
    _chain_csv(path, rec, 0, beta)
    manifest.register(path)
    obs_path = cfg.out_dir / "observation.json"
    obs.to_json(obs_path)
    manifest.register(obs_path)

    tau, window = iact(rec.qoi)
    q = np.asarray(rec.qoi)
    summary = {
        "acceptance_rate": rec.acceptance_rate,
        "tau_hat": tau,
        "window": window,
        "subsample_rate": t0,
        "burn_in": burn,
        "posterior_mean_Q": float(np.mean(q[burn:][:: max(1, t0)])),
        "truth_qoi": obs.truth_qoi,
    }
    manifest.summary = summary
    spath = cfg.out_dir / "summary_sl.json"
    write_json(spath, summary)
    manifest.register(spath)
    manifest.write()
    return summary


def run_mlmcmc(cfg: ExperimentConfig) -> dict:
    """Three-stage multilevel MCMC: pilots for IACT/cost, two-level Y
    chains per level pair, allocation plan, and the multilevel estimate."""
    meshes, ops, transfers = build_problem(cfg)
    L = len(ops) - 1
    if L < 1:
        raise ConfigError("mcmc-ml requires at least two levels")
    streams = RngStreams(int(cfg.mcmc["seed"]))
    beta = math.sqrt(float(cfg.mcmc.get("beta2", 0.3)))
    pilot_steps = int(cfg.mcmc.get("pilot_steps", 2000))
    main_steps = int(cfg.mcmc.get("main_steps", 2000))
    eps = float(cfg.mcmc.get("target_eps", 0.05))
    # optional ceiling on pilot-derived subsampling rates; short pilot
    # chains can badly overestimate the IACT and blow up the run cost
    t_cap = cfg.mcmc.get("max_subsample")
    cap = (lambda t: min(t, int(t_cap))) if t_cap is not None else (lambda t: t)

    ref_ops = reference_operators(cfg)
    setup = cfg.forward_setup(meshes[0])
    obs = make_synthetic_data(ref_ops, cfg.spde, setup, streams)
    forwards = _forwards(cfg, meshes, obs, setup)
    timed = [_timed(f) for f in forwards]
    forwards = [t[0] for t in timed]
    stats = [t[1] for t in timed]

    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(cfg)
    obs_path = cfg.out_dir / "observation.json"
    obs.to_json(obs_path)
    manifest.register(obs_path)

    # pilot single-level chains: coarse subsampling rates t_l and the
    # per-level acceptance/IACT references
    t_rate = [0] * (L + 1)
    accept = {}
    sl_records = {}
    for level in range(L, 0, -1):
        rec, state = run_single_level(
            ops[level], cfg.spde, forwards[level], beta, pilot_steps, streams
        )
        sl_records[level] = (rec, state)
        t_rate[level] = cap(subsample_rate(rec.qoi))
        if level == L:
            accept[level] = rec.acceptance_rate

    # two-level correction chains, coarse-to-fine
    y_series: list[np.ndarray | None] = [None] * L
    q_series: dict[int, np.ndarray] = {L: np.asarray(sl_records[L][0].qoi)}
    for level in range(L - 1, -1, -1):
        # warm-start the coarse chain from its equilibrated pilot state;
        # the fine chain is then initialized by conditional coupling
        rec, ys, _, _ = run_two_level(
            ops[level], transfers[level], cfg.spde, forwards[level],
            ops[level + 1], forwards[level + 1], beta, t_rate[level + 1],
            main_steps, streams, coarse_state=sl_records[level + 1][1],
        )
        y_series[level] = np.asarray(ys)
        q_series[level] = np.asarray(rec.qoi)
        accept[level] = rec.acceptance_rate
        t_rate[level] = cap(subsample_rate(ys))
        path = cfg.out_dir / f"chain_y{level}.csv"
        rows = [
            (i + 1, level, q, ll, int(acc), beta, y)
            for i, (q, ll, acc, y) in enumerate(
                zip(rec.qoi, rec.log_like, rec.accepted, ys)
            )
        ]
        write_csv(path, ["step", "level", "Q", "log_like", "accepted", "beta", "Y"], rows)
        manifest.register(path)

    path = cfg.out_dir / f"chain_q{L}.csv"
    _chain_csv(path, sl_records[L][0], L, beta)
    manifest.register(path)

    # diagnostics tables; an initial transient would bias both the IACT
    # and the variance, so trim 2x the (full-series) IACT before reporting
    def trimmed(series):
        burn_n = min(int(2 * math.ceil(iact(series)[0])), len(series) // 4)
        return series[burn_n:]

    tau_table = {}
    var_table = {}
    for level in range(L + 1):
        series = trimmed(y_series[level] if level < L else q_series[L])
        name = f"Y{level}" if level < L else f"Q{L}"
        tau_table[name] = iact(series)[0]
        var_table[name] = float(np.var(series))
    for level in range(L + 1):
        series = trimmed(q_series[level])
        var_table[f"Q{level}"] = float(np.var(series))
        tau_table[f"Q{level}"] = iact(series)[0]

    variance = np.array([var_table[f"Y{l}"] for l in range(L)] + [var_table[f"Q{L}"]])
    cost = np.array([_level_cost(cfg, ops[l], stats[l]) for l in range(L + 1)])
    plan = plan_allocation(variance, cost, np.array(t_rate, dtype=float), eps)

    burn = [2 * t for t in t_rate]
    estimate = ml_estimate(
        q_series[L], [y_series[l] for l in range(L)], t_rate, burn
    )

    # single-level reference cost at the same accuracy
    sl_cost = (2.0 * var_table["Q0"] / eps**2) * tau_table["Q0"] * cost[0]
    cost_ratio = plan.total_cost / sl_cost if sl_cost > 0 else math.nan

    rows = [
        (
            l,
            variance[l],
            cost[l],
            t_rate[l],
            plan.cost_eff[l],
            plan.n_eff[l],
            plan.n_total[l],
        )
        for l in range(L + 1)
    ]
    path = cfg.out_dir / "plan.csv"
    write_csv(path, ["level", "variance", "cost", "t", "cost_eff", "n_eff", "n_total"], rows)
    manifest.register(path)

    summary = {
        "estimate": estimate,
        "truth_qoi": obs.truth_qoi,
        "acceptance_rates": {str(k): v for k, v in sorted(accept.items())},
        "iact": tau_table,
        "variance": var_table,
        "subsample_rates": t_rate,
        "plan_total_cost": plan.total_cost,
        "single_level_cost": sl_cost,
        "cost_ratio_ml_vs_sl": cost_ratio,
        "target_eps": eps,
    }
    spath = cfg.out_dir / "summary_ml.json"
    write_json(spath, summary)
    manifest.register(spath)
    manifest.summary = {"estimate": estimate, "cost_ratio": cost_ratio}
    manifest.write()
    return summary


def run_iact_file(path, column: str = "Q") -> dict:
    series = read_csv_column(path, column)
    tau, window = iact(series)
    return {"tau_hat": tau, "window": window, "subsample_rate": max(1, math.ceil(tau))}
