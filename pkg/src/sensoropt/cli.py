"""Command-line pipelines: build a model bundle, then solve, certify,
continue to binary designs, enumerate, baseline and map variance fields.

Every output embeds the config hash and seed; CSV numerics are written at 17
significant digits so re-runs are bit-identical.  Exit codes: 0 success,
2 config error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from dataclasses import dataclass, field
from math import comb
from pathlib import Path

import numpy as np

from . import aoptimal, lowrank, model, oracle, solve
from .optimality import verify_global


class ConfigError(Exception):
    pass


class NumericalFailure(Exception):
    pass


def _canonical(cfg: dict) -> str:
    return json.dumps(cfg, sort_keys=True, separators=(",", ":"))


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(_canonical(cfg).encode()).hexdigest()[:16]


def _require(cfg: dict, key: str, kind, what: str):
    if key not in cfg:
        raise ConfigError(f"missing config field '{key}' ({what})")
    value = cfg[key]
    if kind is float and isinstance(value, int):
        value = float(value)
    if not isinstance(value, kind):
        raise ConfigError(
            f"config field '{key}' must be {what}, got {type(value).__name__}")
    return value


DEFAULTS = {
    "alpha": 0.01125,
    "beta": None,
    "source_radius": 0.2,
    "noise": {"fraction": 0.01, "samples": 1000, "via_prior": False},
    "qr": {"method": "exact", "rank": None, "q": 2, "drop_tol": 1e-6},
    "export_dense": True,
}


@dataclass
class ModelPack:
    kind: str
    fmap: model.LinearMap
    prior: object
    noise: model.DiagonalNoise
    precond: model.LinearMap
    m: int
    m_obs: int
    helmholtz: model.HelmholtzModel | None = None
    extras: dict = field(default_factory=dict)


def build_from_config(cfg: dict) -> ModelPack:
    kind = _require(cfg, "kind", str, "'helmholtz' or 'synthetic'")
    seed = int(cfg.get("seed", 0))
    if kind == "helmholtz":
        n_grid = _require(cfg, "grid", int, "nodes per side")
        wavenumbers = _require(cfg, "wavenumbers", list, "list of wavenumbers")
        rings_cfg = _require(cfg, "sensor_rings", list,
                             "list of {radius, count}")
        rings = []
        for ring in rings_cfg:
            rings.append((float(_require(ring, "radius", (int, float),
                                         "ring radius")),
                          int(_require(ring, "count", int, "sensor count"))))
        alpha = float(cfg.get("alpha", DEFAULTS["alpha"]))
        beta = cfg.get("beta", None)
        try:
            hm = model.HelmholtzModel(
                n_grid, [float(k) for k in wavenumbers],
                source_radius=float(cfg.get("source_radius",
                                            DEFAULTS["source_radius"])),
                sensor_rings=rings)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        prior = model.GridPrior(hm.source_idx, hm.n_grid, hm.h,
                                alpha=alpha,
                                beta=float(beta) if beta is not None else None)
        fmap = model.build_forward_stack(hm)
        ncfg = {**DEFAULTS["noise"], **cfg.get("noise", {})}
        unit_noise = model.DiagonalNoise.uniform(1.0, fmap.n_out)
        unit_precond = model.preconditioned_operator(fmap, prior, unit_noise)
        sigma2 = model.calibrate_noise(
            unit_precond if not ncfg["via_prior"] else fmap,
            n_samples=int(ncfg["samples"]), fraction=float(ncfg["fraction"]),
            rng_seed=seed, prior=prior if ncfg["via_prior"] else None)
        if sigma2 <= 0:
            raise NumericalFailure("noise calibration returned zero variance")
        noise = model.DiagonalNoise.uniform(float(np.sqrt(sigma2)),
                                            fmap.n_out)
        precond = model.preconditioned_operator(fmap, prior, noise)
        return ModelPack(kind, fmap, prior, noise, precond, hm.m, hm.m_obs,
                         helmholtz=hm,
                         extras={"sigma2": float(sigma2),
                                 "snapped_sensors": hm.sensor_xy.tolist()})
    if kind == "synthetic":
        n = _require(cfg, "n", int, "discretisation dimension")
        m = _require(cfg, "m", int, "number of candidate sensors")
        m_obs = int(cfg.get("m_obs", 1))
        bundle = model.synthetic_bundle(n, m, m_obs, seed=seed,
                                        noise_level=float(
                                            cfg.get("noise_level", 1.0)))
        return ModelPack(kind, bundle.forward, bundle.prior, bundle.noise,
                         bundle.precond, m, m_obs,
                         extras={"fb": bundle.fb})
    raise ConfigError(f"unknown model kind '{kind}'")


def _write_csv(path: Path, array, meta: dict):
    header = "meta " + _canonical(meta)
    np.savetxt(path, np.atleast_2d(np.asarray(array, dtype=float)),
               delimiter=",", fmt="%.17g", header=header)


def _write_json(path: Path, payload: dict):
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def cmd_build(config_path: str, out_dir: str) -> dict:
    try:
        cfg = json.loads(Path(config_path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {config_path}: {exc}") from exc
    chash = config_hash(cfg)
    seed = int(cfg.get("seed", 0))
    t0 = time.perf_counter()
    pack = build_from_config(cfg)
    qr_cfg = {**DEFAULTS["qr"], **cfg.get("qr", {})}

    ft_op = model.LinearMap(pack.precond.n_out, pack.precond.n_in,
                            pack.precond.apply_adjoint, pack.precond.apply)
    if qr_cfg["method"] == "exact":
        ft_dense = model.to_dense(ft_op)
        qrm = lowrank.exact_qr(ft_dense, m=pack.m, m_obs=pack.m_obs)
    elif qr_cfg["method"] == "randomized":
        rank = qr_cfg.get("rank") or min(ft_op.n_out, ft_op.n_in)
        qrm = lowrank.randomized_qr(ft_op, int(rank), q=int(qr_cfg["q"]),
                                    rng_seed=seed,
                                    drop_tol=qr_cfg.get("drop_tol"),
                                    m=pack.m, m_obs=pack.m_obs)
    else:
        raise ConfigError(
            f"config field 'qr.method' must be 'exact' or 'randomized', "
            f"got '{qr_cfg['method']}'")
    obj = aoptimal.assemble(qrm, pack.prior)
    build_time = time.perf_counter() - t0

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    meta = {"config_hash": chash, "seed": seed}
    _write_csv(out / "R.csv", qrm.R, meta)
    _write_csv(out / "Q.csv", qrm.Q, meta)
    _write_csv(out / "Chat.csv", obj.Chat, meta)
    _write_csv(out / "mass.csv", pack.prior.mass_diag, meta)
    if cfg.get("export_dense", DEFAULTS["export_dense"]):
        _write_csv(out / "F_dense.csv", model.to_dense(pack.precond), meta)
        if pack.prior.n <= 500:  # the dense oracle's own cap
            _write_csv(out / "C0_dense.csv",
                       pack.prior.c0_apply(np.eye(pack.prior.n)), meta)
    if pack.helmholtz is not None:
        _write_csv(out / "sensors.csv", pack.helmholtz.sensor_xy, meta)
        _write_csv(out / "source_nodes.csv",
                   pack.helmholtz.xy[pack.helmholtz.source_idx], meta)
    header = {
        "config": cfg,
        "config_hash": chash,
        "seed": seed,
        "kind": pack.kind,
        "n": int(qrm.n),
        "m": int(pack.m),
        "m_obs": int(pack.m_obs),
        "ell": int(qrm.ell),
        "trace_C0": float(pack.prior.trace_C0),
        "trace_Chat": float(obj.trace_Chat),
        "qr_residual_estimate": float(qrm.residual_estimate),
        "model_hash": hashlib.sha256(
            qrm.R.tobytes() + obj.Chat.tobytes()).hexdigest()[:16],
        "build_seconds": build_time,
    }
    if "sigma2" in pack.extras:
        header["sigma2"] = pack.extras["sigma2"]
    _write_json(out / "header.json", header)
    return header


@dataclass
class ExperimentRecord:
    """Everything needed to audit or replay a bundle's experiments."""

    config: dict
    config_hash: str
    seed: int
    model_hash: str
    results: dict        # per-m0 solve/continue/verify/baseline payloads
    traces: dict         # per-m0 solver trace arrays
    timings: dict

    @classmethod
    def from_dir(cls, directory) -> "ExperimentRecord":
        path = Path(directory)
        header = json.loads((path / "header.json").read_text())
        results: dict = {}
        timings = {"build_seconds": header.get("build_seconds")}
        for record_path in sorted(path.glob("*_m0=*.json")):
            kind, m0 = record_path.stem.split("_m0=")
            payload = json.loads(record_path.read_text())
            results.setdefault(int(m0), {})[kind] = payload
            if "wall_seconds" in payload:
                timings[record_path.stem] = payload["wall_seconds"]
        traces = {}
        for trace_path in sorted(path.glob("solve_trace_m0=*.csv")):
            m0 = int(trace_path.stem.split("=")[1])
            traces[m0] = np.loadtxt(trace_path, delimiter=",", ndmin=2)
        return cls(header["config"], header["config_hash"],
                   int(header["seed"]), header["model_hash"],
                   results, traces, timings)


@dataclass
class Bundle:
    header: dict
    obj: aoptimal.LowRankObjective
    qrm: lowrank.QRModel
    path: Path

    @property
    def meta(self) -> dict:
        return {"config_hash": self.header["config_hash"],
                "seed": self.header["seed"]}

    def rebuild_pack(self) -> ModelPack:
        return build_from_config(self.header["config"])


def load_bundle(directory: str) -> Bundle:
    path = Path(directory)
    header_path = path / "header.json"
    if not header_path.exists():
        raise ConfigError(f"missing bundle: {header_path} not found")
    header = json.loads(header_path.read_text())
    r_mat = np.loadtxt(path / "R.csv", delimiter=",", ndmin=2)
    q_mat = np.loadtxt(path / "Q.csv", delimiter=",", ndmin=2)
    chat = np.loadtxt(path / "Chat.csv", delimiter=",", ndmin=2)
    ell = int(header["ell"])
    lam, vec = np.linalg.eigh(chat)
    lam = np.clip(lam, 0.0, None)
    chat_half = np.sqrt(lam)[:, None] * vec.T
    obj = aoptimal.LowRankObjective(
        r_mat, chat, chat_half, float(header["trace_C0"]),
        float(np.sum(lam)), int(header["m"]), int(header["m_obs"]), ell)
    qrm = lowrank.QRModel(q_mat, r_mat, ell,
                          float(header["qr_residual_estimate"]),
                          int(header["m"]), int(header["m_obs"]))
    return Bundle(header, obj, qrm, path)


def _load_design(path: str, m: int) -> aoptimal.Design:
    try:
        payload = json.loads(Path(path).read_text())
        w = np.asarray(payload["w"], dtype=float)
        m0 = int(payload["m0"])
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise ConfigError(f"cannot read design file {path}: {exc}") from exc
    if w.size != m:
        raise ConfigError(
            f"design file has {w.size} weights, bundle expects {m}")
    try:
        return aoptimal.Design(w, m0)
    except ValueError as exc:
        raise ConfigError(f"infeasible design: {exc}") from exc


def _gradient_table(bundle: Bundle, w, grad, report) -> np.ndarray:
    order = np.argsort(grad, kind="stable")
    cls = report.classification
    label = np.zeros(bundle.obj.m)
    label[cls.dominant] = 1.0
    label[cls.redundant] = -1.0
    return np.column_stack([np.arange(1, bundle.obj.m + 1), order,
                            grad[order], np.asarray(w)[order], label[order]])


def cmd_solve(bundle_dir: str, m0: int, out_dir: str | None,
              tol: float | None) -> dict:
    bundle = load_bundle(bundle_dir)
    if m0 > bundle.obj.m:
        raise ConfigError(f"m0 = {m0} exceeds m = {bundle.obj.m}")
    cfg = solve.SolverConfig()
    if tol is not None:
        cfg.gap_tol = tol
    t0 = time.perf_counter()
    res = solve.solve_convex(bundle.obj, m0, cfg)
    elapsed = time.perf_counter() - t0
    out = Path(out_dir) if out_dir else bundle.path
    out.mkdir(parents=True, exist_ok=True)
    record = {
        **bundle.meta,
        "m0": m0,
        "J": res.objective,
        "w": res.design.w.tolist(),
        "report": res.report.to_dict(),
        "converged": bool(res.converged),
        "iterations": int(res.iterations),
        "gap_tol": cfg.gap_tol,
        "wall_seconds": elapsed,
    }
    _write_json(out / f"solve_m0={m0}.json", record)
    _write_csv(out / f"gradient_table_m0={m0}.csv",
               _gradient_table(bundle, res.design.w, res.grad, res.report),
               {**bundle.meta, "m0": m0,
                "columns": "rank,sensor,gradient,w,label(1=dom,-1=red)"})
    _write_csv(out / f"solve_trace_m0={m0}.csv",
               np.asarray(res.trace, dtype=float),
               {**bundle.meta, "m0": m0, "columns": "iter,J,fw_gap,step"})
    if not res.converged:
        raise NumericalFailure(
            f"solver stopped with gap above tolerance; see solve_m0={m0}.json")
    return record


def cmd_continue(bundle_dir: str, m0: int, delta: float,
                 out_dir: str | None, tol: float | None) -> dict:
    bundle = load_bundle(bundle_dir)
    if m0 > bundle.obj.m:
        raise ConfigError(f"m0 = {m0} exceeds m = {bundle.obj.m}")
    cfg = solve.SolverConfig()
    if tol is not None:
        cfg.gap_tol = tol
    t0 = time.perf_counter()
    res = solve.p_continuation(bundle.obj, m0, delta, cfg)
    elapsed = time.perf_counter() - t0
    out = Path(out_dir) if out_dir else bundle.path
    out.mkdir(parents=True, exist_ok=True)
    j_binary = aoptimal.objective(bundle.obj, res.design)
    record = {
        **bundle.meta,
        "m0": m0,
        "delta": delta,
        "binary": bool(res.binary),
        "p_final": res.p_final,
        "J_binary": j_binary,
        "J_convex": res.convex.objective,
        "w": res.design.w.tolist(),
        "classification": res.classification.to_dict(),
        "wall_seconds": elapsed,
    }
    _write_json(out / f"continue_m0={m0}.json", record)
    pseq = np.column_stack([[p for p, _ in res.trace],
                            np.vstack([w for _, w in res.trace])])
    _write_csv(out / f"pseq_m0={m0}.csv", pseq,
               {**bundle.meta, "m0": m0, "columns": "p,w_1..w_m"})
    if not res.binary:
        raise NumericalFailure("continuation returned a non-binary design")
    return record


def cmd_verify(bundle_dir: str, design_path: str, out_dir: str | None,
               tol: float | None) -> dict:
    bundle = load_bundle(bundle_dir)
    design = _load_design(design_path, bundle.obj.m)
    grad = aoptimal.gradient(bundle.obj, design)
    try:
        report = verify_global(design.w, grad, design.m0,
                               tol=tol if tol is not None else 1e-6)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    record = {**bundle.meta, "m0": design.m0,
              "J": aoptimal.objective(bundle.obj, design),
              "report": report.to_dict()}
    out = Path(out_dir) if out_dir else bundle.path
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / f"verify_m0={design.m0}.json", record)
    return record


def cmd_oracle(bundle_dir: str, m0: int, out_dir: str | None) -> dict:
    bundle = load_bundle(bundle_dir)
    if comb(bundle.obj.m, m0) > 10**6:
        raise ConfigError(
            f"C({bundle.obj.m},{m0}) exceeds the enumeration limit")
    table = oracle.enumerate_binary(bundle.obj, m0)
    out = Path(out_dir) if out_dir else bundle.path
    out.mkdir(parents=True, exist_ok=True)
    rows = np.column_stack([
        table.values,
        np.array([[1.0 if i in d else 0.0 for i in range(table.m)]
                  for d in table.designs]),
    ])
    _write_csv(out / f"oracle_m0={m0}.csv", rows,
               {**bundle.meta, "m0": m0, "columns": "J,w_1..w_m"})
    record = {**bundle.meta, "m0": m0, "rows": len(table.designs),
              "best_value": table.best_value,
              "best_design": [int(i) for i in table.best_design],
              "best_leq_value": table.best_leq_value}
    _write_json(out / f"oracle_m0={m0}.json", record)
    return record


def cmd_baseline(bundle_dir: str, m0: int, count: int, seed: int,
                 out_dir: str | None, design_path: str | None) -> dict:
    bundle = load_bundle(bundle_dir)
    sample = oracle.random_designs(bundle.obj, m0, count, rng_seed=seed)
    record = {
        **bundle.meta,
        "m0": m0,
        "count": count,
        "sample_seed": seed,
        "min": sample.min,
        "max": sample.max,
        "mean": sample.mean,
        "quantiles": sample.quantiles,
    }
    if design_path is not None:
        design = _load_design(design_path, bundle.obj.m)
        j_design = aoptimal.objective(bundle.obj, design)
        record["design_J"] = j_design
        record["fraction_beaten"] = sample.fraction_above(j_design)
    out = Path(out_dir) if out_dir else bundle.path
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / f"baseline_m0={m0}.json", record)
    _write_csv(out / f"baseline_m0={m0}.csv", sample.values[:, None],
               {**bundle.meta, "m0": m0, "sample_seed": seed, "columns": "J"})
    return record


def cmd_variance(bundle_dir: str, design_path: str,
                 out_dir: str | None) -> dict:
    bundle = load_bundle(bundle_dir)
    design = _load_design(design_path, bundle.obj.m)
    pack = bundle.rebuild_pack()
    var = aoptimal.posterior_pointwise_variance(bundle.obj, bundle.qrm,
                                                pack.prior, design)
    out = Path(out_dir) if out_dir else bundle.path
    out.mkdir(parents=True, exist_ok=True)
    if pack.helmholtz is not None:
        xy = pack.helmholtz.xy[pack.helmholtz.source_idx]
        rows = np.column_stack([xy, var])
        columns = "x,y,variance"
    else:
        rows = np.column_stack([np.arange(var.size), var])
        columns = "dof,variance"
    _write_csv(out / f"variance_m0={design.m0}.csv", rows,
               {**bundle.meta, "m0": design.m0, "columns": columns})
    record = {**bundle.meta, "m0": design.m0,
              "mass_weighted_sum": float(var @ pack.prior.mass_diag),
              "J": aoptimal.objective(bundle.obj, design)}
    _write_json(out / f"variance_m0={design.m0}.json", record)
    return record


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sensoropt",
        description="A-optimal sensor placement toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p_build = sub.add_parser("build", help="build a model bundle from JSON")
    p_build.add_argument("--config", required=True)
    p_build.add_argument("--out-dir", required=True)

    def common(p, need_m0=True):
        p.add_argument("--bundle", required=True)
        if need_m0:
            p.add_argument("--m0", type=int, required=True)
        p.add_argument("--out-dir", default=None)
        p.add_argument("--tol", type=float, default=None)

    p_solve = sub.add_parser("solve", help="solve the 1-relaxed problem")
    common(p_solve)
    p_cont = sub.add_parser("continue", help="run the p-continuation")
    common(p_cont)
    p_cont.add_argument("--delta", type=float, default=0.05)
    p_verify = sub.add_parser("verify", help="certify a design file")
    common(p_verify, need_m0=False)
    p_verify.add_argument("--design", required=True)
    p_oracle = sub.add_parser("oracle", help="exhaustive binary enumeration")
    common(p_oracle)
    p_base = sub.add_parser("baseline", help="random-design baseline")
    common(p_base)
    p_base.add_argument("--count", type=int, default=1000)
    p_base.add_argument("--seed", type=int, default=0)
    p_base.add_argument("--design", default=None)
    p_var = sub.add_parser("variance", help="pointwise variance field")
    common(p_var, need_m0=False)
    p_var.add_argument("--design", required=True)
    return parser


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "build":
            cmd_build(args.config, args.out_dir)
        elif args.command == "solve":
            cmd_solve(args.bundle, args.m0, args.out_dir, args.tol)
        elif args.command == "continue":
            cmd_continue(args.bundle, args.m0, args.delta, args.out_dir,
                         args.tol)
        elif args.command == "verify":
            cmd_verify(args.bundle, args.design, args.out_dir, args.tol)
        elif args.command == "oracle":
            cmd_oracle(args.bundle, args.m0, args.out_dir)
        elif args.command == "baseline":
            cmd_baseline(args.bundle, args.m0, args.count, args.seed,
                         args.out_dir, args.design)
        elif args.command == "variance":
            cmd_variance(args.bundle, args.design, args.out_dir)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
