"""Batch command-line pipeline: generate -> simulate -> train -> place -> compare.

Configuration is a strict JSON document (unknown keys are rejected); every
command is deterministic for a fixed config and seed.  Exit codes are a
stable contract:

    0 success, 1 usage/config, 2 I/O, 3 solver, 4 training,
    5 infeasible placement, 6 comparison.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from . import fdsolver, physics, placement, training
from .errors import (ConfigError, InfeasibleError, ThermoplaceError)
from .fdsolver import GridSpec
from .net import NetSpec
from .physics import PhysicsSpec
from .placement import PlacementConfig
from .training import TrainConfig

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_SOLVER = 3
EXIT_TRAINING = 4
EXIT_INFEASIBLE = 5
EXIT_COMPARE = 6

COMPARE_DEFAULT_TIMES = {1: (15.0, 30.0, 50.0, 65.0, 80.0), 2: (10.0, 50.0, 80.0)}


@dataclass(frozen=True)
class NetConfig:
    hidden_layers: int = 4
    hidden_width: int = 50


@dataclass(frozen=True)
class PlacementRunConfig:
    """Placement constraints plus the candidate-grid layout.

    ``margin`` of the candidate region defaults to the pairwise distance d
    (the two roles share one value unless overridden).
    """

    n_min: int = 5
    n_max: int = 10
    d: float = 0.05
    d1: float = 0.2
    big_m: float = 1000.0
    signed_costs: bool = False
    grid_nx: int = 37
    grid_ny: int = 1
    margin: float | None = None

    def constraints(self) -> PlacementConfig:
        return PlacementConfig(n_min=self.n_min, n_max=self.n_max, d=self.d,
                               d1=self.d1, big_m=self.big_m,
                               signed_costs=self.signed_costs)

    def effective_margin(self) -> float:
        return self.d if self.margin is None else self.margin


@dataclass(frozen=True)
class RunConfig:
    physics: PhysicsSpec
    grid: GridSpec
    net: NetConfig
    train: TrainConfig
    placement: PlacementRunConfig
    horizon: float
    drive_csv: str | None
    out_dir: str

    def net_spec(self) -> NetSpec:
        return NetSpec(input_dim=training.input_dim(self.physics.dim),
                       hidden_layers=self.net.hidden_layers,
                       hidden_width=self.net.hidden_width)


def default_config(dim: int = 1, desk: bool = False, out_dir: str = "out") -> RunConfig:
    """Full-scale defaults, or the desk-scale profile that runs in minutes."""
    spec = physics.default_spec(dim)
    if desk:
        horizon = 24.0
        grid = GridSpec(nx=201 if dim == 1 else 61, nt=int(10 * horizon),
                        t_end=horizon)
        net = NetConfig(hidden_layers=4, hidden_width=20)
        train_cfg = training.desk_config(dim)
    else:
        horizon = 100.0
        grid = GridSpec(nx=201 if dim == 1 else 101, nt=int(10 * horizon),
                        t_end=horizon)
        net = NetConfig(hidden_layers=4, hidden_width=50)
        train_cfg = TrainConfig(
            n_u=100 if dim == 1 else 20200,
            n_f=20000 if dim == 1 else 40400,
            adam_epochs=10000,
            adam_lr=1e-6 if dim == 1 else 1e-4,
            lbfgs_epochs=10000,
            lbfgs_tolerance=1e-6 if dim == 1 else 1e-3,
            seed=1,
        )
    place_cfg = PlacementRunConfig(grid_nx=37 if dim == 1 else 15,
                                   grid_ny=1 if dim == 1 else 15)
    return RunConfig(physics=spec, grid=grid, net=net, train=train_cfg,
                     placement=place_cfg, horizon=horizon, drive_csv=None,
                     out_dir=out_dir)


def _build_section(cls, doc: dict, where: str, **fixed):
    known = {f.name for f in fields(cls)} - set(fixed)
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown keys {sorted(unknown)} in {where}")
    try:
        return cls(**fixed, **doc)
    except ThermoplaceError:
        raise
    except (TypeError, ValueError) as err:
        raise ConfigError(f"bad values in {where}: {err}") from err


def config_from_dict(doc: dict) -> RunConfig:
    """Strict parse: every section optional, unknown keys rejected."""
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    allowed = {"horizon", "physics", "grid", "net", "train", "placement", "paths"}
    unknown = set(doc) - allowed
    if unknown:
        raise ConfigError(f"unknown top-level keys {sorted(unknown)}")
    horizon = float(doc.get("horizon", 100.0))
    if not horizon > 0:
        raise ConfigError(f"horizon must be positive, got {horizon}")
    phys_doc = dict(doc.get("physics", {}))
    dim = int(phys_doc.pop("dim", 1))
    base = physics.default_spec(dim)
    spec = _build_section(PhysicsSpec, phys_doc, "physics", dim=dim) \
        if phys_doc else base
    if phys_doc and "h" not in phys_doc:
        spec = replace(spec, h=base.h)
    grid_doc = dict(doc.get("grid", {}))
    grid_doc.setdefault("nx", 201 if dim == 1 else 101)
    grid_doc.setdefault("nt", int(10 * horizon))
    grid = _build_section(GridSpec, grid_doc, "grid", t_end=horizon)
    net = _build_section(NetConfig, dict(doc.get("net", {})), "net")
    train_cfg = _build_section(TrainConfig, dict(doc.get("train", {})), "train")
    place_cfg = _build_section(PlacementRunConfig,
                               dict(doc.get("placement", {})), "placement")
    paths = dict(doc.get("paths", {}))
    unknown = set(paths) - {"drive_csv", "out_dir"}
    if unknown:
        raise ConfigError(f"unknown keys {sorted(unknown)} in paths")
    return RunConfig(physics=spec, grid=grid, net=net, train=train_cfg,
                     placement=place_cfg, horizon=horizon,
                     drive_csv=paths.get("drive_csv"),
                     out_dir=paths.get("out_dir", "out"))


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as err:
        raise ConfigError(f"config {path} is not valid JSON: {err}") from err
    cfg = config_from_dict(doc)
    if cfg.drive_csv is not None and not os.path.exists(cfg.drive_csv):
        raise ConfigError(f"drive_csv {cfg.drive_csv} does not exist")
    return cfg


def config_to_dict(cfg: RunConfig) -> dict:
    doc = {
        "horizon": cfg.horizon,
        "physics": asdict(cfg.physics),
        "grid": {"nx": cfg.grid.nx, "nt": cfg.grid.nt},
        "net": asdict(cfg.net),
        "train": asdict(cfg.train),
        "placement": asdict(cfg.placement),
        "paths": {"drive_csv": cfg.drive_csv, "out_dir": cfg.out_dir},
    }
    return doc


def _resolve_config(args) -> RunConfig:
    if args.config:
        cfg = load_config(args.config)
    else:
        cfg = default_config(dim=args.dim, desk=args.desk_scale)
    if args.out:
        cfg = replace(cfg, out_dir=args.out)
    return cfg


def _load_drive(cfg: RunConfig, seed: int) -> physics.DriveSeries:
    if cfg.drive_csv:
        return physics.read_drive_csv(cfg.drive_csv)
    stored = os.path.join(cfg.out_dir, "drive.csv")
    if os.path.exists(stored):
        return physics.read_drive_csv(stored)
    return physics.synth_drive(seed, max(2, math.ceil(cfg.horizon)))


def _reference_path(cfg: RunConfig) -> str:
    return os.path.join(cfg.out_dir, "reference_field.csv")


def _get_reference(cfg: RunConfig, drive) -> fdsolver.FieldSeries:
    path = _reference_path(cfg)
    if os.path.exists(path):
        return fdsolver.read_field_csv(path)
    ref = fdsolver.solve(cfg.physics, drive, cfg.grid)
    fdsolver.write_field_csv(ref, path)
    return ref


def cmd_gen_data(args) -> int:
    cfg = _resolve_config(args)
    os.makedirs(cfg.out_dir, exist_ok=True)
    series = physics.synth_drive(args.seed, args.hours)
    path = os.path.join(cfg.out_dir, "drive.csv")
    physics.write_drive_csv(series, path)
    print(f"wrote {path}: {series.t.shape[0]} samples over {args.hours} h")
    for name, arr in (("ta", series.ta), ("to", series.to), ("kf", series.kf)):
        print(f"  {name}: min {arr.min():.3f}  mean {arr.mean():.3f}  "
              f"max {arr.max():.3f}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _resolve_config(args)
    os.makedirs(cfg.out_dir, exist_ok=True)
    drive = _load_drive(cfg, args.seed)
    try:
        field = fdsolver.solve(cfg.physics, drive, cfg.grid)
    except ThermoplaceError as err:
        print(f"solver error: {err}", file=sys.stderr)
        return EXIT_SOLVER
    path = os.path.join(cfg.out_dir, "reference_field.csv")
    fdsolver.write_field_csv(field, path)
    wrote = [path]
    if args.snapshot:
        times = [float(v) for v in args.snapshot.split(",")]
        for t in times:
            spath = os.path.join(cfg.out_dir, f"field_t{t:g}.csv")
            fdsolver.write_field_csv(field, spath, times=[t])
            wrote.append(spath)
    meta = {
        "dim": cfg.physics.dim, "nx": cfg.grid.nx, "nt": cfg.grid.nt,
        "t_end": cfg.grid.t_end,
        "u_min": float(field.values.min()), "u_max": float(field.values.max()),
        "files": [os.path.basename(p) for p in wrote],
    }
    with open(os.path.join(cfg.out_dir, "sim_meta.json"), "w",
              encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2)
    print(f"simulated dim={cfg.physics.dim} field on {cfg.grid.nx} nodes, "
          f"{cfg.grid.nt} steps; u in [{meta['u_min']:.2f}, {meta['u_max']:.2f}] C")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    os.makedirs(cfg.out_dir, exist_ok=True)
    drive = _load_drive(cfg, args.seed)
    reference = _get_reference(cfg, drive)
    ckpt_path = os.path.join(cfg.out_dir, "checkpoint.json")
    try:
        result = training.train_pinn(cfg.physics, drive, reference,
                                     cfg.net_spec(), cfg.train, cfg.horizon)
    except training.TrainingNumericError as err:
        if err.params is not None:
            scaler = training.fit_scaler(drive, cfg.physics.dim, cfg.horizon)
            training.save_checkpoint(ckpt_path, err.params, scaler,
                                     cfg.physics.dim)
            print(f"training aborted ({err}); last finite checkpoint kept",
                  file=sys.stderr)
        else:
            print(f"training aborted: {err}", file=sys.stderr)
        return EXIT_TRAINING
    training.save_checkpoint(ckpt_path, result.params, result.scaler,
                             cfg.physics.dim)
    result.report.write_csv(os.path.join(cfg.out_dir, "train_report.csv"))
    meta = {
        "rel_l2_field": result.rel_l2_field,
        "rel_l2_top": result.rel_l2_top,
        "epochs": len(result.report),
        "wall_time_s": result.report.wall_time,
    }
    with open(os.path.join(cfg.out_dir, "train_meta.json"), "w",
              encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2)
    pred = training.PinnPredictor(result.params, result.scaler, cfg.physics,
                                  drive).predict_grid(reference.xs,
                                                      reference.times)
    pinn_field = fdsolver.FieldSeries(dim=cfg.physics.dim, xs=reference.xs,
                                      times=reference.times, values=pred)
    fdsolver.write_field_csv(pinn_field, os.path.join(cfg.out_dir,
                                                      "pinn_field.csv"))
    print(f"trained: rel_l2_field={result.rel_l2_field:.4e} "
          f"rel_l2_top={result.rel_l2_top:.4e} "
          f"({len(result.report)} epochs, {result.report.wall_time:.1f}s)")
    return EXIT_OK


def cmd_place(args) -> int:
    cfg = _resolve_config(args)
    os.makedirs(cfg.out_dir, exist_ok=True)
    drive = _load_drive(cfg, args.seed)
    pcfg = cfg.placement
    grid = placement.build_grid(cfg.physics.dim, pcfg.grid_nx, pcfg.grid_ny,
                                margin=pcfg.effective_margin())
    times = np.arange(0.0, cfg.horizon + 0.5, 1.0)
    if args.source == "pinn":
        ckpt = os.path.join(cfg.out_dir, "checkpoint.json")
        if not os.path.exists(ckpt):
            print(f"missing checkpoint {ckpt}; run `train` first", file=sys.stderr)
            return EXIT_IO
        params, scaler, dim = training.load_checkpoint(ckpt)
        if dim != cfg.physics.dim:
            print(f"checkpoint is {dim}D but config is {cfg.physics.dim}D",
                  file=sys.stderr)
            return EXIT_IO
        source = training.PinnPredictor(params, scaler, cfg.physics, drive)
    else:
        ref_path = _reference_path(cfg)
        if not os.path.exists(ref_path):
            print(f"missing reference field {ref_path}; run `simulate` first",
                  file=sys.stderr)
            return EXIT_IO
        source = fdsolver.read_field_csv(ref_path)
    scores = placement.score_field(source, grid, times)
    constraints = pcfg.constraints()
    try:
        if args.model == 1:
            sol = placement.solve_model1(scores, constraints)
        elif grid.count <= placement.ENUMERATION_GUARD:
            sol = placement.exhaustive_solve(args.model, scores, grid, constraints)
        elif args.model == 2:
            sol = placement.solve_model2(scores, grid, constraints)
        else:
            sol = placement.solve_model3(scores, grid, constraints)
    except InfeasibleError as err:
        print(f"infeasible: {err}", file=sys.stderr)
        return EXIT_INFEASIBLE
    tag = f"model{args.model}_{args.source}"
    placement.write_placement_json(
        os.path.join(cfg.out_dir, f"placement_{tag}.json"),
        args.model, constraints, grid, scores, sol)
    placement.write_placement_csv(
        os.path.join(cfg.out_dir, f"placement_{tag}.csv"), grid, scores, sol)
    print(f"model {args.model} ({sol.solver}): {len(sol.indices)} sensors, "
          f"objective {sol.objective:.6e}")
    print(f"  indices: {list(sol.indices)}")
    return EXIT_OK


def cmd_compare(args) -> int:
    try:
        fa = fdsolver.read_field_csv(args.field_a)
        fb = fdsolver.read_field_csv(args.field_b)
    except (OSError, ThermoplaceError) as err:
        print(f"cannot load fields: {err}", file=sys.stderr)
        return EXIT_COMPARE
    try:
        if fa.dim != fb.dim:
            raise ConfigError(f"dimension mismatch {fa.dim} vs {fb.dim}")
        if fa.values.shape == fb.values.shape and \
                np.array_equal(fa.xs, fb.xs) and np.array_equal(fa.times, fb.times):
            a_on_b = fa.values
        else:
            a_on_b = _resample(fa, fb)
        rel_field = fdsolver.relative_l2(a_on_b, fb.values)
        if fa.dim == 1:
            rel_top = fdsolver.relative_l2(a_on_b[:, -1], fb.values[:, -1])
        else:
            rel_top = fdsolver.relative_l2(a_on_b[:, -1, :].mean(axis=1),
                                           fb.values[:, -1, :].mean(axis=1))
        if args.times:
            slice_times = [float(v) for v in args.times.split(",")]
        else:
            slice_times = [t for t in COMPARE_DEFAULT_TIMES[fa.dim]
                           if fb.t_first <= t <= fb.t_last]
        slices = {}
        for t in slice_times:
            ti = int(np.argmin(np.abs(fb.times - t)))
            slices[repr(float(fb.times[ti]))] = fdsolver.relative_l2(
                a_on_b[ti], fb.values[ti])
    except ThermoplaceError as err:
        print(f"comparison failed: {err}", file=sys.stderr)
        return EXIT_COMPARE
    doc = {"rel_l2_field": rel_field, "rel_l2_top": rel_top,
           "rel_l2_slices": slices}
    text = json.dumps(doc, indent=2)
    print(text)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "compare.json"), "w",
                  encoding="utf-8") as fh:
            fh.write(text + "\n")
    return EXIT_OK


def _resample(fa: fdsolver.FieldSeries, fb: fdsolver.FieldSeries) -> np.ndarray:
    """Interpolate field A onto B's grid; B must lie inside A's coverage."""
    out = np.empty_like(fb.values)
    for ti, t in enumerate(fb.times):
        snap = fa.snapshot(float(t))
        if fa.dim == 1:
            out[ti] = np.interp(fb.xs, fa.xs, snap)
        else:
            XX, YY = np.meshgrid(fb.xs, fb.xs, indexing="ij")
            pts = np.column_stack([XX.ravel(), YY.ravel()])
            out[ti] = fdsolver.interp_snapshot(fa.xs, snap, pts).reshape(
                fb.xs.shape[0], fb.xs.shape[0])
    return out


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="thermoplace",
                description="Transformer thermal simulation, surrogate "
                            "training, and sensor placement")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON run configuration")
        sp.add_argument("--seed", type=int, default=1,
                        help="seed for synthetic data (default 1)")
        sp.add_argument("--out", help="output directory override")
        sp.add_argument("--desk-scale", action="store_true",
                        help="use the reduced desk-scale default profile")
        sp.add_argument("--dim", type=int, default=1, choices=(1, 2),
                        help="spatial dimension when no config is given")

    sp = sub.add_parser("gen-data", help="write a synthetic drive CSV")
    common(sp)
    sp.add_argument("--hours", type=int, default=100)
    sp.set_defaults(func=cmd_gen_data)

    sp = sub.add_parser("simulate", help="run the finite-difference reference")
    common(sp)
    sp.add_argument("--snapshot", help="comma-separated times to emit as "
                                       "snapshot files")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("train", help="train the surrogate against the PDE")
    common(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("place", help="compute optimal sensor positions")
    common(sp)
    sp.add_argument("--source", choices=("pinn", "reference"),
                    default="reference")
    sp.add_argument("--model", type=int, choices=(1, 2, 3), default=3)
    sp.set_defaults(func=cmd_place)

    sp = sub.add_parser("compare", help="relative errors between two fields")
    sp.add_argument("field_a", help="field CSV under test")
    sp.add_argument("field_b", help="reference field CSV")
    sp.add_argument("--times", help="comma-separated slice times")
    sp.add_argument("--out", help="directory for compare.json")
    sp.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except ConfigError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except InfeasibleError as err:
        print(f"infeasible: {err}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except training.TrainingNumericError as err:
        print(f"training error: {err}", file=sys.stderr)
        return EXIT_TRAINING
    except OSError as err:
        print(f"I/O error: {err}", file=sys.stderr)
        return EXIT_IO
    except ThermoplaceError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
