"""Command-line entry point: ``selfcal <command> --config run.json``.

Commands: calibrate, evaluate, observability, perturb-study, synth. Every
command writes a self-describing run directory (resolved config, model hash,
results). Outputs contain no timestamps, so identical configs give identical
files.
"""

import argparse
import hashlib
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import evaluation as ev
from .dataset import PLANE_GROUPS, load_csv, save_csv, split
from .errors import CalibrationError, ConfigError
from .kinematics import load_model, model_to_dict, nominal_model, save_model
from .observability import system_indices, write_csv as write_obs_csv
from .params import CAMERA_MODES, ParamSelection, camera_preset, preset
from .residuals import ScalePolicy, SystemConfig, assemble
from .solver import SolverOptions, solve, solve_tracker
from .synth import SynthConfig, generate, perturb

log = logging.getLogger("selfcal")


@dataclass
class RunConfig:
    model: str = None
    datasets: list = field(default_factory=list)
    synthetic: dict = None
    approaches: list = field(default_factory=lambda: ["all"])
    plane_groups: list = field(default_factory=lambda: list(PLANE_GROUPS))
    so_cameras: list = field(default_factory=lambda: [1, 2])
    so_arms: list = field(default_factory=lambda: [1, 2])
    camera_mode: str = "noCams"
    preset: str = "offsets"
    side: int = 1
    tie_ee: bool = False
    parameters: list = None
    precalibrate_cameras: bool = None
    scale_policy: dict = field(default_factory=dict)
    solver: dict = field(default_factory=dict)
    seed: int = 0
    split_ratio: float = 0.7
    perturb: float = 0.0
    trials: int = 10
    workers: int = 1
    tracker_pose: list = None
    retroreflector: dict = field(default_factory=dict)
    observability: list = field(default_factory=list)
    output_dir: str = "run"

    def __post_init__(self):
        if self.camera_mode not in CAMERA_MODES:
            raise ConfigError(f"camera_mode must be one of {CAMERA_MODES}")
        if not 0 < self.split_ratio <= 1:
            raise ConfigError("split_ratio must be in (0, 1]")
        if self.trials < 1 or self.workers < 1:
            raise ConfigError("trials and workers must be positive")
        if self.perturb < 0:
            raise ConfigError("perturb must be non-negative")
        for d in self.datasets:
            if not isinstance(d, dict) or "path" not in d or "provenance" not in d:
                raise ConfigError("each dataset needs 'path' and 'provenance'")
        if not self.datasets and self.synthetic is None:
            raise ConfigError("config names no datasets and no synthetic generator")

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys {unknown}")
        return cls(**d)

    @classmethod
    def load(cls, path):
        try:
            with open(path) as fh:
                d = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        base = Path(path).parent
        for ds in d.get("datasets", []):
            if isinstance(ds, dict) and "path" in ds and not Path(ds["path"]).is_absolute():
                ds["path"] = str(base / ds["path"])
        if d.get("model") and not Path(d["model"]).is_absolute():
            d["model"] = str(base / d["model"])
        return cls.from_dict(d)

    def to_dict(self):
        return asdict(self)

    @property
    def needs_camera_stage(self):
        if self.precalibrate_cameras is not None:
            return self.precalibrate_cameras
        return self.camera_mode != "noCams"


# --- shared plumbing --------------------------------------------------------

def model_hash(model):
    blob = json.dumps(model_to_dict(model), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def _model(cfg):
    return load_model(cfg.model) if cfg.model else nominal_model()


def _datasets(cfg, model):
    if cfg.datasets:
        return [load_csv(d["path"], d["provenance"]) for d in cfg.datasets]
    return list(generate(model, SynthConfig.from_dict(cfg.synthetic)).values())


def _split(datasets, cfg, seed):
    train, test = [], []
    for ds in datasets:
        if cfg.split_ratio >= 1 or ds.n_poses < 2:
            train.append(ds)
            continue
        a, b = split(ds, cfg.split_ratio, seed)
        train.append(a)
        test.append(b)
    return train, test


def _selection(cfg, name=None, camera_mode=None):
    if cfg.parameters and name is None:
        return ParamSelection.from_list(cfg.parameters)
    return preset(name or cfg.preset, cfg.side, camera_mode or cfg.camera_mode, cfg.tie_ee)


def _system_config(cfg, approaches=None):
    return SystemConfig(tuple(approaches or cfg.approaches), tuple(cfg.plane_groups),
                        so_cameras=tuple(cfg.so_cameras), so_arms=tuple(cfg.so_arms),
                        tracker_arm=cfg.side)


def _eval_approaches(datasets):
    prov = {d.provenance for d in datasets if d.n_poses}
    out = []
    if "st" in prov:
        out.append("self-contact")
    if any(sum(d.n_poses for d in datasets if d.provenance == g) >= 3 for g in PLANE_GROUPS):
        out.append("planes")
    if any(d.n_markers for d in datasets if d.provenance != "lt"):
        out.append("self-observation")
    if any(d.tracker_table()[0] for d in datasets if d.provenance == "lt"):
        out.append("tracker")
    return out


def _eval_system(cfg, datasets, model, selection, policy):
    usable = [d for d in datasets
              if not (d.provenance in PLANE_GROUPS and d.n_poses < 3)]
    approaches = _eval_approaches(usable)
    if not approaches:
        return None
    return assemble(_system_config(cfg, approaches), usable, model, selection, policy)


def _solve(cfg, system_cfg, train, model, selection, policy, opts, x0=None):
    if system_cfg.approaches == ("tracker",):
        lt = [d for d in train if d.provenance == "lt"]
        if not lt:
            raise ConfigError("tracker calibration needs an 'lt' dataset")
        rep = solve_tracker(lt[0], model, selection, opts, arm=cfg.side)
        return rep, selection.apply(model, rep.x).with_values(
            {}, tracker_pose=rep.extras["tracker_pose"])
    system = assemble(system_cfg, train, model, selection, policy)
    rep = solve(system, x0, opts)
    return rep, system.model_at(rep.x)


def calibrate_once(cfg, model, datasets, split_seed, perturb_seed=None):
    """Camera stage (optional) plus main stage; returns a dict of results."""
    policy = ScalePolicy.from_dict(cfg.scale_policy) if cfg.scale_policy else ScalePolicy()
    opts = SolverOptions.from_dict(cfg.solver) if cfg.solver else SolverOptions()
    train, test = _split(datasets, cfg, split_seed)
    stages = {}
    current = model
    if cfg.needs_camera_stage:
        sel_c = camera_preset()
        sys_c = _system_config(cfg, ["self-observation"])
        rep_c, current = _solve(cfg, sys_c, train, current, sel_c, policy, opts)
        stages["camera"] = rep_c.to_dict()
    sel = _selection(cfg)
    system_cfg = _system_config(cfg)
    x0 = None
    if cfg.perturb > 0:
        seed = cfg.seed if perturb_seed is None else perturb_seed
        x0 = perturb(sel.values(current), sel, cfg.perturb, seed)
    rep, calibrated = _solve(cfg, system_cfg, train, current, sel, policy, opts, x0)
    stages["main"] = rep.to_dict()

    report = ev.EvalReport()
    tr = _eval_system(cfg, train, model, sel, policy)
    te = _eval_system(cfg, test, model, sel, policy) if test else None
    if tr is not None:
        report.train = ev.rmse(tr.with_model(calibrated), sel.values(calibrated))
        report.before["train"] = ev.rmse(tr)
    if te is not None:
        report.test = ev.rmse(te.with_model(calibrated), sel.values(calibrated))
        report.before["test"] = ev.rmse(te)
    report.corrections = ev.corrections(sel, sel.values(calibrated), sel.values(model))
    return {"stages": stages, "report": report, "model": calibrated, "selection": sel}


def _write_common(out, cfg, model):
    out.mkdir(parents=True, exist_ok=True)
    ev.write_json(cfg.to_dict(), out / "config.json")
    ev.write_json({"model_hash": model_hash(model), "seed": cfg.seed}, out / "manifest.json")


# --- commands ---------------------------------------------------------------

def cmd_calibrate(cfg):
    model = _model(cfg)
    datasets = _datasets(cfg, model)
    res = calibrate_once(cfg, model, datasets, cfg.seed)
    out = Path(cfg.output_dir)
    _write_common(out, cfg, model)
    ev.write_json(res["stages"], out / "solve_report.json")
    ev.write_json(res["report"].to_dict(), out / "eval_report.json")
    ev.write_long_csv(res["report"].long_rows(cfg.preset), out / "rmse_long.csv")
    ev.write_corrections_csv(res["report"].corrections, out / "corrections.csv")
    save_model(res["model"], out / "calibrated_model.json")
    main = res["stages"]["main"]
    print(f"calibrate: {main['termination']} after {main['iterations']} iterations, "
          f"cost {main['initial_cost']:.6g} -> {main['final_cost']:.6g}; results in {out}")
    return 0


def cmd_evaluate(cfg):
    """RMSE of the configured model on all datasets (no fitting)."""
    model = _model(cfg)
    datasets = _datasets(cfg, model)
    policy = ScalePolicy.from_dict(cfg.scale_policy) if cfg.scale_policy else ScalePolicy()
    sel = _selection(cfg)
    report = ev.EvalReport()
    metric = [d for d in datasets if d.provenance != "lt"]
    if metric:
        system = _eval_system(cfg, metric, model, sel, policy)
        if system is not None:
            report.test = ev.rmse(system)
    lt = [d for d in datasets if d.provenance == "lt"]
    if lt:
        pose = cfg.tracker_pose if cfg.tracker_pose is not None else model.tracker_pose
        retro = {tuple(k.split(":")[::-1]): v for k, v in cfg.retroreflector.items()}
        report.test.update(ev.cross_evaluate(model, lt[0], pose, retro, cfg.side))
    out = Path(cfg.output_dir)
    _write_common(out, cfg, model)
    ev.write_json(report.to_dict(), out / "eval_report.json")
    ev.write_long_csv(report.long_rows(cfg.preset), out / "rmse_long.csv")
    for kind, v in report.test.items():
        print(f"{kind}: {v['rmse']:.6g} {v['unit']} over {v['count']} entries")
    return 0


def cmd_observability(cfg):
    model = _model(cfg)
    datasets = _datasets(cfg, model)
    policy = ScalePolicy.from_dict(cfg.scale_policy) if cfg.scale_policy else ScalePolicy()
    opts = SolverOptions.from_dict(cfg.solver) if cfg.solver else SolverOptions()
    variants = cfg.observability or [{"name": cfg.preset, "preset": cfg.preset,
                                      "camera_mode": cfg.camera_mode,
                                      "approaches": cfg.approaches}]
    reports, out_json = {}, {}
    for v in variants:
        sel = _selection(cfg, v.get("preset", cfg.preset), v.get("camera_mode", cfg.camera_mode))
        system = assemble(_system_config(cfg, v.get("approaches")), datasets, model, sel, policy)
        for scaled in (True, False):
            name = f"{v['name']}:{'scaled' if scaled else 'si'}"
            rep = system_indices(system, opts=opts, scaled=scaled)
            reports[name] = rep
            out_json[name] = rep.to_dict()
            print(f"{name}: O1={rep.O1:.6g} O2={rep.O2:.6g} O3={rep.O3:.6g} O4={rep.O4:.6g} "
                  f"rank={rep.rank}/{rep.m}")
    out = Path(cfg.output_dir)
    _write_common(out, cfg, model)
    ev.write_json(out_json, out / "observability.json")
    write_obs_csv(reports, out / "observability.csv")
    return 0


def _trial(args):
    cfg_dict, i, p = args
    cfg = RunConfig.from_dict(cfg_dict)
    cfg.perturb = p
    model = _model(cfg)
    datasets = _datasets(cfg, model)
    res = calibrate_once(cfg, model, datasets, cfg.seed + i, perturb_seed=cfg.seed + i)
    return [c["correction"] for c in res["report"].corrections], res["selection"].labels


def cmd_perturb_study(cfg):
    """Seeded trials (split + perturbation seeds) with and without perturbation."""
    model = _model(cfg)
    jobs = [(cfg.to_dict(), i, p) for p in (0.0, cfg.perturb) for i in range(cfg.trials)]
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            results = list(pool.map(_trial, jobs))
    else:
        results = [_trial(j) for j in jobs]
    labels = results[0][1]
    base = np.array([r[0] for r in results[:cfg.trials]])
    pert = np.array([r[0] for r in results[cfg.trials:]])
    summary = {}
    for name, arr in (("unperturbed", base), ("perturbed", pert)):
        mean, sd = ev.trial_stats(arr)
        summary[name] = {l: {"mean": float(m), "sd": float(s)} for l, m, s in zip(labels, mean, sd)}
    out = Path(cfg.output_dir)
    _write_common(out, cfg, model)
    ev.write_json({"p": cfg.perturb, "trials": cfg.trials, "summary": summary},
                  out / "perturb_study.json")
    with open(out / "trials.csv", "w") as fh:
        fh.write("p,trial,label,correction\n")
        for (_, i, p), (corr, _) in zip(jobs, results):
            for l, c in zip(labels, corr):
                fh.write(f"{p!r},{i},{l},{c!r}\n")
    for l in labels:
        u, q = summary["unperturbed"][l], summary["perturbed"][l]
        print(f"{l}: {u['mean']:.6g} +- {u['sd']:.3g} (p=0) | {q['mean']:.6g} +- {q['sd']:.3g} "
              f"(p={cfg.perturb})")
    return 0


def cmd_synth(cfg):
    model = _model(cfg)
    if cfg.synthetic is None:
        raise ConfigError("synth needs a 'synthetic' section")
    scfg = SynthConfig.from_dict(cfg.synthetic)
    tally = {}
    data = generate(model, scfg, tally)
    out = Path(cfg.output_dir)
    _write_common(out, cfg, model)
    for prov, ds in data.items():
        save_csv(ds, out / f"{prov}.csv")
    save_model(model, out / "ground_truth_model.json")
    ev.write_json(tally, out / "tally.json")
    for prov, ds in data.items():
        print(f"{prov}: {ds.n_poses} poses, {ds.n_markers} marker detections")
    return 0


COMMANDS = {"calibrate": cmd_calibrate, "evaluate": cmd_evaluate,
            "observability": cmd_observability, "perturb-study": cmd_perturb_study,
            "synth": cmd_synth}


def build_parser():
    ap = argparse.ArgumentParser(prog="selfcal", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="run configuration (JSON)")
        p.add_argument("--output", help="override output_dir")
        p.add_argument("--seed", type=int)
        p.add_argument("--preset")
        p.add_argument("--camera-mode", choices=CAMERA_MODES)
        p.add_argument("--approaches", nargs="+")
        p.add_argument("--perturb", type=float)
        p.add_argument("--trials", type=int)
        p.add_argument("--workers", type=int)
    return ap


def _apply_overrides(d, args):
    for key, attr in (("output_dir", "output"), ("seed", "seed"), ("preset", "preset"),
                      ("camera_mode", "camera_mode"), ("approaches", "approaches"),
                      ("perturb", "perturb"), ("trials", "trials"), ("workers", "workers")):
        v = getattr(args, attr)
        if v is not None:
            d[key] = v
    return d


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = RunConfig.load(args.config)
        cfg = RunConfig.from_dict(_apply_overrides(cfg.to_dict(), args))
        return COMMANDS[args.command](cfg)
    except CalibrationError as exc:
        print(f"selfcal {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
