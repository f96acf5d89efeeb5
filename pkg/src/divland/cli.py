"""Command-line entry point: ``divland {evolve,simulate,validate,map,flow-check}``.

Exit codes are 0 on success, 2 for usage or configuration errors and 3 for
I/O failures.  Every subcommand writes only inside ``--out``.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from divland import __version__
from divland import flow
from divland.analysis import (
    DEFAULT_D_GRID,
    DEFAULT_DD_GRID,
    default_reference,
    nu_series,
    pareto_filter,
    steady_state_map,
    validate,
)
from divland.config import ConfigError, RunConfig, load_config, to_flat
from divland.errors import DomainError
from divland.evo import ARCHIVE_FILE, GENOMES_FILE, EvoConfig, RunArchive, evolve
from divland.neuro import ARCHS, Genome, NetworkPolicy
from divland.sim import NOMINAL_PARAMS, BaselinePolicy, SimParams, make_rng, run_episode, sample_params

EXIT_OK, EXIT_USAGE, EXIT_IO = 0, 2, 3
MANIFEST_FILE = "manifest.json"
NU_FILE = "nu_series.csv"
_SIM_PARAMS_TAG, _SIM_EPISODE_TAG = 1, 2


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def write_manifest(out: Path, *, command: str, seed: int, config: dict, files, started: str) -> Path:
    """Write ``manifest.json`` atomically, with checksums of ``files``."""
    manifest = {
        "tool": "divland",
        "version": __version__,
        "command": command,
        "seed": seed,
        "config": config,
        "started": started,
        "finished": _now(),
        "files": {Path(f).name: sha256(f) for f in files},
    }
    tmp = out / (MANIFEST_FILE + ".tmp")
    tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    os.replace(tmp, out / MANIFEST_FILE)
    return out / MANIFEST_FILE


def verify_manifest(out) -> bool:
    out = Path(out)
    manifest = json.loads((out / MANIFEST_FILE).read_text())
    return all(sha256(out / name) == digest for name, digest in manifest["files"].items())


def _load_genome(path, genome_id: str | None) -> Genome:
    """A genome file, or one member of an archive's ``genomes.json``."""
    try:
        payload = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise DomainError(f"malformed genome file {path}: {exc}") from None
    if not isinstance(payload, dict):
        raise DomainError(f"malformed genome file {path}")
    if "genomes" in payload:
        if genome_id is None:
            raise DomainError(f"{path} holds several genomes; pick one with --genome-id")
        if genome_id not in payload["genomes"]:
            raise DomainError(f"no genome {genome_id!r} in {path}")
        payload = payload["genomes"][genome_id]
    try:
        return Genome.from_dict(payload)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, DomainError):
            raise
        raise DomainError(f"malformed genome in {path}: {exc}") from None


# --------------------------------------------------------------------------
# Subcommands
# --------------------------------------------------------------------------


def cmd_evolve(args) -> int:
    base = EvoConfig.desk() if args.preset == "desk" else EvoConfig()
    run = load_config(args.config, base) if args.config else RunConfig(base)
    cfg = run.evo
    overrides = {"workers": args.workers}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.arch is not None:
        overrides["arch"] = args.arch
    if args.generations is not None:
        overrides["generations"] = args.generations
    cfg = EvoConfig(**{**{k: getattr(cfg, k) for k in cfg.__dataclass_fields__}, **overrides})

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    started = _now()

    def progress(rec):
        if not args.quiet:
            print(f"gen {rec.gen:4d}  front size {sum(i.rank == 0 for i in rec.population)}", file=sys.stderr)

    archive = evolve(cfg, callback=progress)
    files = archive.write(out)
    fronts = [pareto_filter(rec.fitness()) for rec in archive.records]
    reference = default_reference(*fronts)
    nu = nu_series(archive, reference)
    nu_path = out / NU_FILE
    with nu_path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["gen", "nu"])
        for rec, x in zip(archive.records, nu):
            w.writerow([rec.gen, f"{x:.9g}"])
    nu_meta = out / (Path(NU_FILE).stem + ".json")
    nu_meta.write_text(json.dumps({"reference": reference.tolist(), "objectives": ["time", "speed"],
                                   "volume": "dominated"}, indent=2, sort_keys=True) + "\n")
    files += [nu_path, nu_meta]
    write_manifest(out, command="evolve", seed=cfg.seed, config=to_flat(cfg), files=files, started=started)
    print(f"wrote {', '.join(p.name for p in files)} and {MANIFEST_FILE} to {out}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    if (args.genome is None) == (args.baseline_gain is None):
        raise DomainError("give exactly one of --genome or --baseline-gain")
    seed = 0 if args.seed is None else args.seed
    if args.genome is not None:
        controller = NetworkPolicy(_load_genome(args.genome, args.genome_id))
        label = {"genome": str(args.genome), "genome_id": args.genome_id}
    else:
        controller = BaselinePolicy(args.baseline_gain, args.setpoint)
        label = {"baseline_gain": args.baseline_gain, "setpoint": args.setpoint}

    if args.sample:
        params = sample_params(make_rng((seed, _SIM_PARAMS_TAG)))
    elif args.noiseless:
        params = SimParams.noiseless(delay=args.delay or 1, tau_thrust=args.tau_thrust or 0.02, freq=args.freq or 50.0)
    else:
        given = {k: getattr(args, k) for k in SimParams.__dataclass_fields__ if getattr(args, k) is not None}
        params = SimParams(**{**NOMINAL_PARAMS.to_dict(), **given})

    traj = run_episode(controller, args.altitude, params, seed=(seed, _SIM_EPISODE_TAG))
    traj.meta.update({"controller": label, "seed": seed})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "trajectory.csv"
    traj.to_csv(path)
    print(f"{traj.reason} after {traj.elapsed:.3f} s, h={traj.final_height:.4f} m, "
          f"v={traj.final_velocity:.4f} m/s -> {path}")
    return EXIT_OK


def cmd_validate(args) -> int:
    src = Path(args.archive)
    if not (src / ARCHIVE_FILE).is_file() or not (src / GENOMES_FILE).is_file():
        raise FileNotFoundError(f"{src} does not contain {ARCHIVE_FILE} and {GENOMES_FILE}")
    archive = RunArchive.read(src)
    front = archive.front(-1)
    if not front:
        raise DomainError("the archive's final front is empty")
    seed = 0 if args.seed is None else args.seed
    members = {ind.genome_id: ind.genome for ind in front}
    report = validate(members, n=args.n, seed=seed, altitudes=archive.config.altitudes,
                      ranges=archive.config.ranges, workers=args.workers)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "validation.csv"
    report.to_csv(path)
    print(f"validated {len(members)} front members on {args.n} draws -> {path}")
    return EXIT_OK


def _grid(lo, hi, num, name):
    if num < 1 or not np.isfinite([lo, hi]).all() or hi < lo or (num > 1 and hi == lo):
        raise DomainError(f"bad {name} grid: need finite min < max and num >= 1")
    return np.linspace(lo, hi, num)


def cmd_map(args) -> int:
    genome = _load_genome(args.genome, args.genome_id)
    d = _grid(args.d_min, args.d_max, args.d_num, "D")
    dd = _grid(args.dd_min, args.dd_max, args.dd_num, "dD")
    m = steady_state_map(genome, d, dd)
    m.meta.update({"genome": str(args.genome), "genome_id": args.genome_id})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "map.csv"
    m.to_csv(path)
    print(f"{m.values.shape[0]}x{m.values.shape[1]} map, {m.n_nonconvergent} non-convergent cells -> {path}")
    return EXIT_OK


FLOW_COLUMNS = ("dt", "points", "pairs", "D_true", "D_est", "bias", "rel_error")


def flow_report(args) -> list[dict]:
    """One row per frame interval: analytic vs estimated divergence."""
    scene = flow.PlanarScene.scatter(args.z0, args.points, zx=args.zx, zy=args.zy,
                                     half_fov=args.half_fov, seed=args.seed or 0)
    cam = flow.CameraState(velocity=(args.u, args.v, args.theta_z * args.z0), rates=(args.p, args.q, args.r))
    d_true = flow.observables(cam, scene).divergence
    rows = []
    for dt in args.dt:
        pts = flow.track(cam, scene, dt)
        pairs = flow.select_pairs(args.points, seed=args.seed or 0)
        d_est = flow.size_to_divergence(flow.estimate_divergence(pts, seed=args.seed or 0))
        bias = d_est - d_true
        rel = abs(bias) / abs(d_true) if d_true else float("nan")
        rows.append(dict(zip(FLOW_COLUMNS, (dt, args.points, len(pairs), d_true, d_est, bias, rel))))
    return rows


def cmd_flow_check(args) -> int:
    if args.points < 2:
        raise DomainError("need at least two tracked points")
    if any(not dt > 0 for dt in args.dt):
        raise DomainError("every --dt must be positive")
    rows = flow_report(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "flow_check.csv"
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=FLOW_COLUMNS)
        w.writeheader()
        for row in rows:
            w.writerow({k: (f"{v:.9g}" if isinstance(v, float) else v) for k, v in row.items()})
    print("  dt        points pairs  D_true      D_est       bias")
    for r in rows:
        print(f"  {r['dt']:<9.4g} {r['points']:<6d} {r['pairs']:<6d} {r['D_true']:<11.6g} "
              f"{r['D_est']:<11.6g} {r['bias']:.3g}")
    return EXIT_OK


# --------------------------------------------------------------------------
# Parser
# --------------------------------------------------------------------------


def _global_flags(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--seed", type=int, default=d, help="master seed")
    p.add_argument("--out", default=argparse.SUPPRESS if suppress else "divland-out", help="output directory")
    p.add_argument("--workers", type=int, default=d if suppress else os.cpu_count() or 1,
                   help="parallel evaluation threads (results do not depend on it)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="divland", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"divland {__version__}")
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        p = sub.add_parser(name, help=help_)
        _global_flags(p, suppress=True)
        p.set_defaults(func=fn)
        return p

    p = add("evolve", cmd_evolve, "run one evolution and archive every generation")
    p.add_argument("--config", type=Path, help="flat TOML configuration file")
    p.add_argument("--preset", choices=("full", "desk"), default="full",
                   help="defaults before the config file is applied")
    p.add_argument("--arch", choices=ARCHS)
    p.add_argument("--generations", type=int)
    p.add_argument("--quiet", action="store_true")

    p = add("simulate", cmd_simulate, "simulate one landing and log the trajectory")
    p.add_argument("--genome", type=Path, help="genome JSON or an archive's genomes.json")
    p.add_argument("--genome-id")
    p.add_argument("--baseline-gain", type=float)
    p.add_argument("--setpoint", type=float, default=0.5)
    p.add_argument("--altitude", type=float, default=4.0)
    p.add_argument("--sample", action="store_true", help="draw the environment from the randomization ranges")
    p.add_argument("--noiseless", action="store_true")
    p.add_argument("--delay", type=int)
    p.add_argument("--jitter", type=float)
    p.add_argument("--sigma-w", dest="sigma_w", type=float)
    p.add_argument("--sigma-p", dest="sigma_p", type=float)
    p.add_argument("--tau-thrust", dest="tau_thrust", type=float)
    p.add_argument("--freq", type=float)

    p = add("validate", cmd_validate, "re-test the final front on random environments")
    p.add_argument("archive", type=Path, help="directory written by 'evolve'")
    p.add_argument("--n", type=int, default=250)

    p = add("map", cmd_map, "steady-state input-output map of one genome")
    p.add_argument("genome", type=Path)
    p.add_argument("--genome-id")
    p.add_argument("--d-min", type=float, default=float(DEFAULT_D_GRID[0]))
    p.add_argument("--d-max", type=float, default=float(DEFAULT_D_GRID[-1]))
    p.add_argument("--d-num", type=int, default=len(DEFAULT_D_GRID))
    p.add_argument("--dd-min", type=float, default=float(DEFAULT_DD_GRID[0]))
    p.add_argument("--dd-max", type=float, default=float(DEFAULT_DD_GRID[-1]))
    p.add_argument("--dd-num", type=int, default=len(DEFAULT_DD_GRID))

    p = add("flow-check", cmd_flow_check, "compare the size-divergence estimate with the analytic value")
    p.add_argument("--z0", type=float, default=4.0, help="height above the plane along the optical axis [m]")
    p.add_argument("--zx", type=float, default=0.0)
    p.add_argument("--zy", type=float, default=0.0)
    p.add_argument("--points", type=int, default=150)
    p.add_argument("--half-fov", type=float, default=0.5)
    p.add_argument("--theta-z", type=float, default=0.5, help="scaled vertical velocity W/Z0 [1/s]")
    p.add_argument("--u", type=float, default=0.0)
    p.add_argument("--v", type=float, default=0.0)
    p.add_argument("--p", type=float, default=0.0)
    p.add_argument("--q", type=float, default=0.0)
    p.add_argument("--r", type=float, default=0.0)
    p.add_argument("--dt", type=float, nargs="+", default=[0.005])
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse: --help exits 0, bad usage exits 2
        return int(exc.code or 0)
    if args.workers is not None and args.workers < 1:
        print("divland: error: --workers must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"divland: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DomainError, ValueError) as exc:
        print(f"divland: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"divland: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
