"""Pareto-front diagnostics, validation statistics and steady-state maps.

The front diagnostic ``nu`` works in the (time, speed) plane; the
final-height objective is left out because landing controllers drive it to
zero.  Its numerator is the hypervolume the front dominates with respect to
a reference point, its denominator the length of the polyline through the
front points ordered by time (1 for a single point).

``volume="enclosed"`` swaps the numerator for the area of the box
``[0, ref]`` that the front does *not* dominate.  That variant shrinks as a
minimisation front improves, whereas the dominated form grows.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from divland.errors import DomainError
from divland.evo import RunArchive, evaluate_many, nondominated_fronts
from divland.neuro import STEADY_DT, Genome, NetworkPolicy, steady_state_grid
from divland.sim import TABLE_RANGES, ParamRanges, make_rng, sample_params

LIVE_OBJECTIVES = (0, 2)  # time, speed
PERCENTILES = (25, 50, 75)
_VALIDATION_TAG = 7
_MAX_BATCH = 4096


# --------------------------------------------------------------------------
# nu
# --------------------------------------------------------------------------


def _live(points) -> np.ndarray:
    P = np.asarray(points, dtype=float)
    if P.ndim != 2:
        raise DomainError("points must be a 2-D array")
    if P.shape[1] == 3:
        P = P[:, LIVE_OBJECTIVES]
    if P.shape[1] != 2:
        raise DomainError(f"expected 2 or 3 objectives, got {P.shape[1]}")
    return P


def pareto_filter(points) -> np.ndarray:
    """Non-dominated points, unique and sorted by the first objective."""
    P = _live(points)
    if len(P) == 0:
        return P
    front = np.unique(P[nondominated_fronts(P)[0]], axis=0)
    return front[np.lexsort((front[:, 1], front[:, 0]))]


def hypervolume_2d(front: np.ndarray, ref) -> float:
    """Area dominated by a mutually non-dominated, time-sorted front."""
    ref = np.asarray(ref, dtype=float)
    hv = 0.0
    prev_y = ref[1]
    for x, y in front:
        hv += (ref[0] - x) * (prev_y - y)
        prev_y = y
    return float(hv)


def polyline_length(front: np.ndarray) -> float:
    if len(front) < 2:
        return 1.0
    return float(np.hypot(*np.diff(front, axis=0).T).sum())


def default_reference(*point_sets) -> np.ndarray:
    """Component-wise maximum over all given point sets, times 1.1."""
    allp = np.vstack([_live(p) for p in point_sets if len(p)])
    return 1.1 * allp.max(axis=0)


@dataclass(frozen=True)
class ParetoFront:
    points: np.ndarray  # (n, 2) time/speed, sorted by time
    reference: np.ndarray
    genome_ids: tuple = ()
    hypervolume: float = 0.0
    length: float = 1.0

    @property
    def enclosed(self) -> float:
        return float(np.prod(self.reference)) - self.hypervolume

    @property
    def nu(self) -> float:
        return self.hypervolume / self.length

    @property
    def nu_enclosed(self) -> float:
        return self.enclosed / self.length


def pareto_front(fitness, reference=None, genome_ids: Sequence[str] = ()) -> ParetoFront:
    """Filter ``fitness`` to its (time, speed) front and measure it."""
    P = _live(fitness)
    if len(P) == 0:
        raise DomainError("empty front")
    ref = default_reference(P) if reference is None else _live(np.asarray(reference, dtype=float)[None])[0]
    if np.any(P > ref):
        raise DomainError(f"front member outside the reference box {ref.tolist()}")
    front = pareto_filter(P)
    ids = ()
    if genome_ids:
        ids = tuple(genome_ids[i] for i in range(len(P)) if any(np.array_equal(P[i], q) for q in front))
    return ParetoFront(front, ref, ids, hypervolume_2d(front, ref), polyline_length(front))


def nu_metric(fitness, reference=None, volume: str = "dominated") -> float:
    front = pareto_front(fitness, reference)
    if volume == "dominated":
        return front.nu
    if volume == "enclosed":
        return front.nu_enclosed
    raise ValueError(f"unknown volume kind {volume!r}")


def nu_series(archive: RunArchive, reference=None, volume: str = "dominated") -> np.ndarray:
    """nu of each generation's rank-0 front, with one shared reference point."""
    fronts = [pareto_filter(rec.fitness()) for rec in archive.records]
    ref = default_reference(*fronts) if reference is None else _live(np.asarray(reference, dtype=float)[None])[0]
    return np.array([nu_metric(f, ref, volume) for f in fronts])


@dataclass
class Trend:
    generations: np.ndarray
    per_run: np.ndarray  # (runs, generations + 1)
    reference: np.ndarray
    volume: str = "dominated"

    @property
    def mean(self):
        return self.per_run.mean(axis=0)

    @property
    def min(self):
        return self.per_run.min(axis=0)

    @property
    def max(self):
        return self.per_run.max(axis=0)

    def to_csv(self, path) -> None:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["gen", "mean", "min", "max"] + [f"run{i}" for i in range(len(self.per_run))])
            for g in range(len(self.generations)):
                row = [self.mean[g], self.min[g], self.max[g], *self.per_run[:, g]]
                w.writerow([int(self.generations[g])] + [f"{x:.9g}" for x in row])
        meta = {
            "reference": self.reference.tolist(),
            "objectives": ["time", "speed"],
            "runs": len(self.per_run),
            "volume": self.volume,
        }
        path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def trend(
    archives: Sequence[RunArchive], reference=None, per_run_reference: bool = True, volume: str = "dominated"
) -> Trend:
    """Per-generation nu across runs.

    By default each run is measured against its own reference point (the
    maximum over all its generation fronts); pass ``reference`` or
    ``per_run_reference=False`` to share one across runs.
    """
    if not archives:
        raise DomainError("at least one run archive is required")
    lengths = {len(a.records) for a in archives}
    if len(lengths) != 1:
        raise DomainError("archives differ in number of generations")
    fronts = [[pareto_filter(rec.fitness()) for rec in a.records] for a in archives]
    if reference is None and not per_run_reference:
        reference = default_reference(*[f for run in fronts for f in run])
    rows, refs = [], []
    for run in fronts:
        ref = default_reference(*run) if reference is None else np.asarray(reference, dtype=float)
        refs.append(ref)
        rows.append([nu_metric(f, ref, volume) for f in run])
    gens = np.array([rec.gen for rec in archives[0].records])
    return Trend(gens, np.array(rows), np.array(refs), volume)


# --------------------------------------------------------------------------
# Validation
# --------------------------------------------------------------------------


@dataclass
class ValidationReport:
    genome_ids: list[str]
    fitness: np.ndarray  # (individuals, n, 3)
    params: list = field(default_factory=list)
    seed: int = 0

    @property
    def percentiles(self) -> np.ndarray:
        """``(individuals, 3 objectives, 3 percentiles)``, linear interpolation."""
        return np.moveaxis(np.percentile(self.fitness, PERCENTILES, axis=1, method="linear"), 0, -1)

    def to_csv(self, path) -> None:
        path = Path(path)
        pct = self.percentiles
        names = ("f1", "f2", "f3")
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["genome_id"] + [f"{o}_p{p}" for o in names for p in PERCENTILES])
            for gid, row in zip(self.genome_ids, pct):
                w.writerow([gid] + [f"{x:.9g}" for x in row.reshape(-1)])
        meta = {
            "seed": self.seed,
            "n": int(self.fitness.shape[1]),
            "percentiles": list(PERCENTILES),
            "objectives": ["time", "height", "speed"],
            "params": [p.to_dict() for p in self.params],
        }
        path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def validation_params(n: int, seed: int, ranges: ParamRanges = TABLE_RANGES):
    rng = make_rng((seed, _VALIDATION_TAG))
    return [sample_params(rng, ranges) for _ in range(n)]


def validate(
    individuals: Mapping[str, Genome] | Sequence[Genome],
    n: int = 250,
    seed: int = 0,
    *,
    altitudes: Sequence[float] = (2.0, 4.0, 6.0, 8.0),
    ranges: ParamRanges = TABLE_RANGES,
    workers: int = 1,
) -> ValidationReport:
    """Evaluate every individual on the same ``n`` random environments.

    Episode noise is keyed by (seed, draw, altitude) only, so two
    individuals see identical conditions.
    """
    if n < 1:
        raise DomainError("n must be at least 1")
    if not isinstance(individuals, Mapping):
        individuals = {f"ind{i}": g for i, g in enumerate(individuals)}
    ids = list(individuals)
    if not ids:
        raise DomainError("nothing to validate")
    params = validation_params(n, seed, ranges)
    fits = np.zeros((len(ids), n, 3))
    by_arch: dict[str, list[int]] = {}
    for i, gid in enumerate(ids):
        by_arch.setdefault(individuals[gid].arch, []).append(i)
    per_batch = max(1, _MAX_BATCH // (len(altitudes) * max(len(v) for v in by_arch.values())))
    for members in by_arch.values():
        genomes = [individuals[ids[i]] for i in members]
        for start in range(0, n, per_batch):
            draws = range(start, min(n, start + per_batch))
            G = [g for _ in draws for g in genomes]
            P = [params[d] for d in draws for _ in genomes]
            keys = [(seed, _VALIDATION_TAG, d) for d in draws for _ in genomes]
            f = evaluate_many(G, P, altitudes, keys, workers).reshape(len(draws), len(genomes), 3)
            fits[members, start:start + len(draws)] = f.transpose(1, 0, 2)
    return ValidationReport(ids, fits, params, seed)


# --------------------------------------------------------------------------
# Steady-state maps
# --------------------------------------------------------------------------

DEFAULT_D_GRID = np.linspace(-1.0, 2.0, 81)
DEFAULT_DD_GRID = np.linspace(-4.0, 4.0, 81)


@dataclass
class SteadyStateMap:
    d: np.ndarray
    dd: np.ndarray
    values: np.ndarray  # (len(d), len(dd)); NaN where non-convergent
    converged: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def n_nonconvergent(self) -> int:
        return int((~self.converged).sum())

    def to_csv(self, path) -> None:
        """Axis rows ``D,...`` and ``dD,...`` followed by one matrix row per D value."""
        path = Path(path)
        with path.open("w", newline="") as fh:
            fh.write("D," + ",".join(f"{x:.9g}" for x in self.d) + "\n")
            fh.write("dD," + ",".join(f"{x:.9g}" for x in self.dd) + "\n")
            for row in self.values:
                fh.write(",".join("nan" if np.isnan(x) else f"{x:.9g}" for x in row) + "\n")
        meta = {**self.meta, "nonconvergent": self.n_nonconvergent, "shape": list(self.values.shape),
                "rows": "D", "columns": "dD", "dt": STEADY_DT}
        path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")

    @classmethod
    def from_csv(cls, path) -> "SteadyStateMap":
        lines = Path(path).read_text().splitlines()
        d = np.array(lines[0].split(",")[1:], dtype=float)
        dd = np.array(lines[1].split(",")[1:], dtype=float)
        vals = np.array([ln.split(",") for ln in lines[2:]], dtype=float)
        return cls(d, dd, vals, ~np.isnan(vals))


def _check_grid(g, name):
    g = np.asarray(g, dtype=float).reshape(-1)
    if len(g) == 0 or not np.isfinite(g).all() or np.any(np.diff(g) < 0):
        raise DomainError(f"{name} grid must be non-empty, finite and sorted")
    return g


def steady_state_map(controller, d_grid=DEFAULT_D_GRID, dd_grid=DEFAULT_DD_GRID, **kw) -> SteadyStateMap:
    """Settled command for every (D, dD) grid cell.

    ``controller`` is a :class:`Genome` or any batched policy; a policy is
    reset to the full grid size.
    """
    d = _check_grid(d_grid, "D")
    dd = _check_grid(dd_grid, "dD")
    D, DD = np.meshgrid(d, dd, indexing="ij")
    meta = {}
    if isinstance(controller, Genome):
        meta["arch"] = controller.arch
        controller = NetworkPolicy([controller] * D.size)
    value, conv, _ = steady_state_grid(controller, D.ravel(), DD.ravel(), **kw)
    value = np.where(conv, value, np.nan).reshape(D.shape)
    return SteadyStateMap(d, dd, value, conv.reshape(D.shape), meta)


def gain_asymmetry(m: SteadyStateMap) -> float:
    """Ratio of fitted |dT/dD| for D > 0 to that for D < 0, at the dD closest to 0."""
    col = int(np.argmin(np.abs(m.dd)))
    y = m.values[:, col]
    slopes = []
    for mask in (m.d > 0, m.d < 0):
        ok = mask & np.isfinite(y)
        if ok.sum() < 2:
            return float("nan")
        slopes.append(abs(np.polyfit(m.d[ok], y[ok], 1)[0]))
    if slopes[1] == 0:
        return float("inf") if slopes[0] > 0 else float("nan")
    return slopes[0] / slopes[1]
