"""Mutation-only (mu + lambda) evolution with NSGA-II survivor selection.

Every generation draws one environment, re-evaluates the parents on it
together with the new offspring, and keeps the best ``mu`` by non-domination
rank and crowding distance.  All random streams derive from the master seed
through fixed spawn keys, so a run does not depend on evaluation order or on
the number of workers.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from divland.errors import DomainError
from divland.neuro import ARCHS, Genome, NetworkPolicy, mutate, random_genome
from divland.sim import (
    CEILING_HEIGHT,
    LANDED_HEIGHT,
    TABLE_RANGES,
    FitnessVector,
    ParamRanges,
    SimParams,
    make_rng,
    sample_params,
    simulate_batch,
)

# spawn-key tags under the master seed
_INIT, _PARAMS, _EPISODE, _MUTATION = 0, 1, 2, 3

ARCHIVE_FILE = "archive.jsonl"
GENOMES_FILE = "genomes.json"


@dataclass
class Individual:
    genome: Genome
    genome_id: str
    fitness: np.ndarray | None = None
    rank: int = -1
    crowding: float = 0.0
    generation: int = 0


@dataclass(frozen=True)
class EvoConfig:
    generations: int = 250
    mu: int = 100
    lam: int = 100
    altitudes: tuple[float, ...] = (2.0, 4.0, 6.0, 8.0)
    mutation_rate: float = 0.1
    mutation_scale: float = 0.1
    seed: int = 0
    arch: str = "NN"
    ranges: ParamRanges = TABLE_RANGES
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "altitudes", tuple(float(a) for a in self.altitudes))
        if self.arch not in ARCHS:
            raise DomainError(f"unknown architecture {self.arch!r}")
        if self.mu < 1 or self.lam < 0 or self.generations < 0:
            raise DomainError("need mu >= 1, lam >= 0 and generations >= 0")
        if not self.altitudes or any(not LANDED_HEIGHT < a < CEILING_HEIGHT for a in self.altitudes):
            raise DomainError(f"altitudes must be non-empty and inside ({LANDED_HEIGHT}, {CEILING_HEIGHT})")
        if not 0.0 <= self.mutation_rate <= 1.0 or self.mutation_scale < 0:
            raise DomainError("mutation rate must be in [0, 1] and scale non-negative")
        if self.workers < 1:
            raise DomainError("workers must be >= 1")

    @classmethod
    def desk(cls, **kw) -> "EvoConfig":
        """Small preset: mu = lambda = 50 for 50 generations."""
        return cls(**{"generations": 50, "mu": 50, "lam": 50, **kw})

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__ if k not in ("ranges", "workers")}
        d["altitudes"] = list(self.altitudes)
        d["ranges"] = {k: list(getattr(self.ranges, k)) for k in self.ranges.__dataclass_fields__}
        return d


# --------------------------------------------------------------------------
# NSGA-II machinery
# --------------------------------------------------------------------------


def dominates(a, b) -> bool:
    """True when ``a`` is no worse everywhere and better somewhere (minimization)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise DomainError("fitness vectors differ in dimension")
    return bool(np.all(a <= b) and np.any(a < b))


def _as_objectives(fits) -> np.ndarray:
    F = np.asarray(fits, dtype=float)
    if F.ndim != 2:
        F = F.reshape(len(F), -1)
    if not np.isfinite(F).all():
        raise DomainError("unevaluated or non-finite fitness in population")
    return F


def nondominated_fronts(fits) -> list[np.ndarray]:
    """Partition row indices of ``fits`` into successive Pareto fronts."""
    F = _as_objectives(fits)
    if len(F) == 0:
        return []
    no_worse = (F[:, None, :] <= F[None, :, :]).all(axis=2)
    better = (F[:, None, :] < F[None, :, :]).any(axis=2)
    dom = no_worse & better  # dom[i, j]: i dominates j
    count = dom.sum(axis=0)
    fronts = []
    current = np.flatnonzero(count == 0)
    while current.size:
        fronts.append(current)
        count = count - dom[current].sum(axis=0)
        count[current] = -1
        current = np.flatnonzero(count == 0)
    return fronts


def non_dominated_sort(pop: Sequence[Individual]) -> list[list[Individual]]:
    """Sort individuals into fronts and write each one's rank back."""
    if any(ind.fitness is None for ind in pop):
        raise DomainError("population contains unevaluated individuals")
    fronts = nondominated_fronts([ind.fitness for ind in pop])
    out = []
    for r, idx in enumerate(fronts):
        for i in idx:
            pop[i].rank = r
        out.append([pop[i] for i in idx])
    return out


def crowding_distance(front) -> np.ndarray:
    """NSGA-II crowding distance of each member of one front.

    Identical fitness vectors share the distance of their common point.
    Objectives with zero spread are skipped; on the others, the extreme
    points get ``inf``.
    """
    F = np.asarray(front, dtype=float)
    if F.ndim != 2:
        F = F.reshape(len(F), -1)
    n = len(F)
    if n == 0:
        raise DomainError("empty front")
    if n <= 2:
        return np.full(n, np.inf)
    uniq, inv = np.unique(F, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    dist = np.zeros(len(uniq))
    if len(uniq) <= 2:
        dist[:] = np.inf
        return dist[inv]
    for col in uniq.T:
        span = col.max() - col.min()
        if span == 0:
            continue
        order = np.argsort(col, kind="stable")
        dist[order[0]] = dist[order[-1]] = np.inf
        dist[order[1:-1]] += (col[order[2:]] - col[order[:-2]]) / span
    return dist[inv]


def rank_and_crowd(fits) -> tuple[np.ndarray, np.ndarray]:
    F = _as_objectives(fits)
    rank = np.zeros(len(F), dtype=np.int64)
    crowd = np.zeros(len(F))
    for r, idx in enumerate(nondominated_fronts(F)):
        rank[idx] = r
        crowd[idx] = crowding_distance(F[idx])
    return rank, crowd


def nsga2_truncate(fits, mu: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Indices (ascending) of the ``mu`` survivors, plus rank and crowding of all.

    Candidates are ordered by rank, then by larger crowding distance, then
    by index.
    """
    rank, crowd = rank_and_crowd(fits)
    order = np.lexsort((np.arange(len(rank)), -crowd, rank))
    return np.sort(order[:mu]), rank, crowd


# --------------------------------------------------------------------------
# Evaluation
# --------------------------------------------------------------------------


def _run_key(seed, run: int) -> tuple:
    base = tuple(seed) if isinstance(seed, (tuple, list)) else (int(seed),)
    return base + (run,)


def evaluate_many(
    genomes: Sequence[Genome],
    params: SimParams | Sequence[SimParams],
    altitudes: Sequence[float],
    keys: Sequence,
    workers: int = 1,
) -> np.ndarray:
    """Mean fitness over the altitude runs for each genome; ``(n, 3)``.

    ``keys[i]`` seeds genome ``i``; run ``j`` uses ``keys[i] + (j,)``.
    ``params`` may be one environment or one per genome.
    """
    alts = list(altitudes)
    if not alts:
        raise DomainError("at least one altitude is required")
    n, m = len(genomes), len(alts)
    if n == 0:
        return np.zeros((0, 3))
    if not isinstance(params, SimParams):
        params = [p for p in params for _ in range(m)]
    policy = NetworkPolicy([g for g in genomes for _ in range(m)])
    seeds = [_run_key(k, j) for k in keys for j in range(m)]
    out = simulate_batch(policy, np.tile(alts, n), params, seeds, workers=workers)
    return out.fitness().reshape(n, m, 3).mean(axis=1)


def evaluate(genome: Genome, params: SimParams, altitudes: Sequence[float], seed) -> FitnessVector:
    """Component-wise mean fitness of one genome over the altitude runs."""
    f = evaluate_many([genome], params, altitudes, [seed])[0]
    return FitnessVector(*map(float, f))


def generation_params(config: EvoConfig, gen: int) -> SimParams:
    return sample_params(make_rng((config.seed, _PARAMS, gen)), config.ranges)


# --------------------------------------------------------------------------
# Evolution loop
# --------------------------------------------------------------------------


@dataclass
class GenerationRecord:
    gen: int
    params: SimParams
    population: list[Individual]

    def to_json(self) -> dict:
        return {
            "gen": self.gen,
            "params": self.params.to_dict(),
            "individuals": [
                {
                    "genome_id": ind.genome_id,
                    "fitness": [float(x) for x in ind.fitness],
                    "rank": int(ind.rank),
                    "crowding": None if math.isinf(ind.crowding) else float(ind.crowding),
                }
                for ind in self.population
            ],
        }

    def fitness(self) -> np.ndarray:
        return np.array([ind.fitness for ind in self.population])


def initial_population(config: EvoConfig) -> list[Individual]:
    rng = make_rng((config.seed, _INIT))
    return [Individual(random_genome(config.arch, rng), f"g0000-{i:04d}") for i in range(config.mu)]


def _evaluate_pop(pop, config, gen, params):
    keys = [(config.seed, _EPISODE, gen, i) for i in range(len(pop))]
    fits = evaluate_many([ind.genome for ind in pop], params, config.altitudes, keys, config.workers)
    for ind, f in zip(pop, fits):
        ind.fitness = f
        ind.generation = gen


def generation_step(pop: list[Individual], config: EvoConfig, gen: int) -> GenerationRecord:
    """Advance one generation; returns the survivors with their shared-environment fitness."""
    if len(pop) != config.mu:
        raise DomainError(f"population has {len(pop)} members, expected mu={config.mu}")
    params = generation_params(config, gen)
    rng = make_rng((config.seed, _MUTATION, gen))
    parents = [replace(ind, fitness=None) for ind in pop]
    offspring = []
    for j in range(config.lam):
        parent = parents[int(rng.integers(len(parents)))]
        child = mutate(parent.genome, rng, config.mutation_rate, config.mutation_scale)
        offspring.append(Individual(child, f"g{gen:04d}-{j:04d}"))
    pool = parents + offspring
    _evaluate_pop(pool, config, gen, params)
    keep, rank, crowd = nsga2_truncate([ind.fitness for ind in pool], config.mu)
    for ind, r, c in zip(pool, rank, crowd):
        ind.rank, ind.crowding = int(r), float(c)
    return GenerationRecord(gen, params, [pool[i] for i in keep])


@dataclass
class RunArchive:
    config: EvoConfig
    records: list[GenerationRecord] = field(default_factory=list)
    genomes: dict[str, Genome] = field(default_factory=dict)

    def add(self, rec: GenerationRecord) -> None:
        self.records.append(rec)
        for ind in rec.population:
            self.genomes.setdefault(ind.genome_id, ind.genome)

    @property
    def final(self) -> GenerationRecord:
        return self.records[-1]

    def front(self, gen: int = -1) -> list[Individual]:
        """Rank-0 members of a generation's archived population."""
        pop = self.records[gen].population
        idx = nondominated_fronts([ind.fitness for ind in pop])[0]
        return [pop[i] for i in idx]

    def write(self, directory) -> list[Path]:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        arch = d / ARCHIVE_FILE
        with arch.open("w") as fh:
            for rec in self.records:
                fh.write(json.dumps(rec.to_json(), sort_keys=True, allow_nan=False) + "\n")
        gen_file = d / GENOMES_FILE
        payload = {"config": self.config.to_dict(), "genomes": {k: g.to_dict() for k, g in sorted(self.genomes.items())}}
        gen_file.write_text(json.dumps(payload, sort_keys=True, allow_nan=False) + "\n")
        return [arch, gen_file]

    @classmethod
    def read(cls, directory) -> "RunArchive":
        d = Path(directory)
        payload = json.loads((d / GENOMES_FILE).read_text())
        cfg = dict(payload["config"])
        cfg["ranges"] = ParamRanges(**{k: tuple(v) for k, v in cfg["ranges"].items()})
        cfg["altitudes"] = tuple(cfg["altitudes"])
        archive = cls(EvoConfig(**cfg))
        archive.genomes = {k: Genome.from_dict(v) for k, v in payload["genomes"].items()}
        for line in (d / ARCHIVE_FILE).read_text().splitlines():
            raw = json.loads(line)
            pop = [
                Individual(
                    archive.genomes[i["genome_id"]],
                    i["genome_id"],
                    np.array(i["fitness"]),
                    i["rank"],
                    math.inf if i["crowding"] is None else i["crowding"],
                    raw["gen"],
                )
                for i in raw["individuals"]
            ]
            archive.records.append(GenerationRecord(raw["gen"], SimParams.from_dict(raw["params"]), pop))
        return archive


def evolve(config: EvoConfig, callback: Callable[[GenerationRecord], None] | None = None) -> RunArchive:
    """Run ``config.generations`` generations from a random population."""
    archive = RunArchive(config)
    pop = initial_population(config)
    params = generation_params(config, 0)
    _evaluate_pop(pop, config, 0, params)
    rank, crowd = rank_and_crowd([ind.fitness for ind in pop])
    for ind, r, c in zip(pop, rank, crowd):
        ind.rank, ind.crowding = int(r), float(c)
    rec = GenerationRecord(0, params, pop)
    archive.add(rec)
    if callback:
        callback(rec)
    for gen in range(1, config.generations + 1):
        rec = generation_step(rec.population, config, gen)
        archive.add(rec)
        if callback:
            callback(rec)
    return archive
