"""
Real-coded genetic algorithm over element resistivities.

Each generation is evaluated (optionally in parallel), the ``elite_count``
best individuals are copied unchanged, and the rest of the population is
refilled by tournament selection, blend crossover and Gaussian mutation.
All random draws happen sequentially in a fixed order, so a seed fixes the
run regardless of how many evaluation workers are used.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ConfigurationError, DomainError
from .forward import MeasurementSet, Protocol
from .mesh import Mesh
from .objective import Fitness, ObjectiveSpec, ObjectiveValue
from .results import ReconResult, TraceRow

__all__ = [
    "GAConfig",
    "Individual",
    "init_population",
    "mutate",
    "crossover",
    "select",
    "run_ga",
]

INIT_MODES = ("uniform", "around-warm-start")


@dataclass(frozen=True)
class GAConfig:
    """Genetic algorithm settings.

    ``mutation_rate`` is the per-gene mutation probability; ``None`` means
    ``1 / n_genes``.  ``mutation_sigma`` is relative to the width of
    ``bounds``.  ``init="around-warm-start"`` draws the non-seed individuals
    as log-normal perturbations (``init_spread``) of the warm start instead
    of uniformly from the bounds.
    """

    population_size: int = 200
    max_generations: int = 300
    crossover_fraction: float = 0.8
    mutation_sigma: float = 0.05
    mutation_rate: Optional[float] = None
    elite_count: int = 2
    tournament_size: int = 2
    blend_range: tuple[float, float] = (-0.25, 1.25)
    bounds: tuple[float, float] = (0.2, 5.0)
    stability_tol: float = 1e-4
    stability_window: int = 20
    objective_tol: float = 1e-6
    rng_seed: int = 0
    init: str = "uniform"
    init_spread: float = 0.1
    workers: int = 1

    def __post_init__(self):
        lo, hi = self.bounds
        if not (0 < lo <= hi and math.isfinite(hi)):
            raise ConfigurationError(f"bounds must satisfy 0 < rho_min <= rho_max, got {self.bounds}")
        if self.population_size < 1:
            raise ConfigurationError("population_size must be positive")
        if not 1 <= self.elite_count < self.population_size:
            raise ConfigurationError(
                f"elite_count must be in [1, population_size), got {self.elite_count}"
            )
        if self.max_generations < 0:
            raise ConfigurationError("max_generations must be >= 0")
        if not 0.0 <= self.crossover_fraction <= 1.0:
            raise ConfigurationError("crossover_fraction must lie in [0, 1]")
        if self.mutation_sigma < 0:
            raise ConfigurationError("mutation_sigma must be >= 0")
        if self.mutation_rate is not None and not 0.0 <= self.mutation_rate <= 1.0:
            raise ConfigurationError("mutation_rate must lie in [0, 1]")
        if self.stability_tol <= 0 or self.objective_tol <= 0:
            raise ConfigurationError("tolerances must be > 0")
        if self.tournament_size < 1 or self.stability_window < 1 or self.workers < 1:
            raise ConfigurationError("tournament_size, stability_window and workers must be >= 1")
        if self.init not in INIT_MODES:
            raise ConfigurationError(f"init must be one of {INIT_MODES}, got {self.init!r}")

    def replace(self, **changes) -> "GAConfig":
        return replace(self, **changes)


@dataclass
class Individual:
    genome: np.ndarray
    fitness: Optional[float] = None
    value: Optional[ObjectiveValue] = field(default=None, repr=False)

    def copy(self) -> "Individual":
        return Individual(self.genome.copy(), self.fitness, self.value)


def _clamp(genome: np.ndarray, config: GAConfig) -> np.ndarray:
    return np.clip(genome, config.bounds[0], config.bounds[1])


def init_population(
    config: GAConfig,
    n_genes: int,
    seed_individual: Optional[Individual | np.ndarray] = None,
    rng: Optional[np.random.Generator] = None,
) -> list[Individual]:
    """Draw the initial population.

    A ``seed_individual`` (e.g. a Gauss-Newton estimate) is clamped to the
    bounds and placed at index 0; elitism then keeps it, or something
    better, for the whole run.
    """
    if rng is None:
        rng = np.random.default_rng(config.rng_seed)
    lo, hi = config.bounds
    seed = None
    if seed_individual is not None:
        seed = seed_individual.genome if isinstance(seed_individual, Individual) else seed_individual
        seed = _clamp(np.asarray(seed, dtype=float), config)
        if seed.shape != (n_genes,):
            raise DomainError(f"seed individual has {seed.size} genes, expected {n_genes}")

    if config.init == "around-warm-start" and seed is not None:
        noise = rng.standard_normal((config.population_size, n_genes))
        genomes = _clamp(seed * np.exp(config.init_spread * noise), config)
    else:
        genomes = lo + (hi - lo) * rng.random((config.population_size, n_genes))
    pop = [Individual(g) for g in genomes]
    if seed is not None:
        pop[0] = Individual(seed.copy())
    return pop


def mutate(ind: Individual, config: GAConfig, rng: np.random.Generator) -> Individual:
    """Gaussian mutation, each gene with probability ``mutation_rate``."""
    g = ind.genome
    rate = config.mutation_rate if config.mutation_rate is not None else 1.0 / len(g)
    hit = rng.random(len(g)) < rate
    step = rng.standard_normal(len(g)) * (config.mutation_sigma * (config.bounds[1] - config.bounds[0]))
    return Individual(_clamp(g + np.where(hit, step, 0.0), config))


def crossover(
    a: Individual, b: Individual, config: GAConfig, rng: np.random.Generator
) -> tuple[Individual, Individual]:
    """Intermediate (blend) crossover with a per-gene ratio from ``blend_range``."""
    if a.genome.shape != b.genome.shape:
        raise DomainError(f"parent genomes differ in length: {a.genome.size} vs {b.genome.size}")
    lam = rng.uniform(config.blend_range[0], config.blend_range[1], a.genome.size)
    c1 = lam * a.genome + (1.0 - lam) * b.genome
    c2 = (1.0 - lam) * a.genome + lam * b.genome
    return Individual(_clamp(c1, config)), Individual(_clamp(c2, config))


def _tournament(fitness: np.ndarray, rng: np.random.Generator, size: int) -> int:
    picks = rng.integers(0, len(fitness), size)
    # lowest fitness wins; equal fitness goes to the lower population index
    return int(min(picks, key=lambda i: (fitness[i], i)))


def _fitness_array(population: Sequence[Individual]) -> np.ndarray:
    if any(ind.fitness is None for ind in population):
        raise RuntimeError("selection requires every individual to be evaluated")
    return np.array([ind.fitness for ind in population])


def select(
    population: Sequence[Individual], rng: np.random.Generator, size: int = 2
) -> tuple[Individual, Individual]:
    """Two parents, each the fittest of ``size`` uniform draws (with replacement)."""
    if not population:
        raise DomainError("cannot select from an empty population")
    fit = _fitness_array(population)
    return population[_tournament(fit, rng, size)], population[_tournament(fit, rng, size)]


def _evaluate(population, fitness, pool) -> int:
    todo = [ind for ind in population if ind.fitness is None]
    if pool is None:
        values = [fitness(ind.genome) for ind in todo]
    else:
        values = list(pool.map(lambda ind: fitness(ind.genome), todo))
    for ind, val in zip(todo, values):
        ind.value = val
        ind.fitness = float(val.total)
    return len(todo)


def _best(population) -> Individual:
    return min(enumerate(population), key=lambda t: (t[1].fitness, t[0]))[1]


def _breed(population, config: GAConfig, rng) -> list[Individual]:
    fit = _fitness_array(population)
    order = np.lexsort((np.arange(len(fit)), fit))
    nxt = [population[i].copy() for i in order[: config.elite_count]]
    while len(nxt) < config.population_size:
        i = _tournament(fit, rng, config.tournament_size)
        j = _tournament(fit, rng, config.tournament_size)
        if rng.random() < config.crossover_fraction:
            kids = crossover(population[i], population[j], config, rng)
        else:
            kids = (population[i],)
        for kid in kids:
            if len(nxt) < config.population_size:
                nxt.append(mutate(kid, config, rng))
    return nxt


def run_ga(
    mesh: Mesh,
    protocol: Protocol,
    y: MeasurementSet,
    spec: ObjectiveSpec,
    config: GAConfig,
    warm_start: Optional[Individual | np.ndarray] = None,
    fitness: Optional[Callable[[np.ndarray], ObjectiveValue]] = None,
    clock: Callable[[], float] = time.perf_counter,
) -> ReconResult:
    """Minimize the objective with the genetic algorithm.

    Stops at the first of: the best objective drops below
    ``objective_tol``; the best genome's relative change stays below
    ``stability_tol`` for ``stability_window`` consecutive generations;
    ``max_generations`` breeding rounds have been evaluated.

    ``fitness`` overrides the objective built from ``mesh``/``protocol``/
    ``y``/``spec``; it must be safe to call from several threads when
    ``config.workers > 1``.
    """
    if fitness is None:
        fitness = Fitness(mesh, protocol, y, spec)
    n_genes = mesh.n_elements
    rng = np.random.default_rng(config.rng_seed)
    t_start = clock()
    pool = ThreadPoolExecutor(config.workers) if config.workers > 1 else None
    try:
        population = init_population(config, n_genes, warm_start, rng)
        trace: list[TraceRow] = []
        values: list[ObjectiveValue] = []
        solves = 0
        stable = 0
        prev_best = None
        generation = 0
        reason = "budget"
        while True:
            t0 = clock()
            n_eval = _evaluate(population, fitness, pool)
            solves += n_eval
            best = _best(population)
            mean = float(np.mean([ind.fitness for ind in population]))
            values.append(best.value)
            if prev_best is not None:
                scale = float(np.max(np.abs(prev_best)))
                change = float(np.max(np.abs(best.genome - prev_best))) / scale
                stable = stable + 1 if change < config.stability_tol else 0
            prev_best = best.genome.copy()

            if best.fitness < config.objective_tol:
                reason = "objective"
            elif stable >= config.stability_window:
                reason = "stability"
            elif generation >= config.max_generations:
                reason = "budget"
            else:
                reason = None
            if reason is None:
                population = _breed(population, config, rng)
            trace.append(TraceRow(generation, best.fitness, mean, n_eval, 1e3 * (clock() - t0), "ga"))
            if reason is not None:
                break
            generation += 1
    finally:
        if pool is not None:
            pool.shutdown()

    return ReconResult(
        rho_est=best.genome.copy(),
        objective=best.value,
        termination_reason=reason,
        trace=trace,
        objective_trace=values,
        forward_solve_count=solves,
        jacobian_count=0,
        wall_time=clock() - t_start,
        generations=generation,
        solver="ga",
    )
