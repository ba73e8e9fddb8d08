"""Generational loop with tournament selection, elitism and a phenotype archive.

Randomness is derived from ``(master_seed, generation, slot)`` for every
offspring slot, so a run is reproducible regardless of evaluation order.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .fitness import FitnessEvaluator, FitnessTaskConfig, check_bindable
from .grammar import Grammar, load_grammar
from .metrics import unique_viable_behaviors
from .records import N_BINS, BestIndividual, GenerationStats, RunRecord
from .sge import (
    Genotype,
    MutationPolicy,
    Phenotype,
    crossover,
    map_genotype,
    mutate,
    random_genotype,
)

__all__ = [
    "APPROACHES",
    "Archive",
    "ArchiveEntry",
    "EvolutionConfig",
    "GenerationStats",
    "Individual",
    "RunState",
    "assign_fitness",
    "initial_state",
    "run",
    "step_generation",
    "tournament_select",
    "uses_gradient",
]

APPROACHES = ("FMX", "FM", "OM", "OMX")
PRESELECTION_FITNESS = 0.1
GRADIENT_TOKEN = "grad"

# approach -> (crossover rate, heterogeneous mutation?, default grammar)
_PRESETS = {
    "FMX": (0.01, True, "fm"),
    "FM": (0.0, True, "fm"),
    "OM": (0.0, False, "original"),
    "OMX": (0.9, False, "original"),
}


@dataclass(frozen=True)
class EvolutionConfig:
    approach: str = "FMX"
    population_size: int = 100
    generations: int = 200
    elitism_fraction: float = 0.01
    tournament_size: int = 2
    max_depth: int = 17
    crossover_rate: float = 0.01
    mutation_policy: MutationPolicy = field(default_factory=MutationPolicy.heterogeneous)
    master_seed: int = 0
    task: FitnessTaskConfig = field(default_factory=FitnessTaskConfig)
    grammar: str = "fm"

    def __post_init__(self):
        if self.population_size < 1 or self.tournament_size < 1 or self.max_depth < 1:
            raise ValueError("population_size, tournament_size and max_depth must be positive")
        if self.generations < 0:
            raise ValueError("generations must be non-negative")
        if not 0.0 <= self.elitism_fraction <= 1.0 or not 0.0 <= self.crossover_rate <= 1.0:
            raise ValueError("elitism_fraction and crossover_rate must be in [0, 1]")

    @classmethod
    def preset(cls, approach: str, **overrides) -> "EvolutionConfig":
        """Configuration for one of FMX, FM, OM, OMX; keyword arguments override fields."""
        try:
            xo, hetero, grammar = _PRESETS[approach]
        except KeyError:
            raise ValueError(f"unknown approach {approach!r}; expected one of {APPROACHES}") from None
        policy = MutationPolicy.heterogeneous() if hetero else MutationPolicy.homogeneous(0.15)
        base = cls(approach=approach, crossover_rate=xo, mutation_policy=policy, grammar=grammar)
        return replace(base, **overrides)

    @property
    def n_elites(self) -> int:
        return min(self.population_size, math.ceil(self.elitism_fraction * self.population_size - 1e-9))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mutation_policy"] = self.mutation_policy.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EvolutionConfig":
        d = dict(d)
        if "mutation_policy" in d and not isinstance(d["mutation_policy"], MutationPolicy):
            d["mutation_policy"] = MutationPolicy.from_dict(d["mutation_policy"])
        if "task" in d and not isinstance(d["task"], FitnessTaskConfig):
            d["task"] = FitnessTaskConfig(**d["task"])
        return cls(**d)


@dataclass
class Individual:
    genotype: Genotype
    phenotype: Phenotype
    active: dict[str, int]
    fitness: float = math.nan
    evaluated: bool = False
    provenance: str = ""


@dataclass
class ArchiveEntry:
    fitness: float
    first_seen_generation: int
    evaluation_count_at_insert: int


@dataclass
class Archive:
    """Run-scoped memo of canonical phenotype -> fitness."""

    entries: dict[str, ArchiveEntry] = field(default_factory=dict)
    evaluations_performed: int = 0

    def __contains__(self, canonical: str) -> bool:
        return canonical in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def get(self, canonical: str) -> ArchiveEntry | None:
        return self.entries.get(canonical)

    def insert(self, canonical: str, fitness: float, generation: int, evaluated: bool) -> ArchiveEntry:
        if canonical in self.entries:
            raise KeyError(f"{canonical!r} is already archived")
        if evaluated:
            self.evaluations_performed += 1
        entry = ArchiveEntry(fitness, generation, self.evaluations_performed)
        self.entries[canonical] = entry
        return entry


def uses_gradient(phenotype: Phenotype) -> bool:
    return any(leaf == GRADIENT_TOKEN for leaf in phenotype.root.leaves())


def assign_fitness(
    individual: Individual, archive: Archive, evaluator: Callable[[Phenotype], float], generation: int = 0
) -> tuple[float, str]:
    """Give ``individual`` a fitness, training only when strictly necessary.

    Phenotypes without the gradient get the placeholder 0.1 without training.
    Phenotypes already in the archive reuse the stored value. Everything else
    is trained once and archived. Returns ``(fitness, provenance)``.
    """
    key = individual.phenotype.canonical
    if not uses_gradient(individual.phenotype):
        if key not in archive:
            archive.insert(key, PRESELECTION_FITNESS, generation, evaluated=False)
        fitness, provenance = PRESELECTION_FITNESS, "preselected"
    elif key in archive:
        fitness, provenance = archive.entries[key].fitness, "archive_hit"
    else:
        fitness = float(evaluator(individual.phenotype))
        archive.insert(key, fitness, generation, evaluated=True)
        provenance = "evaluated"
    individual.fitness = fitness
    individual.evaluated = provenance == "evaluated"
    individual.provenance = provenance
    return fitness, provenance


def tournament_select(population: Sequence[Individual], k: int, rng: np.random.Generator) -> Individual:
    """Fittest of ``k`` draws with replacement; ties broken uniformly."""
    picks = rng.integers(len(population), size=k)
    if k == 1:
        return population[int(picks[0])]
    fits = np.array([population[i].fitness for i in picks])
    winners = picks[fits == fits.max()]
    if winners.size == 1:
        return population[int(winners[0])]
    return population[int(winners[rng.integers(winners.size)])]


@dataclass
class RunState:
    generation: int
    population: list[Individual]
    archive: Archive
    best: Individual
    best_generation: int


def _slot_rng(seed: int, generation: int, slot: int) -> np.random.Generator:
    return np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, generation, slot])


def _stats(generation: int, population: Sequence[Individual], provenances: Sequence[str]) -> GenerationStats:
    fits = np.array([ind.fitness for ind in population])
    hist, _ = np.histogram(np.clip(fits, 0.0, 1.0), bins=N_BINS, range=(0.0, 1.0))
    return GenerationStats(
        generation=generation,
        best_fitness=float(fits.max()),
        mean_fitness=float(fits.mean()),
        fitness_histogram=[int(h) for h in hist],
        new_evaluations=sum(p == "evaluated" for p in provenances),
        archive_hits=sum(p == "archive_hit" for p in provenances),
        preselection_rejections=sum(p == "preselected" for p in provenances),
    )


def _best_of(population: Sequence[Individual]) -> Individual:
    # max() keeps the earliest of equal maxima
    return max(population, key=lambda ind: ind.fitness)


def initial_state(
    config: EvolutionConfig, grammar: Grammar, evaluator: Callable[[Phenotype], float]
) -> tuple[RunState, GenerationStats]:
    archive = Archive()
    population, provenances = [], []
    for slot in range(config.population_size):
        rng = _slot_rng(config.master_seed, 0, slot)
        g = random_genotype(grammar, config.max_depth, rng)
        out = map_genotype(grammar, g, config.max_depth, rng)
        ind = Individual(g, out.phenotype, out.consumed)
        provenances.append(assign_fitness(ind, archive, evaluator, 0)[1])
        population.append(ind)
    best = _best_of(population)
    return RunState(0, population, archive, best, 0), _stats(0, population, provenances)


def make_offspring(
    population: Sequence[Individual], config: EvolutionConfig, grammar: Grammar, rng: np.random.Generator
) -> Individual:
    """One child: tournament parent, optional crossover, then per-codon mutation."""
    a = tournament_select(population, config.tournament_size, rng)
    if config.crossover_rate > 0.0 and rng.random() < config.crossover_rate:
        b = tournament_select(population, config.tournament_size, rng)
        genotype = crossover(a.genotype, b.genotype, grammar, rng)
        active = map_genotype(grammar, genotype, config.max_depth, rng).consumed
    else:
        genotype, active = a.genotype, a.active
    child = mutate(genotype, grammar, config.mutation_policy, active, rng)
    out = map_genotype(grammar, child, config.max_depth, rng)
    return Individual(child, out.phenotype, out.consumed)


def step_generation(
    state: RunState, config: EvolutionConfig, grammar: Grammar, evaluator: Callable[[Phenotype], float]
) -> tuple[RunState, GenerationStats]:
    """Produce and score the next population."""
    gen = state.generation + 1
    pop = state.population
    order = sorted(range(len(pop)), key=lambda i: (-pop[i].fitness, i))
    nxt = [pop[i] for i in order[: config.n_elites]]
    provenances = []
    for slot in range(len(nxt), config.population_size):
        rng = _slot_rng(config.master_seed, gen, slot)
        child = make_offspring(pop, config, grammar, rng)
        provenances.append(assign_fitness(child, state.archive, evaluator, gen)[1])
        nxt.append(child)
    best, best_gen = state.best, state.best_generation
    cand = _best_of(nxt)
    if cand.fitness > best.fitness:
        best, best_gen = cand, gen
    return RunState(gen, nxt, state.archive, best, best_gen), _stats(gen, nxt, provenances)


def resolve_grammar(config: EvolutionConfig) -> Grammar:
    grammar = load_grammar(config.grammar)
    check_bindable(grammar)
    return grammar


def run(
    config: EvolutionConfig,
    evaluator: Callable[[Phenotype], float] | None = None,
    grammar: Grammar | None = None,
    on_generation: Callable[[RunState, GenerationStats], None] | None = None,
) -> RunRecord:
    """Evolve for ``config.generations`` generations and summarise the run."""
    grammar = grammar or resolve_grammar(config)
    evaluator = evaluator or FitnessEvaluator(config.task)
    calls = 0

    def counted(ph: Phenotype) -> float:
        nonlocal calls
        calls += 1
        return evaluator(ph)

    state, stats = initial_state(config, grammar, counted)
    history = [stats]
    if on_generation:
        on_generation(state, stats)
    for _ in range(config.generations):
        state, stats = step_generation(state, config, grammar, counted)
        history.append(stats)
        if on_generation:
            on_generation(state, stats)

    best = state.best
    return RunRecord(
        config=config.to_dict(),
        generation_stats=history,
        best_individual=BestIndividual(
            genotype={k: list(v) for k, v in best.genotype.codons.items()},
            canonical=best.phenotype.canonical,
            fitness=best.fitness,
            generation=state.best_generation,
        ),
        unique_viable_count=unique_viable_behaviors(state.archive),
        evaluations_performed=state.archive.evaluations_performed,
        archive_size=len(state.archive),
        training_runs=calls,
    )
