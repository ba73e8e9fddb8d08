"""Plain records produced by a run and consumed by the analysis side."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

N_BINS = 20


@dataclass
class GenerationStats:
    generation: int
    best_fitness: float
    mean_fitness: float
    fitness_histogram: list[int]
    new_evaluations: int
    archive_hits: int
    preselection_rejections: int

    @property
    def assignments(self) -> int:
        return self.new_evaluations + self.archive_hits + self.preselection_rejections


@dataclass
class BestIndividual:
    genotype: dict[str, list[int]]
    canonical: str
    fitness: float
    generation: int


@dataclass
class RunRecord:
    config: dict
    generation_stats: list[GenerationStats]
    best_individual: BestIndividual
    unique_viable_count: int
    evaluations_performed: int
    archive_size: int
    training_runs: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def approach(self) -> str:
        return self.config.get("approach", "")

    @property
    def seed(self) -> int:
        return self.config.get("master_seed", 0)

    @property
    def final_mean_fitness(self) -> float:
        return self.generation_stats[-1].mean_fitness

    def best_so_far(self) -> list[float]:
        out, best = [], float("-inf")
        for s in self.generation_stats:
            best = max(best, s.best_fitness)
            out.append(best)
        return out

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        return cls(
            config=d["config"],
            generation_stats=[GenerationStats(**g) for g in d["generation_stats"]],
            best_individual=BestIndividual(**d["best_individual"]),
            unique_viable_count=int(d["unique_viable_count"]),
            evaluations_performed=int(d["evaluations_performed"]),
            archive_size=int(d["archive_size"]),
            training_runs=int(d.get("training_runs", 0)),
            extra=d.get("extra", {}),
        )

    @classmethod
    def from_json(cls, text: str) -> "RunRecord":
        return cls.from_dict(json.loads(text))
