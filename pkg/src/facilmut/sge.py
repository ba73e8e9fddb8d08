"""Structured grammatical evolution: genotypes, mapping and variation.

A genotype keeps one codon list per non-terminal. Mapping walks a leftmost
derivation and, every time a non-terminal is expanded, reads the next unused
codon from that non-terminal's list. Mutation rates are looked up per
non-terminal through a :class:`MutationPolicy`, which is what makes
heterogeneous ("facilitated") mutation possible.
"""

from __future__ import annotations

import json
from collections.abc import Mapping
from dataclasses import dataclass, field

import numpy as np

from .grammar import Grammar, Production

__all__ = [
    "Genotype",
    "MappingError",
    "MappingOutcome",
    "MutationPolicy",
    "Node",
    "Phenotype",
    "canonicalize",
    "crossover",
    "map_genotype",
    "mutate",
    "random_genotype",
]


class MappingError(RuntimeError):
    pass


@dataclass
class Genotype:
    codons: dict[str, list[int]]

    @classmethod
    def empty(cls, grammar: Grammar) -> "Genotype":
        return cls({name: [] for name in grammar.names})

    def copy(self) -> "Genotype":
        return Genotype({k: list(v) for k, v in self.codons.items()})

    def validate(self, grammar: Grammar) -> None:
        for nt in grammar.nonterminals:
            if nt.name not in self.codons:
                raise ValueError(f"missing codon list for <{nt.name}>")
            n = len(nt.productions)
            for c in self.codons[nt.name]:
                if not 0 <= c < n:
                    raise ValueError(f"codon {c} out of range for <{nt.name}> ({n} productions)")

    def to_json(self) -> str:
        return json.dumps(self.codons, sort_keys=False)

    @classmethod
    def from_json(cls, text: str | Mapping) -> "Genotype":
        data = json.loads(text) if isinstance(text, str) else text
        return cls({str(k): [int(c) for c in v] for k, v in data.items()})


@dataclass(frozen=True)
class Node:
    """Expression tree node. Leaves carry a terminal token and no children."""

    label: str
    children: tuple["Node", ...] = ()

    @property
    def is_leaf(self) -> bool:
        return not self.children

    def leaves(self):
        stack = [self]
        while stack:
            n = stack.pop()
            if n.is_leaf:
                yield n.label
            else:
                stack.extend(reversed(n.children))


def canonicalize(root: Node) -> str:
    """Fully parenthesized infix rendering, e.g. ``(grad + 0.0)``.

    Purely syntactic: no reordering of commutative operands, no simplification.
    """
    if root.is_leaf:
        return root.label
    if len(root.children) == 2 and root.label:
        return f"({canonicalize(root.children[0])} {root.label} {canonicalize(root.children[1])})"
    return "(" + " ".join(canonicalize(c) for c in root.children) + ")"


@dataclass(frozen=True)
class Phenotype:
    root: Node
    canonical: str = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "canonical", canonicalize(self.root))

    def __str__(self) -> str:
        return self.canonical


@dataclass
class MappingOutcome:
    phenotype: Phenotype
    consumed: dict[str, int]
    appended: dict[str, int]
    depth_used: int


@dataclass(frozen=True)
class MutationPolicy:
    """Per-non-terminal mutation probabilities with a fallback rate."""

    rates: Mapping[str, float] = field(default_factory=dict)
    default_rate: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "rates", dict(self.rates))
        for name, r in [*self.rates.items(), ("<default>", self.default_rate)]:
            if not 0.0 <= r <= 1.0:
                raise ValueError(f"mutation rate for {name} must be in [0, 1], got {r}")

    def rate(self, nonterminal: str) -> float:
        return self.rates.get(nonterminal, self.default_rate)

    @classmethod
    def homogeneous(cls, rate: float = 0.15) -> "MutationPolicy":
        return cls({}, rate)

    @classmethod
    def heterogeneous(cls, const: float = 0.15, var_const: float = 0.05, default: float = 0.01) -> "MutationPolicy":
        """Tiered rates: constants mutate most, constant/variable swaps less, structure least."""
        return cls({"const": const, "var_const": var_const}, default)

    def to_dict(self) -> dict:
        return {"rates": dict(self.rates), "default_rate": self.default_rate}

    @classmethod
    def from_dict(cls, d: Mapping) -> "MutationPolicy":
        return cls(dict(d.get("rates", {})), float(d.get("default_rate", 0.0)))


def _feasible(prods: tuple[Production, ...], budget: int) -> list[int]:
    return [i for i, p in enumerate(prods) if p.min_depth <= budget]


def _build(prod: Production, parts: list[Node]) -> Node:
    if len(parts) == 1:
        return parts[0]
    syms = prod.symbols
    if len(syms) == 3 and not syms[1].nonterminal:
        return Node(syms[1].text, (parts[0], parts[2]))
    return Node("", tuple(parts))


def random_genotype(grammar: Grammar, max_depth: int, rng: np.random.Generator) -> Genotype:
    """Grow a random derivation within ``max_depth`` and record its choices.

    At each expansion a production is drawn uniformly from those whose
    minimum depth still fits the remaining budget.
    """
    start = grammar[grammar.start]
    if max_depth < start.min_depth:
        raise ValueError(f"max_depth={max_depth} is below the minimum depth {start.min_depth} of <{start.name}>")
    g = Genotype.empty(grammar)

    def expand(name: str, depth: int) -> None:
        nt = grammar[name]
        options = _feasible(nt.productions, max_depth - depth)
        choice = options[int(rng.integers(len(options)))]
        g.codons[name].append(choice)
        for s in nt.productions[choice].symbols:
            if s.nonterminal:
                expand(s.text, depth + 1)

    expand(grammar.start, 0)
    return g


def map_genotype(
    grammar: Grammar, genotype: Genotype, max_depth: int, rng: np.random.Generator | None = None
) -> MappingOutcome:
    """Map a genotype to its phenotype.

    Codons whose production would overrun ``max_depth`` are remapped by
    modulus into the depth-feasible productions. When a non-terminal runs out
    of codons a random feasible one is appended to ``genotype`` in place.
    """
    consumed = {n: 0 for n in grammar.names}
    appended = {n: 0 for n in grammar.names}
    deepest = 0

    def expand(name: str, depth: int) -> Node:
        nonlocal deepest
        nt = grammar[name]
        budget = max_depth - depth
        codons = genotype.codons.setdefault(name, [])
        i = consumed[name]
        if i < len(codons):
            c = codons[i]
            if nt.productions[c].min_depth <= budget:
                choice = c
            else:
                options = _feasible(nt.productions, budget)
                if not options:
                    raise MappingError(f"no production of <{name}> fits depth budget {budget}")
                choice = options[c % len(options)]
        else:
            if rng is None:
                raise MappingError(f"codons for <{name}> exhausted and no random stream given")
            options = _feasible(nt.productions, budget)
            if not options:
                raise MappingError(f"no production of <{name}> fits depth budget {budget}")
            choice = options[int(rng.integers(len(options)))]
            codons.append(choice)
            appended[name] += 1
        consumed[name] = i + 1
        deepest = max(deepest, depth + 1)
        prod = nt.productions[choice]
        parts = [expand(s.text, depth + 1) if s.nonterminal else Node(s.text) for s in prod.symbols]
        return _build(prod, parts)

    root = expand(grammar.start, 0)
    return MappingOutcome(Phenotype(root), consumed, appended, deepest)


def mutate(
    genotype: Genotype,
    grammar: Grammar,
    policy: MutationPolicy,
    active_mask: Mapping[str, int],
    rng: np.random.Generator,
) -> Genotype:
    """Return a mutated copy of ``genotype``.

    Only codons read by the last mapping (index below ``active_mask[name]``)
    are eligible. A mutation that fires always picks a different production.
    """
    out = genotype.copy()
    for nt in grammar.nonterminals:
        k = len(nt.productions)
        rate = policy.rate(nt.name)
        n_active = min(active_mask.get(nt.name, 0), len(out.codons.get(nt.name, ())))
        if k < 2 or rate <= 0.0 or n_active == 0:
            continue
        fire = np.flatnonzero(rng.random(n_active) < rate)
        if fire.size:
            shifts = rng.integers(1, k, size=fire.size)
            codons = out.codons[nt.name]
            for idx, s in zip(fire.tolist(), shifts.tolist()):
                codons[idx] = (codons[idx] + s) % k
    return out


def crossover(a: Genotype, b: Genotype, grammar: Grammar, rng: np.random.Generator) -> Genotype:
    """Uniform crossover over whole per-non-terminal codon lists."""
    take_a = rng.random(len(grammar.nonterminals)) < 0.5
    return Genotype(
        {
            nt.name: list((a if ta else b).codons.get(nt.name, []))
            for nt, ta in zip(grammar.nonterminals, take_a)
        }
    )
