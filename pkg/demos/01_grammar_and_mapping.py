"""
Grammars and the genotype-to-phenotype mapping
==============================================

Each non-terminal owns its own list of codons. Mapping walks the grammar
leftmost-first and consumes one codon per expansion.
"""

import numpy as np

from facilmut import load_grammar, map_genotype, random_genotype
from facilmut.grammar import format_grammar
from facilmut.sge import Genotype

fm = load_grammar("fm")
print(format_grammar(fm))

# min_depth is the shallowest tree a non-terminal can finish in
for nt in fm.nonterminals:
    print(f"<{nt.name}>  productions={len(nt.productions)}  min_depth={nt.min_depth}  recursive={nt.recursive}")

# a hand written genotype: start -> expr -> func(expr * expr) -> 0.01 * grad
g = Genotype.empty(fm)
g.codons.update(start=[0], expr=[0, 1, 1], func=[2], term=[0, 1], var_const=[0], const=[7])
out = map_genotype(fm, g, max_depth=17)
print(out.phenotype.canonical, "depth", out.depth_used)

# random individuals respect the depth limit and need no extra codons
rng = np.random.default_rng(0)
for _ in range(5):
    geno = random_genotype(fm, 8, rng)
    res = map_genotype(fm, geno, 8)
    print(f"depth {res.depth_used:2d}  {res.phenotype.canonical}")

# codons beyond what the mapping consumed are inactive
geno = random_genotype(fm, 8, rng)
res = map_genotype(fm, geno, 8)
geno.codons["const"].extend([11, 11, 11])
print(map_genotype(fm, geno, 8).phenotype == res.phenotype)
