"""
Facilitated mutation
====================

The FM grammar separates constants and plain variables from the gradient so
that each group can carry its own mutation rate. Here we measure the rates
and look at what a few mutations do to a rule.
"""

import numpy as np

from facilmut import MutationPolicy, load_grammar, map_genotype, random_genotype
from facilmut.sge import Genotype, mutate

fm = load_grammar("fm")
policy = MutationPolicy.heterogeneous()
print("rates:", policy.to_dict())

# mutate 100k active codons per tier and count the changes
n = 100_000
geno = Genotype.empty(fm)
for name in ("const", "var_const", "func"):
    geno.codons[name] = [0] * n
out = mutate(geno, fm, policy, {"const": n, "var_const": n, "func": n}, np.random.default_rng(1))
for name in ("const", "var_const", "func"):
    print(f"{name:10s} observed {np.mean(np.array(out.codons[name]) != 0):.4f}  target {policy.rate(name)}")

# homogeneous mutation touches the structure as often as the constants
rng = np.random.default_rng(3)
parent = random_genotype(fm, 6, rng)
active = map_genotype(fm, parent, 6).consumed
print("parent:", map_genotype(fm, parent, 6).phenotype.canonical)
for label, pol in [("FM", policy), ("homogeneous 0.15", MutationPolicy.homogeneous(0.15))]:
    print(label)
    for _ in range(4):
        child = mutate(parent, fm, pol, active, rng)
        print("   ", map_genotype(fm, child, 6, rng).phenotype.canonical)
