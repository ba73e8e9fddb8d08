"""
Scoring update rules
====================

A rule maps (grad, w, alpha, beta) to a parameter step. Fitness is the
accuracy of a logistic regression trained with that rule, measured on a
split that training never sees.
"""

from facilmut import FitnessTaskConfig, post_hoc, train_and_score
from facilmut.fitness import generate_task
from facilmut.sge import Node, Phenotype


def rule(op, a, b):
    wrap = lambda x: x if isinstance(x, Node) else Node(x)
    return Phenotype(Node(op, (wrap(a), wrap(b))))


cfg = FitnessTaskConfig()
data = generate_task(cfg)
print("split sizes:", [len(d) for d in data])

candidates = {
    "plain gradient descent": rule("*", "0.01", "grad"),
    "zero update": rule("*", "grad", "0.0"),
    "sign-flipped": rule("-", "0.0", Node("*", (Node("0.01"), Node("grad")))),
    "huge step": rule("/", Node("/", (Node("grad"), Node("0.00001"))), "0.1"),
    "constant step": rule("+", "alpha", "0.0"),
}
for name, ph in candidates.items():
    r = train_and_score(ph, data, cfg)
    print(f"{name:24s} {ph.canonical:28s} fitness {r.fitness_accuracy:.3f}  epochs {r.epochs_run:3d}"
          f"{'  diverged' if r.diverged else ''}")

# post-hoc: retrain on larger fresh data and score a held-out test split
res = post_hoc(candidates["plain gradient descent"], cfg, repetitions=5)
print("post-hoc test accuracy %.3f +/- %.3f" % (res["mean_test_accuracy"], res["std_test_accuracy"]))
