"""Scoring evolved update rules by training a small classifier.

An update rule is an expression over ``grad`` (the partial derivative for
one parameter), ``w`` (that parameter's current value), the fixed
hyper-variables ``alpha`` and ``beta`` and numeric literals. Every parameter
``p`` of a logistic regression model is updated as ``p <- p - rule(grad, w)``.

The task is a synthetic two-class Gaussian problem split four ways: training,
validation (drives early stopping and best-weight restoration), fitness (the
reported score) and a holdout split reserved for post-hoc analysis.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache
from typing import Callable, NamedTuple

import numpy as np

from .grammar import Grammar
from .sge import Node, Phenotype

__all__ = [
    "CONSTANTS",
    "Dataset",
    "EvalEnvironment",
    "FitnessEvaluator",
    "FitnessTaskConfig",
    "TaskData",
    "TrainingResult",
    "check_bindable",
    "compile_rule",
    "cross_entropy",
    "cross_entropy_grad",
    "eval_expression",
    "generate_task",
    "post_hoc",
    "train_and_score",
    "unbound_terminals",
]

CONSTANTS = (0.0, 1e-5, 5e-5, 1e-4, 5e-4, 1e-3, 5e-3, 1e-2, 5e-2, 1e-1, 5e-1, 1.0)
VARIABLES = ("grad", "w", "alpha", "beta")
OPERATORS = ("+", "-", "*", "/")
DIV_EPS = 1e-8


@dataclass(frozen=True)
class FitnessTaskConfig:
    feature_dim: int = 5
    train_size: int = 200
    validation_size: int = 100
    fitness_size: int = 100
    holdout_test_size: int = 200
    max_epochs: int = 100
    early_stop_patience: int = 10
    data_seed: int = 0
    class_separation: float = 15.0
    cluster_std: float = 5.0
    nonviable_fitness: float = 0.1
    posthoc_train_factor: int = 4
    posthoc_max_epochs: int = 500

    def __post_init__(self):
        sizes = (self.feature_dim, self.train_size, self.validation_size, self.fitness_size, self.holdout_test_size)
        if min(sizes) <= 0:
            raise ValueError("dataset sizes and feature_dim must be positive")
        if not 0 < self.early_stop_patience <= self.max_epochs:
            raise ValueError("early_stop_patience must be in [1, max_epochs]")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return len(self.labels)


class TaskData(NamedTuple):
    train: Dataset
    validation: Dataset
    fitness: Dataset
    holdout: Dataset


@dataclass
class EvalEnvironment:
    grad: np.ndarray | float
    w: np.ndarray | float = 0.0
    alpha: float = 0.01
    beta: float = 0.9


@dataclass
class TrainingResult:
    fitness_accuracy: float
    best_validation_accuracy: float
    epochs_run: int
    diverged: bool
    validation_history: list[float] = field(default_factory=list, repr=False)


def class_axis(dim: int) -> np.ndarray:
    """Unit vector of alternating signs, orthogonal to the all-ones vector when dim > 1.

    Keeps parameter-independent steps (``p <- p - c``) from lining up with
    the class axis by accident.
    """
    if dim == 1:
        return np.ones(1)
    v = np.zeros(dim)
    m = 2 * (dim // 2)
    v[:m] = np.where(np.arange(m) % 2 == 0, 1.0, -1.0)
    return v / np.linalg.norm(v)


def _draw(n: int, dim: int, separation: float, std: float, rng: np.random.Generator) -> Dataset:
    # exact class balance: label 0 in the first half, 1 in the second
    labels = np.repeat([0.0, 1.0], [n - n // 2, n // 2])
    direction = class_axis(dim)
    centers = np.where(labels[:, None] == 1.0, 0.5, -0.5) * separation * direction
    return Dataset(std * rng.standard_normal((n, dim)) + centers, labels)


def generate_task(config: FitnessTaskConfig, train_size: int | None = None) -> TaskData:
    """Draw the four splits from two isotropic Gaussian clusters.

    The cluster means sit ``class_separation`` apart along :func:`class_axis`
    with per-feature standard deviation ``cluster_std``. The feature scale sets
    how large a step an update rule can take before training blows up.
    Output depends only on ``config.data_seed``.
    """
    rng = np.random.default_rng(config.data_seed)
    args = (config.feature_dim, config.class_separation, config.cluster_std, rng)
    return TaskData(
        _draw(train_size or config.train_size, *args),
        _draw(config.validation_size, *args),
        _draw(config.fitness_size, *args),
        _draw(config.holdout_test_size, *args),
    )


def _pdiv(a, b):
    b = np.asarray(b, dtype=float)
    safe = np.abs(b) > DIV_EPS
    return np.where(safe, np.divide(a, np.where(safe, b, 1.0)), a)


def _leaf_value(token: str, env: EvalEnvironment):
    if token in VARIABLES:
        return getattr(env, token)
    return float(token)


def eval_expression(phenotype: Phenotype | Node, env: EvalEnvironment):
    """Evaluate an expression tree by direct recursion.

    Division is protected: ``x / y`` yields ``x`` when ``|y| <= 1e-8``.
    Non-finite results are returned as-is.
    """
    node = phenotype.root if isinstance(phenotype, Phenotype) else phenotype
    with np.errstate(all="ignore"):
        return _eval(node, env)


def _eval(node: Node, env: EvalEnvironment):
    if node.is_leaf:
        return _leaf_value(node.label, env)
    a, b = (_eval(c, env) for c in node.children)
    op = node.label
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        return a * b
    if op == "/":
        r = _pdiv(a, b)
        return float(r) if np.ndim(r) == 0 else r
    raise ValueError(f"unknown operator {op!r}")


def unbound_terminals(tokens) -> list[str]:
    """Terminal tokens that are neither variables, operators nor finite literals."""
    bad = []
    for t in tokens:
        if t in VARIABLES or t in OPERATORS:
            continue
        try:
            if math.isfinite(float(t)):
                continue
        except ValueError:
            pass
        bad.append(t)
    return bad


def check_bindable(grammar: Grammar) -> None:
    """Raise ``ValueError`` if any terminal of ``grammar`` cannot be evaluated."""
    bad = unbound_terminals(grammar.terminals())
    if bad:
        raise ValueError("unbound terminal(s): " + ", ".join(bad))
    for nt in grammar.nonterminals:
        for p in nt.productions:
            syms = p.symbols
            if len(syms) == 1:
                continue
            if not (len(syms) == 3 and not syms[1].nonterminal and syms[1].text in OPERATORS):
                raise ValueError(f"<{nt.name}> ::= {p} is not a binary operator production")


def _source(node: Node) -> str:
    if node.is_leaf:
        t = node.label
        return t if t in VARIABLES else repr(float(t))
    a, b = (_source(c) for c in node.children)
    if node.label == "/":
        return f"_pdiv({a}, {b})"
    if node.label not in OPERATORS:
        raise ValueError(f"unknown operator {node.label!r}")
    return f"({a} {node.label} {b})"


@lru_cache(maxsize=4096)
def _compile(canonical_source: str) -> Callable:
    return eval(f"lambda grad, w, alpha, beta: {canonical_source}", {"_pdiv": _pdiv})


def compile_rule(phenotype: Phenotype) -> Callable:
    """Compile an expression to ``f(grad, w, alpha, beta)`` for fast array evaluation.

    Agrees with :func:`eval_expression`; only the tokens admitted by
    :func:`unbound_terminals` reach the generated source.
    """
    bad = unbound_terminals(phenotype.root.leaves())
    if bad:
        raise ValueError("unbound terminal(s): " + ", ".join(bad))
    return _compile(_source(phenotype.root))


def _logits(theta: np.ndarray, data: Dataset) -> np.ndarray:
    return data.features @ theta[:-1] + theta[-1]


def cross_entropy(theta: np.ndarray, data: Dataset) -> float:
    """Mean binary cross-entropy, computed without clipping.

    Saturated sigmoids produce ``log(0)``; an infinite loss is how a runaway
    update rule shows up.
    """
    with np.errstate(all="ignore"):
        p = 1.0 / (1.0 + np.exp(-_logits(theta, data)))
        y = data.labels
        return float(-np.mean(y * np.log(p) + (1 - y) * np.log(1 - p)))


def cross_entropy_grad(theta: np.ndarray, data: Dataset) -> np.ndarray:
    with np.errstate(all="ignore"):
        p = 1.0 / (1.0 + np.exp(-_logits(theta, data)))
    r = (p - data.labels) / len(data)
    return np.append(data.features.T @ r, r.sum())


def accuracy(theta: np.ndarray, data: Dataset) -> float:
    return float(np.mean((_logits(theta, data) > 0) == (data.labels == 1.0)))


def _train(rule: Callable, data: TaskData, max_epochs: int, patience: int | None, nonviable: float,
           score_on: Dataset, alpha: float = 0.01, beta: float = 0.9) -> TrainingResult:
    theta = np.zeros(data.train.features.shape[1] + 1)
    best_val = accuracy(theta, data.validation)
    best_theta = theta
    history = []
    since = 0
    epochs = 0
    with np.errstate(all="ignore"):
        for epochs in range(1, max_epochs + 1):
            loss = cross_entropy(theta, data.train)
            if not math.isfinite(loss):
                return TrainingResult(nonviable, best_val, epochs, True, history)
            g = cross_entropy_grad(theta, data.train)
            step = np.broadcast_to(rule(g, theta, alpha, beta), theta.shape)
            theta = theta - step
            if not np.all(np.isfinite(theta)):
                return TrainingResult(nonviable, best_val, epochs, True, history)
            val = accuracy(theta, data.validation)
            history.append(val)
            if val > best_val:
                best_val, best_theta, since = val, theta, 0
            else:
                since += 1
                if patience is not None and since >= patience:
                    break
    return TrainingResult(accuracy(best_theta, score_on), best_val, epochs, False, history)


def train_and_score(phenotype: Phenotype, data: TaskData, config: FitnessTaskConfig) -> TrainingResult:
    """Train a zero-initialised logistic regression with the phenotype as update rule.

    Full-batch training stops after ``max_epochs`` or once validation accuracy
    has failed to improve for ``early_stop_patience`` epochs. The parameters
    with the best validation accuracy (the initial zeros included) are scored
    on the fitness split. A non-finite loss or parameter ends training with
    ``nonviable_fitness``.
    """
    return _train(compile_rule(phenotype), data, config.max_epochs, config.early_stop_patience,
                  config.nonviable_fitness, data.fitness)


class FitnessEvaluator:
    """Callable that scores phenotypes on one fixed task and counts training runs."""

    def __init__(self, config: FitnessTaskConfig | None = None):
        self.config = config or FitnessTaskConfig()
        self.data = generate_task(self.config)
        self.training_runs = 0

    def train(self, phenotype: Phenotype) -> TrainingResult:
        self.training_runs += 1
        return train_and_score(phenotype, self.data, self.config)

    def __call__(self, phenotype: Phenotype) -> float:
        return self.train(phenotype).fitness_accuracy


def post_hoc(phenotype: Phenotype, config: FitnessTaskConfig, repetitions: int = 15,
             train_factor: int | None = None, max_epochs: int | None = None,
             early_stop: bool = False) -> dict:
    """Retrain from scratch ``repetitions`` times on fresh data and score the holdout split.

    Each repetition draws new data from a seed derived from
    ``(config.data_seed, repetition)``, uses a training split
    ``train_factor`` times larger and runs up to ``max_epochs`` epochs with no
    early stopping; the best-validation parameters are restored before testing.
    """
    factor = config.posthoc_train_factor if train_factor is None else train_factor
    epochs = config.posthoc_max_epochs if max_epochs is None else max_epochs
    rule = compile_rule(phenotype)
    tests, vals, diverged = [], [], 0
    for r in range(repetitions):
        seed = int(np.random.SeedSequence([config.data_seed, r]).generate_state(1, np.uint64)[0])
        cfg = replace(config, data_seed=seed)
        data = generate_task(cfg, train_size=config.train_size * factor)
        res = _train(rule, data, epochs, config.early_stop_patience if early_stop else None,
                     config.nonviable_fitness, data.holdout)
        tests.append(res.fitness_accuracy)
        vals.append(res.best_validation_accuracy)
        diverged += res.diverged
    return {
        "canonical": phenotype.canonical,
        "repetitions": repetitions,
        "test_accuracies": tests,
        "validation_accuracies": vals,
        "mean_test_accuracy": float(np.mean(tests)),
        "std_test_accuracy": float(np.std(tests, ddof=1)) if repetitions > 1 else 0.0,
        "mean_validation_accuracy": float(np.mean(vals)),
        "diverged_repetitions": diverged,
        "train_size": config.train_size * factor,
        "max_epochs": epochs,
        "early_stop": early_stop,
        "config": config.to_dict(),
    }
