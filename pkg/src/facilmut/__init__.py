"""Grammar-guided evolution of update rules with per-non-terminal mutation rates."""

from .evolution import APPROACHES, Archive, EvolutionConfig, Individual, run, uses_gradient
from .fitness import FitnessEvaluator, FitnessTaskConfig, post_hoc, train_and_score
from .grammar import Grammar, GrammarError, load_grammar, parse_grammar
from .metrics import build_comparison, cohens_d, significance_stars, welch_t_test
from .records import RunRecord
from .sge import Genotype, MutationPolicy, Phenotype, map_genotype, random_genotype

__version__ = "0.1.0"
