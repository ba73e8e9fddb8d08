"""Comparison metrics and the statistics used to compare approaches.

The t distribution tail is computed here from the regularized incomplete
beta function (continued fraction, modified Lentz) so that the test has no
dependency on scipy.
"""

from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .records import RunRecord

__all__ = [
    "METRICS",
    "ComparisonReport",
    "EffectSize",
    "PairwiseTest",
    "WelchResult",
    "betainc",
    "build_comparison",
    "cohens_d",
    "effect_band",
    "significance_stars",
    "unique_viable_behaviors",
    "welch_t_test",
]

VIABILITY_THRESHOLD = 0.5

# name -> (label, higher_is_better)
METRICS = {
    "best_fitness": ("Best Fitness (evolution)", True),
    "population_fitness": ("Population Fitness", True),
    "diversity": ("Population Diversity", True),
    "cost": ("Computational Cost", False),
}


def unique_viable_behaviors(archive, threshold: float = VIABILITY_THRESHOLD) -> int:
    """Number of distinct canonical phenotypes whose fitness is strictly above ``threshold``.

    ``archive`` may be an ``Archive`` or any mapping of canonical string to
    fitness (or to an object with a ``fitness`` attribute).
    """
    entries = getattr(archive, "entries", archive)
    n = 0
    for v in entries.values():
        f = getattr(v, "fitness", v)
        if f > threshold:
            n += 1
    return n


def _betacf(a: float, b: float, x: float, eps: float = 1e-15, max_iter: int = 10000) -> float:
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = tiny if abs(d) < tiny else d
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta function I_x(a, b)."""
    if a <= 0 or b <= 0:
        raise ValueError("a and b must be positive")
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must be in [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    log_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(log_front)
    # the continued fraction converges fast only below the mean
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_sf_two_sided(t: float, df: float) -> float:
    """Two-sided tail probability P(|T| >= |t|) for Student's t."""
    if math.isnan(t):
        return math.nan
    if math.isinf(t):
        return 0.0
    t2 = t * t
    if t2 < df:
        # small |t|: df / (df + t^2) would round to 1 and lose the tail
        return 1.0 - betainc(0.5, df / 2.0, t2 / (df + t2))
    return betainc(df / 2.0, 0.5, df / (df + t2))


@dataclass
class WelchResult:
    t: float
    degrees_of_freedom: float
    p_two_sided: float
    degenerate: bool = False


def welch_t_test(a: Sequence[float], b: Sequence[float]) -> WelchResult:
    """Welch's unequal-variance two-sample t-test.

    Two constant samples are degenerate: equal constants give p = 1, different
    ones p = 0 (with an infinite t), both flagged.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size < 2 or b.size < 2:
        raise ValueError("each sample needs at least two observations")
    va, vb = a.var(ddof=1), b.var(ddof=1)
    diff = a.mean() - b.mean()
    qa, qb = va / a.size, vb / b.size
    se2 = qa + qb
    if se2 == 0.0:
        if diff == 0.0:
            return WelchResult(0.0, float(a.size + b.size - 2), 1.0, True)
        return WelchResult(math.copysign(math.inf, diff), float(a.size + b.size - 2), 0.0, True)
    t = diff / math.sqrt(se2)
    df = se2**2 / (qa**2 / (a.size - 1) + qb**2 / (b.size - 1))
    return WelchResult(float(t), float(df), t_sf_two_sided(t, df))


def effect_band(d: float) -> str:
    ad = abs(d)
    if ad < 0.5:
        return "S"
    if ad < 0.8:
        return "M"
    return "L"


@dataclass
class EffectSize:
    d: float
    band: str
    degenerate: bool = False

    def __float__(self) -> float:
        return self.d


def cohens_d(a: Sequence[float], b: Sequence[float]) -> EffectSize:
    """Standardized mean difference with the (n-1)-weighted pooled standard deviation."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size < 2 or b.size < 2:
        raise ValueError("each sample needs at least two observations")
    na, nb = a.size, b.size
    pooled = ((na - 1) * a.var(ddof=1) + (nb - 1) * b.var(ddof=1)) / (na + nb - 2)
    diff = a.mean() - b.mean()
    if pooled == 0.0:
        d = 0.0 if diff == 0.0 else math.copysign(math.inf, diff)
        return EffectSize(d, effect_band(d), True)
    d = float(diff / math.sqrt(pooled))
    return EffectSize(d, effect_band(d))


def significance_stars(p: float) -> str:
    if p < 0.0001:
        return "****"
    if p <= 0.001:
        return "***"
    if p <= 0.01:
        return "**"
    if p < 0.05:
        return "*"
    return ""


@dataclass
class PairwiseTest:
    metric: str
    approach_a: str
    approach_b: str
    mean_a: float
    mean_b: float
    t: float
    df: float
    p: float
    stars: str
    cohens_d: float
    effect: str
    degenerate: bool


CSV_COLUMNS = [
    "metric", "approach_a", "approach_b", "mean_a", "mean_b",
    "t", "df", "p", "stars", "cohens_d", "effect", "degenerate",
]


@dataclass
class ComparisonReport:
    approaches: list[str]
    samples: dict[str, dict[str, list[float]]]
    pairwise: list[PairwiseTest]
    best: dict[str, str] = field(default_factory=dict)
    best_effect: dict[str, str] = field(default_factory=dict)
    posthoc: dict[str, float] = field(default_factory=dict)

    def mean(self, metric: str, approach: str) -> float:
        return float(np.mean(self.samples[metric][approach]))

    def tests_for(self, metric: str) -> list[PairwiseTest]:
        return [t for t in self.pairwise if t.metric == metric]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for t in self.pairwise:
            w.writerow([
                t.metric, t.approach_a, t.approach_b, repr(t.mean_a), repr(t.mean_b),
                repr(t.t), repr(t.df), repr(t.p), t.stars, repr(t.cohens_d), t.effect,
                int(t.degenerate),
            ])
        return buf.getvalue()

    def to_text(self) -> str:
        """Aligned table: mean per approach and metric, best cell in ``**bold**`` with its effect band."""
        metrics = list(self.samples)
        header = ["Approach"] + [METRICS[m][0] for m in metrics]
        if self.posthoc:
            header.append("Post-hoc test acc.")
        rows = []
        for ap in self.approaches:
            row = [ap]
            for m in metrics:
                v = self.mean(m, ap)
                cell = f"{v:.3f}" if m in ("best_fitness", "population_fitness") else f"{v:.1f}"
                if self.best.get(m) == ap:
                    cell = f"**{cell}**[{self.best_effect[m]}]"
                row.append(cell)
            if self.posthoc:
                v = self.posthoc.get(ap)
                row.append("" if v is None else f"{v:.3f}")
            rows.append(row)
        widths = [max(len(r[i]) for r in [header] + rows) for i in range(len(header))]
        fmt = lambda r: " | ".join(c.ljust(wd) for c, wd in zip(r, widths))
        lines = [fmt(header), "-+-".join("-" * wd for wd in widths)] + [fmt(r) for r in rows]
        lines.append("")
        lines.append("Pairwise Welch t-tests (* p<0.05, ** p<=0.01, *** p<=0.001, **** p<0.0001):")
        for t in self.pairwise:
            lines.append(
                f"  {t.metric:<18} {t.approach_a:>4} vs {t.approach_b:<4} "
                f"t={t.t:8.3f} p={t.p:<10.4g} {t.stars:<4} d={t.cohens_d:+.3f}[{t.effect}]"
            )
        return "\n".join(lines) + "\n"


def run_metric(run: RunRecord, metric: str) -> float:
    if metric == "best_fitness":
        return float(run.best_individual.fitness)
    if metric == "population_fitness":
        return float(run.final_mean_fitness)
    if metric == "diversity":
        return float(run.unique_viable_count)
    if metric == "cost":
        return float(run.evaluations_performed)
    raise KeyError(metric)


def build_comparison(
    runs: Mapping[str, Iterable[RunRecord]],
    metrics: Iterable[str] = tuple(METRICS),
    posthoc: Mapping[str, float] | None = None,
) -> ComparisonReport:
    """Collect per-run metric samples per approach and test every pair of approaches."""
    runs = {k: list(v) for k, v in runs.items()}
    approaches = list(runs)
    for ap, rs in runs.items():
        if len(rs) < 2:
            raise ValueError(f"approach {ap} has {len(rs)} run(s); at least 2 are required")
    samples = {m: {ap: [run_metric(r, m) for r in runs[ap]] for ap in approaches} for m in metrics}
    pairwise = []
    best, best_effect = {}, {}
    for m in samples:
        for a, b in itertools.combinations(approaches, 2):
            xa, xb = samples[m][a], samples[m][b]
            tt = welch_t_test(xa, xb)
            es = cohens_d(xa, xb)
            pairwise.append(PairwiseTest(
                m, a, b, float(np.mean(xa)), float(np.mean(xb)), tt.t, tt.degrees_of_freedom,
                tt.p_two_sided, significance_stars(tt.p_two_sided), es.d, es.band,
                tt.degenerate or es.degenerate,
            ))
        higher = METRICS[m][1]
        ranked = sorted(approaches, key=lambda ap: np.mean(samples[m][ap]), reverse=higher)
        best[m] = ranked[0]
        if len(ranked) > 1:
            best_effect[m] = cohens_d(samples[m][ranked[0]], samples[m][ranked[1]]).band
        else:
            best_effect[m] = "S"
    return ComparisonReport(approaches, samples, pairwise, best, best_effect, dict(posthoc or {}))
