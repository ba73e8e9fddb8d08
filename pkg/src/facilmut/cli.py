"""Command-line experiment harness.

Verbs::

    facilmut run --spec experiment.json [--out DIR] [--jobs N]
    facilmut posthoc [BATCH_OR_RUN_DIR] [--repetitions 15]
    facilmut compare [BATCH_DIR]
    facilmut validate GRAMMAR

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from concurrent.futures import FIRST_EXCEPTION, ProcessPoolExecutor, wait
from dataclasses import dataclass, field, fields
from pathlib import Path

from .evolution import APPROACHES, EvolutionConfig, run
from .fitness import FitnessTaskConfig, check_bindable, post_hoc, unbound_terminals
from .grammar import GrammarError, load_grammar
from .metrics import build_comparison
from .records import RunRecord
from .sge import Genotype, MutationPolicy, map_genotype

GENERATIONS_COLUMNS = [
    "generation",
    "best_fitness",
    "mean_fitness",
    "new_evaluations",
    "archive_hits",
    "preselection_rejections",
]
OUT_ENV = "FACILMUT_OUT"
SEED_MAX = 2**64 - 1

_EVO_FIELDS = {f.name for f in fields(EvolutionConfig)} - {"approach", "master_seed", "task"}
_TASK_FIELDS = {f.name for f in fields(FitnessTaskConfig)}


class UsageError(Exception):
    pass


@dataclass
class ExperimentSpec:
    approaches: list[str]
    seeds: list[int]
    grammar_path: str | None = None
    overrides: dict = field(default_factory=dict)
    output_dir: str | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        unknown = set(d) - {"approaches", "seeds", "grammar_path", "overrides", "output_dir"}
        if unknown:
            raise UsageError(f"unknown spec key(s): {', '.join(sorted(unknown))}")
        seeds = d.get("seeds", [])
        if isinstance(seeds, dict):
            seeds = seed_range(seeds.get("base", 0), seeds.get("count", 0))
        spec = cls(
            approaches=list(d.get("approaches", [])),
            seeds=list(seeds),
            grammar_path=d.get("grammar_path"),
            overrides=dict(d.get("overrides", {})),
            output_dir=d.get("output_dir"),
        )
        spec.validate()
        return spec

    def validate(self) -> None:
        if not self.approaches:
            raise UsageError("spec needs at least one approach")
        bad = [a for a in self.approaches if a not in APPROACHES]
        if bad:
            raise UsageError(f"unknown approach(es) {bad}; expected a subset of {list(APPROACHES)}")
        if len(set(self.approaches)) != len(self.approaches):
            raise UsageError("duplicate approach in spec")
        if not self.seeds:
            raise UsageError("spec needs at least one seed")
        for s in self.seeds:
            if not isinstance(s, int) or isinstance(s, bool) or not 0 <= s <= SEED_MAX:
                raise UsageError(f"seed {s!r} is not a 64-bit unsigned integer")
        if len(set(self.seeds)) != len(self.seeds):
            raise UsageError("duplicate seed in spec")
        self.config_for(self.approaches[0], self.seeds[0])

    def config_for(self, approach: str, seed: int) -> EvolutionConfig:
        evo, task = {}, {}
        for key, value in self.overrides.items():
            if key == "task":
                task.update(value)
            elif key in _EVO_FIELDS:
                evo[key] = value
            elif key in _TASK_FIELDS:
                task[key] = value
            else:
                raise UsageError(f"unknown override {key!r}")
        if "mutation_policy" in evo and isinstance(evo["mutation_policy"], dict):
            evo["mutation_policy"] = MutationPolicy.from_dict(evo["mutation_policy"])
        if self.grammar_path:
            evo["grammar"] = self.grammar_path
        try:
            return EvolutionConfig.preset(approach, master_seed=seed, task=FitnessTaskConfig(**task), **evo)
        except (TypeError, ValueError) as e:
            raise UsageError(f"invalid override: {e}") from None


def seed_range(base: int, count: int) -> list[int]:
    if count < 1:
        raise UsageError("seed count must be positive")
    return [base + i for i in range(count)]


def _fmt(x) -> str:
    return repr(float(x)) if isinstance(x, float) else str(x)


def generations_csv(record: RunRecord) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(GENERATIONS_COLUMNS)
    for s in record.generation_stats:
        w.writerow([_fmt(getattr(s, c)) for c in GENERATIONS_COLUMNS])
    return buf.getvalue()


def run_dir(out: Path, approach: str, seed: int) -> Path:
    return out / approach / f"seed_{seed}"


def _execute(config: dict) -> str:
    return run(EvolutionConfig.from_dict(config)).to_json()


def _write_run(out: Path, approach: str, seed: int, record_json: str) -> Path:
    d = run_dir(out, approach, seed)
    d.mkdir(parents=True, exist_ok=True)
    record = RunRecord.from_json(record_json)
    (d / "generations.csv").write_text(generations_csv(record), encoding="utf-8")
    (d / "run.json").write_text(record_json, encoding="utf-8")
    return d


def execute_batch(spec: ExperimentSpec, out: Path, jobs: int = 1, log=print) -> bool:
    """Run every (approach, seed) pair, write outputs and the manifest. Returns overall success."""
    pairs = [(a, s) for a in spec.approaches for s in spec.seeds]
    configs = {p: spec.config_for(*p).to_dict() for p in pairs}
    for a in spec.approaches:
        load_and_check(configs[(a, spec.seeds[0])]["grammar"])
    out.mkdir(parents=True, exist_ok=True)
    status = {p: {"status": "not_run"} for p in pairs}

    def finish(p, result=None, error=None):
        if error is None:
            d = _write_run(out, *p, result)
            status[p] = {"status": "completed", "path": d.relative_to(out).as_posix()}
            log(f"completed {p[0]} seed {p[1]}")
        else:
            status[p] = {"status": "failed", "error": f"{type(error).__name__}: {error}"}
            log(f"failed {p[0]} seed {p[1]}: {error}")

    if jobs <= 1:
        for p in pairs:
            try:
                result = _execute(configs[p])
            except Exception as e:  # noqa: BLE001 - recorded in the manifest
                finish(p, error=e)
                break
            finish(p, result)
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = {pool.submit(_execute, configs[p]): p for p in pairs}
            pending = set(futures)
            while pending:
                done, pending = wait(pending, return_when=FIRST_EXCEPTION)
                failed = False
                for fut in sorted(done, key=lambda f: pairs.index(futures[f])):
                    if fut.exception() is not None:
                        finish(futures[fut], error=fut.exception())
                        failed = True
                    else:
                        finish(futures[fut], fut.result())
                if failed:
                    for fut in pending:
                        fut.cancel()
                    # let already-running runs finish so their outputs are kept
                    for fut in pending:
                        if not fut.cancelled():
                            try:
                                finish(futures[fut], fut.result())
                            except Exception as e:  # noqa: BLE001
                                finish(futures[fut], error=e)
                    break

    manifest = {
        "approaches": spec.approaches,
        "seeds": spec.seeds,
        "grammar_path": spec.grammar_path,
        "overrides": spec.overrides,
        "runs": [{"approach": a, "seed": s, **status[(a, s)]} for a, s in pairs],
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return all(v["status"] == "completed" for v in status.values())


def load_and_check(grammar: str):
    try:
        g = load_grammar(grammar)
        check_bindable(g)
    except FileNotFoundError:
        raise UsageError(f"grammar file not found: {grammar}") from None
    except ValueError as e:
        raise UsageError(f"{grammar}: {e}") from None
    return g


def load_runs(path: Path) -> list[tuple[Path, RunRecord]]:
    if not path.exists():
        raise UsageError(f"no such path: {path}")
    files = [path / "run.json"] if (path / "run.json").exists() else sorted(path.rglob("run.json"))
    if not files:
        raise RuntimeError(f"no run outputs under {path}")
    out = []
    for f in files:
        try:
            out.append((f.parent, RunRecord.from_json(f.read_text(encoding="utf-8"))))
        except (ValueError, KeyError, TypeError) as e:
            raise RuntimeError(f"corrupt run output {f}: {e}") from None
    return out


def group_by_approach(runs) -> dict[str, list]:
    groups: dict[str, list] = {}
    for d, rec in runs:
        groups.setdefault(rec.approach, []).append((d, rec))
    order = {a: i for i, a in enumerate(APPROACHES)}
    return {
        a: sorted(groups[a], key=lambda x: x[1].seed)
        for a in sorted(groups, key=lambda a: (order.get(a, len(order)), a))
    }


def champion(runs: list) -> tuple[Path, RunRecord]:
    """Highest evolution-time fitness; ties go to the earliest seed."""
    return min(runs, key=lambda x: (-x[1].best_individual.fitness, x[1].seed))


def posthoc_report(path: Path, repetitions: int = 15) -> dict:
    report = {"repetitions": repetitions, "approaches": {}}
    for approach, runs in group_by_approach(load_runs(path)).items():
        d, rec = champion(runs)
        cfg = EvolutionConfig.from_dict(rec.config)
        grammar = load_and_check(cfg.grammar)
        genotype = Genotype({k: list(v) for k, v in rec.best_individual.genotype.items()})
        phenotype = map_genotype(grammar, genotype, cfg.max_depth).phenotype
        if phenotype.canonical != rec.best_individual.canonical:
            raise RuntimeError(f"{d}: champion genotype no longer maps to {rec.best_individual.canonical!r}")
        result = post_hoc(phenotype, cfg.task, repetitions=repetitions)
        rel = d.relative_to(path).as_posix() if d != path else "."
        report["approaches"][approach] = {
            "champion": {"run": rel, "seed": rec.seed, "fitness": rec.best_individual.fitness},
            **result,
        }
    return report


def _resolve_out(arg: str | None, fallback: str | None = None) -> Path:
    out = arg or fallback or os.environ.get(OUT_ENV)
    if not out:
        raise UsageError(f"no output directory: pass --out, set output_dir in the spec, or set {OUT_ENV}")
    return Path(out)


def cmd_run(args) -> int:
    if args.spec:
        try:
            raw = json.loads(Path(args.spec).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise UsageError(f"spec file not found: {args.spec}") from None
        except json.JSONDecodeError as e:
            raise UsageError(f"{args.spec}: invalid JSON: {e}") from None
        if not isinstance(raw, dict):
            raise UsageError(f"{args.spec}: spec must be a JSON object")
    else:
        raw = {"approaches": list(APPROACHES), "seeds": {"base": 0, "count": 30}}
    spec = ExperimentSpec.from_dict(raw)
    if args.approach:
        spec.approaches = [a.strip() for a in args.approach.split(",") if a.strip()]
    if args.seed_base is not None or args.seeds is not None:
        base = args.seed_base if args.seed_base is not None else 0
        count = args.seeds if args.seeds is not None else len(spec.seeds)
        spec.seeds = seed_range(base, count)
    spec.validate()
    if args.jobs < 1:
        raise UsageError("--jobs must be at least 1")
    out = _resolve_out(args.out, spec.output_dir)
    log = (lambda msg: print(msg, file=sys.stderr)) if not args.quiet else (lambda msg: None)
    ok = execute_batch(spec, out, args.jobs, log)
    print(f"wrote {out / 'manifest.json'}")
    return 0 if ok else 2


def cmd_posthoc(args) -> int:
    if args.repetitions < 1:
        raise UsageError("--repetitions must be at least 1")
    path = _resolve_out(args.path or args.out)
    report = posthoc_report(path, args.repetitions)
    (path / "posthoc.json").write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    for approach, r in report["approaches"].items():
        print(f"{approach:4s} {r['canonical']}  test acc {r['mean_test_accuracy']:.4f} "
              f"+/- {r['std_test_accuracy']:.4f}")
    print(f"wrote {path / 'posthoc.json'}")
    return 0


def cmd_compare(args) -> int:
    path = _resolve_out(args.path or args.out)
    groups = group_by_approach(load_runs(path))
    posthoc = None
    ph_file = path / "posthoc.json"
    if ph_file.exists():
        data = json.loads(ph_file.read_text(encoding="utf-8"))
        posthoc = {a: r["mean_test_accuracy"] for a, r in data["approaches"].items()}
    try:
        report = build_comparison({a: [r for _, r in runs] for a, runs in groups.items()}, posthoc=posthoc)
    except ValueError as e:
        raise UsageError(str(e)) from None
    (path / "comparison.csv").write_text(report.to_csv(), encoding="utf-8")
    print(report.to_text())
    print(f"wrote {path / 'comparison.csv'}")
    return 0


def cmd_validate(args) -> int:
    try:
        g = load_grammar(args.grammar)
    except FileNotFoundError:
        raise UsageError(f"grammar file not found: {args.grammar}") from None
    except GrammarError as e:
        print(f"{args.grammar}: {e}", file=sys.stderr)
        return 1
    print(f"start symbol <{g.start}>")
    print(f"{'non-terminal':16s} {'productions':>11s} {'min_depth':>9s}  recursive")
    for nt in g.nonterminals:
        print(f"{'<' + nt.name + '>':16s} {len(nt.productions):11d} {nt.min_depth:9d}  {'yes' if nt.recursive else 'no'}")
    terms = g.terminals()
    unbound = set(unbound_terminals(terms))
    print("terminals: " + " ".join(f"{t}{'' if t not in unbound else '(UNBOUND)'}" for t in terms))
    try:
        check_bindable(g)
    except ValueError as e:
        print(f"{args.grammar}: bindability error: {e}", file=sys.stderr)
        return 1
    print("valid and bindable")
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="facilmut", description="Evolve and compare update rules.")
    sub = p.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="run a batch of (approach, seed) pairs")
    r.add_argument("--spec", help="experiment spec (JSON)")
    r.add_argument("--out", help=f"output directory (falls back to spec output_dir, then ${OUT_ENV})")
    r.add_argument("--jobs", type=int, default=1, help="concurrent runs")
    r.add_argument("--seed-base", type=int, help="first seed of a contiguous seed range")
    r.add_argument("--seeds", type=int, help="number of seeds in the range")
    r.add_argument("--approach", help="comma separated subset of " + ",".join(APPROACHES))
    r.add_argument("--quiet", action="store_true", help="no per-run progress on stderr")
    r.set_defaults(func=cmd_run)

    h = sub.add_parser("posthoc", help="retrain each approach's champion and score held-out data")
    h.add_argument("path", nargs="?", help="batch or run directory")
    h.add_argument("--out", help="alias for path")
    h.add_argument("--repetitions", type=int, default=15)
    h.set_defaults(func=cmd_posthoc)

    c = sub.add_parser("compare", help="pairwise statistics across approaches")
    c.add_argument("path", nargs="?", help="batch directory")
    c.add_argument("--out", help="alias for path")
    c.set_defaults(func=cmd_compare)

    v = sub.add_parser("validate", help="check a grammar file")
    v.add_argument("grammar", help="grammar path or bundled name (fm, original)")
    v.set_defaults(func=cmd_validate)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as e:
        print(f"facilmut {args.verb}: {e}", file=sys.stderr)
        return 1
    except (RuntimeError, OSError) as e:
        print(f"facilmut {args.verb}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
