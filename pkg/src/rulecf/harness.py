"""Synthetic-classifier experiments, explanation categorizers, and the
exhaustive minimal-rule search used to audit algorithm output."""

from __future__ import annotations

import enum
import itertools
import random
import time
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .classifiers import Classifier, RuleClassifier
from .consistency import Level, consistency_level
from .duality import CounterfactualOracle, derive_seed
from .explainers import (
    ExplanationResult,
    SearchParams,
    genetic_rule,
    genetic_rule_cf,
    greedy_rule_cf,
)
from .schema import (
    Dataset,
    DatasetSchema,
    Direction,
    Instance,
    Rule,
    RuleComponent,
    SchemaError,
    all_components,
    make_schema,
    rule_to_plaf,
)

ALGORITHMS = {
    "gen": genetic_rule,
    "gen-cf": genetic_rule_cf,
    "greedy-cf": greedy_rule_cf,
}


def default_experiment_schema(features: int = 12) -> DatasetSchema:
    """Desk-scale schema: integer-coded domains of 8..12 values per feature."""
    domains = []
    for j in range(features):
        size = 8 + (j % 5)
        domains.append([float(v) for v in range(size)])
    return make_schema(domains)


def synthetic_dataset(schema: DatasetSchema, rows: int, seed: int = 0) -> Dataset:
    """Rows drawn per feature uniformly from the schema domains."""
    rng = np.random.default_rng(derive_seed(seed, "dataset"))
    cols = [
        rng.choice(np.asarray(schema.domain(j), dtype=np.float64), size=rows)
        for j in range(schema.n)
    ]
    matrix = np.column_stack(cols)
    return Dataset(schema, tuple(tuple(row) for row in matrix))


def box_dataset(schema: DatasetSchema, rule: Rule, rows: int, seed: int = 0) -> Dataset:
    """Rows drawn uniformly from a rule's satisfying box.

    Used as the per-trial history for synthetic experiments: like a database
    of past denials, every row satisfies the ground-truth rule.
    """
    plaf = rule_to_plaf(rule)
    rng = np.random.default_rng(derive_seed(seed, "box-dataset"))
    cols = []
    for j in range(schema.n):
        values = plaf.restrict(schema.domain(j), j)
        cols.append(rng.choice(np.asarray(values, dtype=np.float64), size=rows))
    matrix = np.column_stack(cols)
    return Dataset(schema, tuple(tuple(row) for row in matrix))


@dataclass(frozen=True)
class SyntheticSpec:
    """One ground-truth-recovery experiment configuration."""

    schema: DatasetSchema
    components: int
    trials: int
    seed: int = 0

    def __post_init__(self):
        if not (1 <= self.components <= 2 * self.schema.n):
            raise SchemaError(
                f"components must be in 1..{2 * self.schema.n}, got {self.components}"
            )
        if self.trials < 1:
            raise SchemaError("trials must be positive")


def gen_synthetic_classifier(spec: SyntheticSpec, trial: int):
    """A rule-defined classifier plus a bad anchor satisfying its rule.

    Slots are distinct (feature, direction) pairs; bounds come from interior
    domain positions so every component excludes at least one value, and the
    anchor is drawn uniformly from the rule's satisfying set.
    """
    schema = spec.schema
    rng = random.Random(derive_seed(spec.seed, "classifier", trial))
    slots = [(j, d) for j in range(schema.n) for d in (Direction.LEQ, Direction.GEQ)]
    chosen = rng.sample(slots, spec.components)
    by_feature: dict = {}
    for j, d in chosen:
        by_feature.setdefault(j, set()).add(d)

    comps = []
    for j in sorted(by_feature):
        domain = schema.domain(j)
        if len(domain) < 3:
            raise SchemaError(
                f"feature {j} needs at least 3 domain values for an interior bound"
            )
        # central interior positions: every component excludes a sizable slice
        # of its domain, keeping the violation signal per missing component
        # well above sampling noise
        lo_pos = max(1, (len(domain) - 1) // 4)
        hi_pos = min(len(domain) - 2, (3 * (len(domain) - 1)) // 4)
        interior = domain[lo_pos: hi_pos + 1]
        dirs = by_feature[j]
        if dirs == {Direction.LEQ, Direction.GEQ}:
            lo, hi = sorted((rng.randrange(len(interior)), rng.randrange(len(interior))))
            comps.append(RuleComponent(j, Direction.GEQ, interior[lo]))
            comps.append(RuleComponent(j, Direction.LEQ, interior[hi]))
        elif dirs == {Direction.LEQ}:
            comps.append(RuleComponent(j, Direction.LEQ, rng.choice(interior)))
        else:
            comps.append(RuleComponent(j, Direction.GEQ, rng.choice(interior)))
    truth = Rule(tuple(comps))

    plaf = rule_to_plaf(truth)
    anchor = tuple(
        rng.choice(plaf.restrict(schema.domain(j), j)) for j in range(schema.n)
    )
    return RuleClassifier(truth, schema.n), anchor


class SyntheticCategory(enum.Enum):
    CONSISTENT_MINIMAL = "consistent_minimal"
    CONSISTENT_REDUNDANT = "consistent_redundant"
    INCONSISTENT = "inconsistent"


def categorize_synthetic(returned: Rule, truth: Rule) -> SyntheticCategory:
    """Compare a returned rule against the anchored ground truth."""
    rset, tset = set(returned.components), set(truth.components)
    if rset == tset:
        return SyntheticCategory.CONSISTENT_MINIMAL
    if rset > tset:
        return SyntheticCategory.CONSISTENT_REDUNDANT
    return SyntheticCategory.INCONSISTENT


class RealCategory(enum.Enum):
    FDC = "failed_data_consistency"
    FGC = "failed_global_consistency"
    GC_REDUNDANT = "consistent_redundant"
    GC_NOT_MINIMAL = "consistent_not_minimal"
    GC_MINIMAL = "consistent_minimal"


@dataclass(frozen=True)
class MinimalRuleResult:
    cardinality: Optional[int]
    cap_reached: bool
    witnesses: tuple = ()


def minimal_rule_search(
    x: Instance,
    model: Classifier,
    data: Dataset,
    cap: int = 6,
    space_cap: int = 1_000_000,
    oracle: Optional[CounterfactualOracle] = None,
) -> MinimalRuleResult:
    """Smallest cardinality of a consistent rule relevant to ``x``.

    Candidate rules are enumerated by ascending cardinality. When the full
    instance space fits under ``space_cap`` consistency is decided exactly by
    enumeration (organized as per-component bitsets over the good instances);
    otherwise each candidate is checked through the counterfactual oracle.
    Returns a reached-cap marker instead of an answer when no consistent rule
    exists within ``cap`` components.
    """
    schema = data.schema
    universe = list(all_components(x))
    cap = min(cap, len(universe))

    if schema.space_size() <= space_cap:
        checker = _BitsetChecker(model, schema, universe)
        test = checker.consistent
        candidates = checker.useful_components()
    else:
        if oracle is None:
            oracle = CounterfactualOracle(model, data)
        test = lambda comps: oracle.consistent(Rule(tuple(comps)), x)  # noqa: E731
        candidates = universe

    for size in range(0, cap + 1):
        witnesses = [
            Rule(tuple(combo))
            for combo in itertools.combinations(candidates, size)
            if test(combo)
        ]
        if witnesses:
            return MinimalRuleResult(size, False, tuple(witnesses))
    return MinimalRuleResult(None, True, ())


def _packed_mask(bits: np.ndarray) -> int:
    return int.from_bytes(np.packbits(bits).tobytes(), "big")


class _BitsetChecker:
    """Good-instance bitsets over the fully enumerated space."""

    def __init__(self, model: Classifier, schema: DatasetSchema, universe: Sequence):
        parts = {id(c): [] for c in universe}
        goods = 0
        chunk: list = []

        def flush():
            nonlocal goods
            if not chunk:
                return
            arr = np.asarray(chunk, dtype=np.float64)
            scores = model.predict_batch(arr)
            good_rows = arr[scores > 0.5]
            goods += len(good_rows)
            for comp in universe:
                col = good_rows[:, comp.feature]
                sat = col <= comp.bound if comp.direction is Direction.LEQ else col >= comp.bound
                parts[id(comp)].append(sat)
            chunk.clear()

        for values in itertools.product(*(schema.domain(j) for j in range(schema.n))):
            chunk.append(values)
            if len(chunk) >= 8192:
                flush()
        flush()

        self._universe = list(universe)
        # packbits pads the final byte with low zero bits; build the all-rows
        # mask the same way so positions line up for any row count
        self._all_good = _packed_mask(np.ones(goods, dtype=bool)) if goods else 0
        self._bits = {}
        for comp in universe:
            if goods:
                self._bits[comp] = _packed_mask(np.concatenate(parts[id(comp)]))
            else:
                self._bits[comp] = 0

    def consistent(self, comps) -> bool:
        bits = self._all_good
        for comp in comps:
            bits &= self._bits[comp]
            if not bits:
                return True
        return bits == 0

    def useful_components(self) -> list:
        # a component satisfied by every good instance can never appear in a
        # minimum-cardinality witness
        return [c for c in self._universe if self._bits[c] != self._all_good]


def categorize_real(
    returned: Rule,
    x: Instance,
    model: Classifier,
    data: Dataset,
    s: int = 1000,
    seed: int = 0,
    oracle: Optional[CounterfactualOracle] = None,
    minimal_cap: int = 6,
    space_cap: int = 1_000_000,
) -> RealCategory:
    """Five-way audit of a returned rule when no ground truth is known."""
    level = consistency_level(returned, data, model, s=s, seed=seed)
    if level.level is Level.FDC:
        return RealCategory.FDC
    if oracle is None:
        oracle = CounterfactualOracle(model, data, seed=seed)
    if level.level is Level.FGC or not oracle.consistent(returned, x):
        return RealCategory.FGC
    for comp in returned.components:
        if oracle.consistent(returned.without(comp), x):
            return RealCategory.GC_REDUNDANT
    found = minimal_rule_search(
        x, model, data, cap=minimal_cap, space_cap=space_cap, oracle=oracle
    )
    if found.cardinality is not None and found.cardinality < returned.cardinality:
        return RealCategory.GC_NOT_MINIMAL
    return RealCategory.GC_MINIMAL


# -- experiment runner --------------------------------------------------------

@dataclass
class AlgorithmSummary:
    algorithm: str
    trials: int
    counts: dict = field(default_factory=dict)
    classifier_calls: int = 0
    cf_calls: int = 0
    errors: int = 0
    runtimes: list = field(default_factory=list)

    def record(self, category: SyntheticCategory, result: ExplanationResult, runtime: float):
        self.counts[category.value] = self.counts.get(category.value, 0) + 1
        self.classifier_calls += result.stats.classifier_calls
        self.cf_calls += result.stats.cf_calls
        self.runtimes.append(runtime)

    def percentages(self) -> dict:
        buckets = {cat.value: self.counts.get(cat.value, 0) for cat in SyntheticCategory}
        buckets["error"] = self.errors
        return {name: 100.0 * count / self.trials for name, count in buckets.items()}

    def runtime_stats(self) -> dict:
        if not self.runtimes:
            return {"mean": 0.0, "p50": 0.0, "p90": 0.0}
        arr = sorted(self.runtimes)
        return {
            "mean": sum(arr) / len(arr),
            "p50": arr[int(0.5 * (len(arr) - 1))],
            "p90": arr[int(0.9 * (len(arr) - 1))],
        }


@dataclass
class ExperimentReport:
    components: int
    trials: int
    seed: int
    dataset_rows: int
    algorithms: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)

    def to_payload(self, include_timing: bool = False) -> dict:
        algs = {}
        for name in sorted(self.algorithms):
            summary = self.algorithms[name]
            entry = {
                "trials": summary.trials,
                "counts": {
                    **{cat.value: summary.counts.get(cat.value, 0) for cat in SyntheticCategory},
                    "error": summary.errors,
                },
                "percentages": summary.percentages(),
                "classifier_calls": summary.classifier_calls,
                "cf_calls": summary.cf_calls,
            }
            if include_timing:
                entry["runtime_seconds"] = summary.runtime_stats()
            algs[name] = entry
        payload = {
            "components": self.components,
            "trials": self.trials,
            "seed": self.seed,
            "dataset_rows": self.dataset_rows,
            "algorithms": algs,
        }
        if self.failures:
            payload["failures"] = sorted(self.failures)
        return payload


def run_synthetic_experiment(
    spec: SyntheticSpec,
    algorithms: Sequence[str] = ("gen", "gen-cf", "greedy-cf"),
    params: Optional[SearchParams] = None,
    data: Optional[Dataset] = None,
    dataset_rows: int = 1000,
) -> ExperimentReport:
    """Generate, explain, and categorize ``spec.trials`` classifiers.

    When no dataset is supplied, each trial gets its own history of rows
    satisfying that trial's ground truth (all scored bad), so the database
    check carries no spurious signal at desk scale. Per-trial failures are
    recorded in the report rather than aborting the batch. Fully
    deterministic for a fixed spec seed.
    """
    params = params or SearchParams()
    for name in algorithms:
        if name not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {name!r}")
    report = ExperimentReport(
        components=spec.components,
        trials=spec.trials,
        seed=spec.seed,
        dataset_rows=data.m if data is not None else dataset_rows,
        algorithms={
            name: AlgorithmSummary(algorithm=name, trials=spec.trials)
            for name in algorithms
        },
    )
    for trial in range(spec.trials):
        model, anchor = gen_synthetic_classifier(spec, trial)
        truth = model.rule.anchored_to(anchor)
        if data is None:
            trial_data = box_dataset(
                spec.schema, model.rule, dataset_rows,
                seed=derive_seed(spec.seed, "trial-data", trial),
            )
        else:
            trial_data = data
        for name in algorithms:
            summary = report.algorithms[name]
            run_params = replace(
                params, seed=derive_seed(spec.seed, "run", trial, name)
            )
            started = time.perf_counter()
            try:
                result = ALGORITHMS[name](anchor, model, trial_data, run_params)
            except Exception as exc:  # recorded, batch continues
                summary.errors += 1
                report.failures.append(f"trial {trial} {name}: {exc}")
                continue
            elapsed = time.perf_counter() - started
            category = categorize_synthetic(result.top.rule, truth)
            summary.record(category, result, elapsed)
    return report


def run_experiment_suite(
    schema: DatasetSchema,
    components_list: Sequence[int],
    trials: int,
    algorithms: Sequence[str] = ("gen", "gen-cf", "greedy-cf"),
    params: Optional[SearchParams] = None,
    seed: int = 0,
    dataset_rows: int = 1000,
) -> list:
    """One report per requested ground-truth cardinality, sharing the dataset."""
    reports = []
    for components in components_list:
        spec = SyntheticSpec(schema=schema, components=components, trials=trials, seed=seed)
        reports.append(
            run_synthetic_experiment(
                spec, algorithms=algorithms, params=params, dataset_rows=dataset_rows
            )
        )
    return reports
