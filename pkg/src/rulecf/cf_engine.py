"""Counterfactual search under per-feature bound constraints.

Given a bad-outcome anchor instance and a conjunctive bound constraint, the
engine looks for good-outcome instances inside the constrained box, drawing
candidate values only from the schema domains. Small constrained spaces are
enumerated exhaustively, which makes a NotFound answer exact there; larger
spaces fall back to a seeded genetic search whose initial population contains
every admissible single-feature perturbation of the anchor, so any classifier
whose bad region is a single axis-aligned box is still decided exactly.

Returned counterfactuals are redundancy-reduced: no single changed feature
can be reverted to the anchor value without losing the good outcome.
"""

from __future__ import annotations

import itertools
import random
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from .classifiers import Classifier, is_bad_score
from .schema import Dataset, DatasetSchema, Instance, PlafConstraint, SchemaError


class GoodAnchorError(ValueError):
    """The instance to explain already has the good outcome."""


@dataclass(frozen=True)
class CfBudget:
    """Search effort knobs for one counterfactual query."""

    population_size: int = 100
    max_generations: int = 50
    stall_generations: int = 10
    good_stall: int = 2
    exhaustive_cap: int = 20_000
    seed_cap: int = 4096

    def __post_init__(self):
        if self.population_size < 2:
            raise ValueError("population_size must be at least 2")
        if min(self.max_generations, self.stall_generations, self.good_stall) < 1:
            raise ValueError("generation budgets must be positive")
        if self.exhaustive_cap < 1 or self.seed_cap < 1:
            raise ValueError("caps must be positive")


@dataclass(frozen=True)
class CfQuery:
    """A request for up to ``k`` counterfactuals of ``anchor`` under ``plaf``."""

    anchor: tuple
    plaf: PlafConstraint = PlafConstraint()
    k: int = 10
    budget: CfBudget = CfBudget()
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "anchor", tuple(float(v) for v in self.anchor))
        if self.k < 1:
            raise ValueError("k must be at least 1")


@dataclass(frozen=True)
class Counterfactual:
    """A good-outcome instance, its changed features, and its distance."""

    instance: tuple
    changed: frozenset
    distance: float

    @property
    def sort_key(self) -> tuple:
        return (self.distance, self.instance)


@dataclass(frozen=True)
class CfResult:
    """Either a non-empty distance-sorted list of counterfactuals, or nothing."""

    counterfactuals: tuple = ()

    @property
    def found(self) -> bool:
        return bool(self.counterfactuals)


NOT_FOUND = CfResult()


def changed_features(anchor: Instance, x: Instance) -> frozenset:
    return frozenset(j for j, (a, b) in enumerate(zip(anchor, x)) if a != b)


def distance(x: Instance, x_prime: Instance, schema: DatasetSchema) -> float:
    """Half the changed-feature fraction plus half the span-normalized shifts."""
    if len(x) != schema.n or len(x_prime) != schema.n:
        raise SchemaError("distance arguments must match the schema width")
    n = schema.n
    count = 0
    shift = 0.0
    for j, (a, b) in enumerate(zip(x, x_prime)):
        if a != b:
            count += 1
            span = schema.features[j].span
            if span > 0:
                shift += abs(a - b) / span
    return 0.5 * count / n + 0.5 * shift


def reduce_changes(
    anchor: Instance,
    cand: Instance,
    model: Classifier,
    plaf: Optional[PlafConstraint] = None,
) -> tuple:
    """Revert changed features one at a time while the outcome stays good.

    Reverts are attempted in ascending feature order and restarted after each
    success, so the result is deterministic. When ``plaf`` is given, a revert
    that would leave the constrained box is skipped.
    """
    cand = tuple(float(v) for v in cand)
    anchor = tuple(float(v) for v in anchor)
    if is_bad_score(model.predict(cand)):
        raise ValueError("candidate must have a good outcome before reduction")
    current = cand
    while True:
        for j in sorted(changed_features(anchor, current)):
            reverted = current[:j] + (anchor[j],) + current[j + 1:]
            if plaf is not None and not plaf.satisfied_by(reverted):
                continue
            if not is_bad_score(model.predict(reverted)):
                current = reverted
                break
        else:
            return current


class CounterfactualEngine:
    """Stateful search wrapper exposing query and generation counters."""

    def __init__(self):
        self.queries = 0
        self.generations = 0
        self.exhaustive_runs = 0

    # -- shared helpers -----------------------------------------------------

    @staticmethod
    def _restricted_domains(schema: DatasetSchema, plaf: PlafConstraint) -> list:
        return [plaf.restrict(schema.domain(j), j) for j in range(schema.n)]

    @staticmethod
    def _space_size(restricted: list) -> int:
        size = 1
        for values in restricted:
            size *= len(values)
        return size

    def find_counterfactuals(self, model: Classifier, data: Dataset, query: CfQuery) -> CfResult:
        schema = data.schema
        schema.validate_instance(query.anchor)
        if not is_bad_score(model.predict(query.anchor)):
            raise GoodAnchorError("anchor instance already has the good outcome")
        self.queries += 1

        restricted = self._restricted_domains(schema, query.plaf)
        if any(not values for values in restricted):
            return NOT_FOUND
        if self._space_size(restricted) <= query.budget.exhaustive_cap:
            return self._exhaustive(model, schema, query, restricted)
        return self._genetic(model, schema, query, restricted)

    # -- exhaustive path ----------------------------------------------------

    def _exhaustive(self, model, schema, query, restricted) -> CfResult:
        self.exhaustive_runs += 1
        anchor = query.anchor
        scores: dict = {}
        chunk: list = []

        def flush():
            if not chunk:
                return
            batch_scores = model.predict_batch(np.asarray(chunk, dtype=np.float64))
            for inst, sc in zip(chunk, batch_scores):
                scores[inst] = float(sc)
            chunk.clear()

        for values in itertools.product(*restricted):
            chunk.append(values)
            if len(chunk) >= 4096:
                flush()
        flush()

        goods = sorted(
            (inst for inst, sc in scores.items() if not is_bad_score(sc)),
            key=lambda inst: (distance(anchor, inst, schema), inst),
        )
        if not goods:
            return NOT_FOUND

        def reduce_cached(inst: tuple) -> tuple:
            current = inst
            while True:
                for j in sorted(changed_features(anchor, current)):
                    reverted = current[:j] + (anchor[j],) + current[j + 1:]
                    sc = scores.get(reverted)
                    if sc is not None and not is_bad_score(sc):
                        current = reverted
                        break
                else:
                    return current

        found: dict = {}
        for inst in goods:
            reduced = reduce_cached(inst)
            if reduced not in found:
                found[reduced] = Counterfactual(
                    reduced, changed_features(anchor, reduced), distance(anchor, reduced, schema)
                )
            if len(found) >= query.k:
                break
        ranked = sorted(found.values(), key=lambda cf: cf.sort_key)[: query.k]
        return CfResult(tuple(ranked))

    # -- genetic path -------------------------------------------------------

    def _genetic(self, model, schema, query, restricted) -> CfResult:
        anchor = query.anchor
        budget = query.budget
        rng = random.Random(query.seed)
        scores: dict = {}

        def evaluate(cands: Iterable[tuple]) -> None:
            fresh = [c for c in dict.fromkeys(cands) if c not in scores]
            if not fresh:
                return
            batch = model.predict_batch(np.asarray(fresh, dtype=np.float64))
            for inst, sc in zip(fresh, batch):
                scores[inst] = float(sc)

        # base point: the anchor projected into the constrained box
        base = tuple(
            anchor[j]
            if anchor[j] in restricted[j]
            else min(restricted[j], key=lambda v: (abs(v - anchor[j]), v))
            for j in range(schema.n)
        )
        revert_ok = [anchor[j] in restricted[j] for j in range(schema.n)]
        mutable = [j for j in range(schema.n) if len(restricted[j]) > 1]

        seeds = [base]
        single_total = sum(len(restricted[j]) - 1 for j in mutable)
        if single_total <= budget.seed_cap:
            for j in mutable:
                for v in restricted[j]:
                    if v != base[j]:
                        seeds.append(base[:j] + (v,) + base[j + 1:])
        else:
            per_feature = max(1, budget.seed_cap // max(1, len(mutable)))
            for j in mutable:
                options = [v for v in restricted[j] if v != base[j]]
                take = options if len(options) <= per_feature else rng.sample(options, per_feature)
                for v in sorted(take):
                    seeds.append(base[:j] + (v,) + base[j + 1:])
        evaluate(seeds)

        goods: dict = {}

        def reduce_within(inst: tuple) -> tuple:
            current = inst
            while True:
                for j in sorted(changed_features(anchor, current)):
                    if not revert_ok[j]:
                        continue
                    reverted = current[:j] + (anchor[j],) + current[j + 1:]
                    evaluate([reverted])
                    if not is_bad_score(scores[reverted]):
                        current = reverted
                        break
                else:
                    return current

        def absorb(cands: Iterable[tuple]) -> int:
            new = 0
            for inst in cands:
                if is_bad_score(scores[inst]):
                    continue
                reduced = reduce_within(inst)
                if reduced not in goods:
                    goods[reduced] = Counterfactual(
                        reduced,
                        changed_features(anchor, reduced),
                        distance(anchor, reduced, schema),
                    )
                    new += 1
            return new

        def select(cands: Iterable[tuple]) -> list:
            uniq = list(dict.fromkeys(cands))
            good_part = sorted(
                (i for i in uniq if not is_bad_score(scores[i])),
                key=lambda i: (distance(anchor, i, schema), i),
            )
            bad_part = sorted(
                (i for i in uniq if is_bad_score(scores[i])),
                key=lambda i: (-scores[i], i),
            )
            return (good_part + bad_part)[: budget.population_size]

        absorb(seeds)
        pop = select(seeds)
        no_good_gens = 0
        good_stall = 0

        for _generation in range(budget.max_generations):
            if goods and good_stall >= budget.good_stall:
                break
            if not goods and no_good_gens >= budget.stall_generations:
                break
            offspring = []
            for _ in range(budget.population_size):
                if len(pop) >= 2 and rng.random() < 0.3:
                    a, b = rng.sample(pop, 2)
                    child = list(a)
                    for j in sorted(changed_features(anchor, b)):
                        if a[j] == anchor[j] or rng.random() < 0.5:
                            child[j] = b[j]
                    offspring.append(tuple(child))
                else:
                    parent = rng.choice(pop)
                    j = rng.choice(mutable)
                    options = [v for v in restricted[j] if v != parent[j]]
                    if options:
                        v = options[rng.randrange(len(options))]
                        offspring.append(parent[:j] + (v,) + parent[j + 1:])
            evaluate(offspring)
            self.generations += 1
            new = absorb(offspring)
            if goods:
                good_stall = 0 if new else good_stall + 1
            else:
                no_good_gens += 1
            pop = select(pop + offspring)

        if not goods:
            return NOT_FOUND
        ranked = sorted(goods.values(), key=lambda cf: cf.sort_key)[: query.k]
        return CfResult(tuple(ranked))


def find_counterfactuals(
    model: Classifier,
    data: Dataset,
    query: CfQuery,
    engine: Optional[CounterfactualEngine] = None,
) -> CfResult:
    """One-shot convenience wrapper over :class:`CounterfactualEngine`."""
    return (engine or CounterfactualEngine()).find_counterfactuals(model, data, query)
