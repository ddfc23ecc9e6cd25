"""Consistency checks: over the database, over samples, via the counterfactual
oracle, and via exact enumeration for test-scale spaces."""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .cf_engine import CfBudget, CounterfactualEngine
from .classifiers import Classifier
from .duality import CfCache, CounterfactualOracle, derive_seed, _rule_digest
from .schema import Dataset, DatasetSchema, Instance, Rule, SchemaError, rule_to_plaf


class Level(enum.IntEnum):
    """Consistency grades, ordered worst to best."""

    FDC = 0  # violated by the database
    FGC = 1  # database-clean, violated by sampled instances
    GC = 2   # clean on both


@dataclass(frozen=True)
class ConsistencyLevel:
    level: Level
    vd: int = 0
    vs: int = 0

    def __post_init__(self):
        ok = (
            (self.level is Level.FDC and self.vd >= 1)
            or (self.level is Level.FGC and self.vd == 0 and self.vs >= 1)
            or (self.level is Level.GC and self.vd == 0 and self.vs == 0)
        )
        if not ok:
            raise ValueError(
                f"level {self.level.name} inconsistent with VD={self.vd}, VS={self.vs}"
            )

    @classmethod
    def from_counts(cls, vd: int, vs: int) -> "ConsistencyLevel":
        if vd >= 1:
            return cls(Level.FDC, vd, 0)
        if vs >= 1:
            return cls(Level.FGC, 0, vs)
        return cls(Level.GC, 0, 0)


def restricted_domains(schema: DatasetSchema, rule: Rule) -> list:
    """Per-feature domain values admitted by the rule's bounds."""
    plaf = rule_to_plaf(rule)
    return [plaf.restrict(schema.domain(j), j) for j in range(schema.n)]


def sample_satisfying(
    schema: DatasetSchema, rule: Rule, s: int, rng: np.random.Generator
) -> np.ndarray:
    """Draw ``s`` instances of the rule's satisfying set, uniform per feature."""
    restricted = restricted_domains(schema, rule)
    if any(not values for values in restricted):
        raise SchemaError("rule admits no instance; nothing to sample")
    cols = [
        rng.choice(np.asarray(values, dtype=np.float64), size=s)
        for values in restricted
    ]
    return np.column_stack(cols)


def violations_in_data(rule: Rule, data: Dataset, model: Classifier) -> int:
    """Number of database instances satisfying the rule with a good outcome."""
    if data.m == 0:
        return 0
    mask = rule.matrix_mask(data.matrix)
    if not mask.any():
        return 0
    scores = model.predict_batch(data.matrix[mask])
    return int(np.count_nonzero(scores > 0.5))


def consistency_level(
    rule: Rule,
    data: Dataset,
    model: Classifier,
    s: int = 1000,
    seed: int = 0,
) -> ConsistencyLevel:
    """Grade a rule: database violations first, then ``s`` sampled instances.

    Sampling is seeded per rule (mixing ``seed`` with the rule itself), so the
    grade does not depend on how many other rules were checked first.
    """
    if s < 1:
        raise ValueError("sample count must be at least 1")
    vd = violations_in_data(rule, data, model)
    if vd > 0:
        return ConsistencyLevel.from_counts(vd, 0)
    rng = np.random.default_rng(derive_seed(seed, "vs", _rule_digest(rule)))
    samples = sample_satisfying(data.schema, rule, s, rng)
    scores = model.predict_batch(samples)
    vs = int(np.count_nonzero(scores > 0.5))
    return ConsistencyLevel.from_counts(0, vs)


def consistent_cf(
    rule: Rule,
    x: Instance,
    model: Classifier,
    data: Dataset,
    cache: Optional[CfCache] = None,
    k: int = 10,
    budget: Optional[CfBudget] = None,
    seed: int = 0,
    engine: Optional[CounterfactualEngine] = None,
) -> bool:
    """True iff the counterfactual search under the rule's bounds comes back
    empty; cached per rule when a cache is supplied."""
    oracle = CounterfactualOracle(
        model, data, k=k, budget=budget, seed=seed, cache=cache, engine=engine
    )
    return oracle.consistent(rule, x)


class BruteForceOutcome(enum.Enum):
    CONSISTENT = "consistent"
    INCONSISTENT = "inconsistent"
    TOO_LARGE = "too_large"


def brute_force_global_consistent(
    rule: Rule,
    model: Classifier,
    schema: DatasetSchema,
    cap: int = 1_000_000,
) -> BruteForceOutcome:
    """Exact consistency by enumerating the rule's satisfying set, if small."""
    plaf = rule_to_plaf(rule)
    restricted = [plaf.restrict(schema.domain(j), j) for j in range(schema.n)]
    size = 1
    for values in restricted:
        size *= len(values)
        if size > cap:
            return BruteForceOutcome.TOO_LARGE
    if size == 0:
        return BruteForceOutcome.CONSISTENT
    chunk: list = []

    def has_good() -> bool:
        scores = model.predict_batch(np.asarray(chunk, dtype=np.float64))
        chunk.clear()
        return bool(np.any(scores > 0.5))

    for values in itertools.product(*restricted):
        chunk.append(values)
        if len(chunk) >= 8192 and has_good():
            return BruteForceOutcome.INCONSISTENT
    if chunk and has_good():
        return BruteForceOutcome.INCONSISTENT
    return BruteForceOutcome.CONSISTENT


def brute_force_has_counterfactual(
    anchor: Instance,
    rule: Rule,
    model: Classifier,
    schema: DatasetSchema,
    cap: int = 1_000_000,
) -> Optional[bool]:
    """Existence oracle used in tests: is there a good instance satisfying the
    rule's bounds? ``None`` when the space exceeds ``cap``."""
    outcome = brute_force_global_consistent(rule, model, schema, cap)
    if outcome is BruteForceOutcome.TOO_LARGE:
        return None
    return outcome is BruteForceOutcome.INCONSISTENT
