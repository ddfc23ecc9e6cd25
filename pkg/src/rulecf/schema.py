"""Core data model: feature schemas, instances, rules, and bound constraints.

Instances are plain tuples of floats aligned with a :class:`DatasetSchema`.
Rules are immutable, canonically ordered sets of bound predicates and are
safe to hash, cache, and share across threads.
"""

from __future__ import annotations

import enum
from collections import Counter
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Optional, Sequence

import numpy as np

Value = float
Instance = tuple  # tuple[float, ...]


class SchemaError(ValueError):
    """A schema, instance, rule, or constraint violates a structural invariant."""


class Direction(enum.Enum):
    """Direction of a bound predicate on a single feature."""

    LEQ = "<="
    GEQ = ">="

    def holds(self, value: float, bound: float) -> bool:
        if self is Direction.LEQ:
            return value <= bound
        return value >= bound

    def __str__(self) -> str:
        return self.value


def _as_value(raw) -> float:
    try:
        v = float(raw)
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"not a numeric value: {raw!r}") from exc
    if not np.isfinite(v):
        raise SchemaError(f"value must be finite, got {raw!r}")
    return v


@dataclass(frozen=True)
class RuleComponent:
    """A single predicate ``feature <= bound`` or ``feature >= bound``."""

    feature: int
    direction: Direction
    bound: float

    def __post_init__(self):
        if not isinstance(self.direction, Direction):
            raise SchemaError(f"direction must be a Direction, got {self.direction!r}")
        if int(self.feature) != self.feature or self.feature < 0:
            raise SchemaError(f"feature index must be a non-negative int, got {self.feature!r}")
        object.__setattr__(self, "feature", int(self.feature))
        object.__setattr__(self, "bound", _as_value(self.bound))

    def holds(self, x: Instance) -> bool:
        if self.feature >= len(x):
            raise SchemaError(
                f"instance has {len(x)} values but component references feature {self.feature}"
            )
        return self.direction.holds(x[self.feature], self.bound)

    @property
    def sort_key(self) -> tuple:
        return (self.feature, self.direction.value, self.bound)

    def __str__(self) -> str:
        return f"F{self.feature} {self.direction.value} {self.bound:g}"


def leq(feature: int, bound: float) -> RuleComponent:
    return RuleComponent(feature, Direction.LEQ, bound)


def geq(feature: int, bound: float) -> RuleComponent:
    return RuleComponent(feature, Direction.GEQ, bound)


@dataclass(frozen=True)
class Rule:
    """A conjunction of rule components, canonically ordered and deduplicated.

    At most one component per (feature, direction) slot is allowed; a
    LEQ/GEQ pair on the same feature expresses equality and counts as two
    components toward the cardinality.
    """

    components: tuple = ()

    def __post_init__(self):
        comps = tuple(sorted(set(self.components), key=lambda c: c.sort_key))
        slots = Counter((c.feature, c.direction) for c in comps)
        clashes = [s for s, cnt in slots.items() if cnt > 1]
        if clashes:
            f, d = clashes[0]
            raise SchemaError(f"conflicting bounds for feature {f} direction {d.value}")
        object.__setattr__(self, "components", comps)

    @classmethod
    def of(cls, components: Iterable[RuleComponent]) -> "Rule":
        return cls(tuple(components))

    @classmethod
    def relevant_to(cls, anchor: Instance, components: Iterable[RuleComponent]) -> "Rule":
        """Build a rule and reject any component not anchored at ``anchor``."""
        comps = tuple(components)
        for c in comps:
            if c.feature >= len(anchor):
                raise SchemaError(
                    f"component feature {c.feature} outside anchor of length {len(anchor)}"
                )
            if c.bound != anchor[c.feature]:
                raise SchemaError(
                    f"component bound {c.bound:g} differs from anchor value "
                    f"{anchor[c.feature]:g} at feature {c.feature}"
                )
        return cls(comps)

    @property
    def cardinality(self) -> int:
        return len(self.components)

    def evaluate(self, x: Instance) -> bool:
        return all(c.holds(x) for c in self.components)

    def matrix_mask(self, X: np.ndarray) -> np.ndarray:
        """Vectorized evaluation over a (rows, n) value matrix."""
        mask = np.ones(len(X), dtype=bool)
        for c in self.components:
            col = X[:, c.feature]
            mask &= col <= c.bound if c.direction is Direction.LEQ else col >= c.bound
        return mask

    def is_relevant_to(self, x: Instance) -> bool:
        return all(c.feature < len(x) and c.bound == x[c.feature] for c in self.components)

    def union(self, components: Iterable[RuleComponent]) -> "Rule":
        return Rule(self.components + tuple(components))

    def without(self, component: RuleComponent) -> "Rule":
        return Rule(tuple(c for c in self.components if c != component))

    def anchored_to(self, x: Instance) -> "Rule":
        """The same (feature, direction) slots with bounds moved to ``x``'s values."""
        return Rule.relevant_to(
            x, (RuleComponent(c.feature, c.direction, x[c.feature]) for c in self.components)
        )

    def features(self) -> tuple:
        return tuple(sorted({c.feature for c in self.components}))

    def __len__(self) -> int:
        return len(self.components)

    def __iter__(self):
        return iter(self.components)

    def __contains__(self, component: RuleComponent) -> bool:
        return component in self.components

    def __str__(self) -> str:
        if not self.components:
            return "(empty rule)"
        return " AND ".join(str(c) for c in self.components)


EMPTY_RULE = Rule()


@dataclass(frozen=True)
class DualClause:
    """A disjunctive set of components, each conflicting with one instance."""

    components: tuple = ()

    def __post_init__(self):
        comps = tuple(sorted(set(self.components), key=lambda c: c.sort_key))
        object.__setattr__(self, "components", comps)

    def __len__(self) -> int:
        return len(self.components)

    def __iter__(self):
        return iter(self.components)

    def __str__(self) -> str:
        if not self.components:
            return "(empty clause)"
        return " OR ".join(str(c) for c in self.components)


@dataclass(frozen=True)
class PlafBound:
    """Inclusive lower/upper bounds on one feature; ``None`` means unbounded."""

    feature: int
    lower: Optional[float] = None
    upper: Optional[float] = None

    def admits(self, value: float) -> bool:
        if self.lower is not None and value < self.lower:
            return False
        if self.upper is not None and value > self.upper:
            return False
        return True


@dataclass(frozen=True)
class PlafConstraint:
    """Conjunctive per-feature bound constraints on counterfactual search."""

    bounds: tuple = ()

    def __post_init__(self):
        by_feature: dict = {}
        for b in self.bounds:
            prev = by_feature.get(b.feature)
            if prev is None:
                by_feature[b.feature] = b
            else:
                lo = prev.lower if b.lower is None else (
                    b.lower if prev.lower is None else max(prev.lower, b.lower))
                hi = prev.upper if b.upper is None else (
                    b.upper if prev.upper is None else min(prev.upper, b.upper))
                by_feature[b.feature] = PlafBound(b.feature, lo, hi)
        merged = tuple(by_feature[f] for f in sorted(by_feature))
        object.__setattr__(self, "bounds", merged)

    @classmethod
    def from_rule(cls, rule: Rule) -> "PlafConstraint":
        bounds = []
        for c in rule.components:
            if c.direction is Direction.LEQ:
                bounds.append(PlafBound(c.feature, None, c.bound))
            else:
                bounds.append(PlafBound(c.feature, c.bound, None))
        return cls(tuple(bounds))

    def bound_for(self, feature: int) -> Optional[PlafBound]:
        for b in self.bounds:
            if b.feature == feature:
                return b
        return None

    def satisfied_by(self, x: Instance) -> bool:
        for b in self.bounds:
            if b.feature >= len(x):
                raise SchemaError(
                    f"instance has {len(x)} values but constraint references feature {b.feature}"
                )
            if not b.admits(x[b.feature]):
                return False
        return True

    def restrict(self, values: Sequence[float], feature: int) -> tuple:
        b = self.bound_for(feature)
        if b is None:
            return tuple(values)
        return tuple(v for v in values if b.admits(v))


@dataclass(frozen=True)
class FeatureSchema:
    """One feature: a name and its ordered domain of admissible values."""

    index: int
    name: str
    domain: tuple
    group: Optional[str] = None

    def __post_init__(self):
        dom = tuple(_as_value(v) for v in self.domain)
        if not dom:
            raise SchemaError(f"feature {self.name!r} has an empty domain")
        if any(b <= a for a, b in zip(dom, dom[1:])):
            raise SchemaError(f"domain of feature {self.name!r} must be strictly ascending")
        object.__setattr__(self, "domain", dom)

    @property
    def span(self) -> float:
        return self.domain[-1] - self.domain[0]


@dataclass(frozen=True)
class DatasetSchema:
    """An ordered collection of features; instance layout authority."""

    features: tuple

    def __post_init__(self):
        feats = tuple(self.features)
        for pos, f in enumerate(feats):
            if f.index != pos:
                raise SchemaError(f"feature {f.name!r} has index {f.index}, expected {pos}")
        object.__setattr__(self, "features", feats)

    @property
    def n(self) -> int:
        return len(self.features)

    def domain(self, feature: int) -> tuple:
        return self.features[feature].domain

    @property
    def names(self) -> tuple:
        return tuple(f.name for f in self.features)

    def feature_index(self, name: str) -> int:
        for f in self.features:
            if f.name == name:
                return f.index
        raise SchemaError(f"unknown feature name {name!r}")

    def validate_instance(self, x: Instance) -> None:
        if len(x) != self.n:
            raise SchemaError(f"instance has {len(x)} values, schema expects {self.n}")
        for f, v in zip(self.features, x):
            if v not in f.domain:
                raise SchemaError(
                    f"value {v!r} of feature {f.name!r} is not in its domain"
                )

    def space_size(self) -> int:
        size = 1
        for f in self.features:
            size *= len(f.domain)
        return size


def make_schema(domains: Sequence[Sequence[float]], names: Optional[Sequence[str]] = None) -> DatasetSchema:
    """Convenience constructor from a list of per-feature domains."""
    if names is None:
        names = [f"f{j}" for j in range(len(domains))]
    if len(names) != len(domains):
        raise SchemaError("names and domains must have equal length")
    feats = tuple(
        FeatureSchema(j, str(names[j]), tuple(domains[j])) for j in range(len(domains))
    )
    return DatasetSchema(feats)


@dataclass(frozen=True)
class Dataset:
    """A schema plus the historical instances used for consistency checks."""

    schema: DatasetSchema
    instances: tuple

    def __post_init__(self):
        rows = tuple(tuple(_as_value(v) for v in row) for row in self.instances)
        for row in rows:
            self.schema.validate_instance(row)
        object.__setattr__(self, "instances", rows)

    @property
    def m(self) -> int:
        return len(self.instances)

    @cached_property
    def matrix(self) -> np.ndarray:
        if not self.instances:
            return np.zeros((0, self.schema.n), dtype=np.float64)
        return np.asarray(self.instances, dtype=np.float64)

    def row(self, index: int) -> Instance:
        return self.instances[index]


def all_components(x: Instance) -> tuple:
    """All 2n components anchored at ``x`` (both directions per feature)."""
    comps = []
    for j, v in enumerate(x):
        comps.append(RuleComponent(j, Direction.LEQ, v))
        comps.append(RuleComponent(j, Direction.GEQ, v))
    return tuple(comps)


# -- module-level operations on rules ---------------------------------------

def eval_rule(rule: Rule, x: Instance) -> bool:
    """True iff every component predicate holds on ``x``; empty rule is true."""
    return rule.evaluate(x)


def cardinality(rule: Rule) -> int:
    return rule.cardinality


def trivial_rule(x: Instance) -> Rule:
    """The rule with both components per feature; satisfied only at ``x``."""
    return Rule(all_components(x))


def rule_to_plaf(rule: Rule) -> PlafConstraint:
    """Bound constraints equivalent to the rule's conjunction."""
    return PlafConstraint.from_rule(rule)
