import itertools
import random

import numpy as np
import pytest
from hypothesis import settings

from rulecf import (
    Dataset,
    Direction,
    NetClassifier,
    Rule,
    RuleClassifier,
    RuleComponent,
    TreeClassifier,
    make_schema,
)
from rulecf.classifiers import TreeLeaf, TreeNode

settings.register_profile("suite", deadline=None, derandomize=True, max_examples=60)
settings.load_profile("suite")


def small_schema(sizes=(4, 4, 4)):
    return make_schema([[float(v) for v in range(s)] for s in sizes])


def all_instances(schema):
    return [tuple(vals) for vals in itertools.product(*(schema.domain(j) for j in range(schema.n)))]


def uniform_dataset(schema, rows, seed=0):
    rng = np.random.default_rng(seed)
    cols = [rng.choice(np.asarray(schema.domain(j)), size=rows) for j in range(schema.n)]
    return Dataset(schema, tuple(tuple(r) for r in np.column_stack(cols)))


def random_tree(schema, rng, depth=3):
    """A random decision tree over the schema with leaf scores off 0.5."""
    nodes = {}
    counter = itertools.count()

    def build(d):
        nid = next(counter)
        if d == 0 or rng.random() < 0.3:
            nodes[nid] = TreeLeaf(rng.choice([0.1, 0.2, 0.4, 0.6, 0.8, 0.9]))
            return nid
        feature = rng.randrange(schema.n)
        domain = schema.domain(feature)
        threshold = rng.choice(domain[:-1])
        placeholder = nid  # reserve id before children claim theirs
        left = build(d - 1)
        right = build(d - 1)
        nodes[placeholder] = TreeNode(feature, threshold, left, right)
        return placeholder

    build(depth)
    return TreeClassifier(nodes, schema.n)


def random_net(schema, rng, hidden=4):
    w1 = np.array([[rng.uniform(-2, 2) for _ in range(schema.n)] for _ in range(hidden)])
    b1 = np.array([rng.uniform(-1, 1) for _ in range(hidden)])
    w2 = np.array([[rng.uniform(-2, 2) for _ in range(hidden)]])
    b2 = np.array([rng.uniform(-1, 1)])
    return NetClassifier([w1, w2], [b1, b2])


def random_rule_model(schema, rng, max_components=4):
    count = rng.randint(1, max_components)
    slots = [(j, d) for j in range(schema.n) for d in (Direction.LEQ, Direction.GEQ)]
    comps = []
    for j, d in rng.sample(slots, count):
        comps.append(RuleComponent(j, d, rng.choice(schema.domain(j))))
    try:
        return RuleClassifier(Rule(tuple(comps)), schema.n)
    except Exception:
        return RuleClassifier(Rule((comps[0],)), schema.n)


def find_bad_anchor(model, schema):
    for x in all_instances(schema):
        if model.predict(x) <= 0.5:
            return x
    return None


def find_good_instance(model, schema):
    for x in all_instances(schema):
        if model.predict(x) > 0.5:
            return x
    return None


@pytest.fixture
def rng():
    return random.Random(1234)
