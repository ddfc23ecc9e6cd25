"""Rule-based explanations for black-box tabular classifiers.

A counterfactual search engine doubles as a consistency oracle: a candidate
rule whose bound constraints admit no good-outcome instance is globally
consistent, and when counterfactuals do exist, the components they violate
tell the search exactly how the rule must grow.
"""

from .cf_engine import (
    CfBudget,
    CfQuery,
    CfResult,
    Counterfactual,
    CounterfactualEngine,
    GoodAnchorError,
    distance,
    find_counterfactuals,
    reduce_changes,
)
from .classifiers import (
    Classifier,
    ModelFormatError,
    NetClassifier,
    RuleClassifier,
    TreeClassifier,
    is_bad_score,
    load_model,
    parse_model,
)
from .consistency import (
    BruteForceOutcome,
    ConsistencyLevel,
    Level,
    brute_force_global_consistent,
    consistency_level,
    consistent_cf,
)
from .dataio import IngestError, export_csv, format_rule, ingest_csv, load_rule_file
from .duality import (
    CfCache,
    CfOutcome,
    CounterfactualOracle,
    DualFamily,
    cf_rules,
    dual_of,
    minimal_set_covers,
)
from .explainers import (
    ExplanationResult,
    ScoredRule,
    SearchParams,
    crossover,
    fitness,
    genetic_rule,
    genetic_rule_cf,
    greedy_rule_cf,
    mutate,
    rank_key,
    reduce_redundancy,
    select_fittest,
)
from .harness import (
    ALGORITHMS,
    ExperimentReport,
    MinimalRuleResult,
    RealCategory,
    SyntheticCategory,
    SyntheticSpec,
    categorize_real,
    categorize_synthetic,
    default_experiment_schema,
    gen_synthetic_classifier,
    minimal_rule_search,
    run_synthetic_experiment,
    synthetic_dataset,
)
from .schema import (
    Dataset,
    DatasetSchema,
    Direction,
    DualClause,
    FeatureSchema,
    Instance,
    PlafConstraint,
    Rule,
    RuleComponent,
    SchemaError,
    all_components,
    cardinality,
    eval_rule,
    geq,
    leq,
    make_schema,
    rule_to_plaf,
    trivial_rule,
)

__version__ = "0.1.0"
