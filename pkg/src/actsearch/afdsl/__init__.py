"""Activation-function graphs: operators, parsing, evaluation, enumeration, dedup."""
from .graph import (
    BASELINES,
    FORMS,
    ActivationGraph,
    ParseError,
    binary,
    evaluate,
    evaluate_dual,
    nary,
    negate,
    parse,
    render,
    unary,
)
from .operators import BASE_TABLE, OperatorTable
from .space import (
    SPACES,
    OutputFingerprint,
    UnknownSpaceError,
    bulk_fingerprints,
    dedup,
    digest,
    enumerate_space,
    fingerprint,
    probe_inputs,
    space_size,
    unique_count,
    unique_indices,
)

__all__ = [
    "ActivationGraph", "BASELINES", "BASE_TABLE", "FORMS", "OperatorTable", "OutputFingerprint",
    "ParseError", "SPACES", "UnknownSpaceError", "binary", "bulk_fingerprints", "dedup", "digest",
    "enumerate_space", "evaluate", "evaluate_dual", "fingerprint", "nary", "negate", "parse",
    "probe_inputs", "render", "space_size", "unary", "unique_count", "unique_indices",
]
