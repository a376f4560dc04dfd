"""Evaluation harness: manifests, the artifact workbench, protocol runners,
rank statistics, and report emission."""

from .manifest import (
    CACHE_ENV_VAR,
    ExperimentManifest,
    Workbench,
    default_cache_root,
    load_manifest,
)
from .report import (
    EvalRow,
    emit_report,
    read_csv_report,
    row_from_dict,
    stable_digest_text,
    validate_report_document,
)
from .runners import (
    fraction_nondecreasing,
    measure_overhead,
    run_diversity_study,
    run_eot_graybox,
    run_hsja_eval,
    run_transfer_blackbox,
    run_whitebox_greedy,
    run_zero_knowledge,
)
from .stats import spearman_rank_correlation

__all__ = [
    "CACHE_ENV_VAR", "EvalRow", "ExperimentManifest", "Workbench",
    "default_cache_root", "emit_report", "fraction_nondecreasing",
    "load_manifest", "measure_overhead", "read_csv_report", "row_from_dict",
    "run_diversity_study", "run_eot_graybox", "run_hsja_eval",
    "run_transfer_blackbox", "run_whitebox_greedy", "run_zero_knowledge",
    "spearman_rank_correlation", "stable_digest_text",
    "validate_report_document",
]
