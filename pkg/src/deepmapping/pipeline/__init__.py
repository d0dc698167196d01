from .benchmark import BenchmarkConfig, BenchmarkResult, BenchmarkRow, build_suite, run_benchmark
from .demo1d import Demo1DResult, demo_1d, demo_summary, objective
from .evaluation import MethodSummary, ate_threshold, evaluate_suite, report_csv, report_table, summarize
from .icp import DegenerateCorrespondence, icp_point_to_plane, icp_point_to_point, incremental_icp
from .registration import (
    ARCHITECTURES,
    NumericalAbort,
    RegistrationResult,
    RunConfig,
    fit_map,
    run_deepmapping,
    run_direct_opt,
    run_icp,
    warm_start_compose,
)
from .relocalization import RelocalizationField, circular_mean, polyline_distance, relocalization_study, relocalize

__all__ = [
    "ARCHITECTURES",
    "BenchmarkConfig",
    "BenchmarkResult",
    "BenchmarkRow",
    "DegenerateCorrespondence",
    "Demo1DResult",
    "MethodSummary",
    "NumericalAbort",
    "RegistrationResult",
    "RelocalizationField",
    "RunConfig",
    "ate_threshold",
    "build_suite",
    "circular_mean",
    "demo_1d",
    "demo_summary",
    "evaluate_suite",
    "fit_map",
    "icp_point_to_plane",
    "icp_point_to_point",
    "incremental_icp",
    "objective",
    "polyline_distance",
    "relocalization_study",
    "relocalize",
    "report_csv",
    "report_table",
    "run_benchmark",
    "run_deepmapping",
    "run_direct_opt",
    "run_icp",
    "summarize",
    "warm_start_compose",
]
