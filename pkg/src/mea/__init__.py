"""Joint analysis of overlapping online experiments.

Units are grouped by which experiments they triggered; effects are estimated
within each triggering region and averaged with region-size weights.
"""

__version__ = "0.1.0"

from .data_model import (
    NOT_TRIGGERED,
    AnalysisConfig,
    ExperimentSpec,
    MetricSpec,
    UnitRecord,
    UnitTable,
    config_from_dict,
    ingest_unit_table,
    load_config,
    validate_config,
)
from .diagnostics import Verdict, invariance_check, joint_independence_test
from .errors import *  # noqa: F401,F403
from .estimator import (
    CombinationReport,
    EffectEstimate,
    all_combinations,
    combination_effect,
    ratio_effect,
    scenario_effect,
    weight_uncertainty,
)
from .partitioner import RegionPartition, build_partition, region_weights
from .power import PowerParams, binary_ratio, factorial_variance, mea_variance, variance_ratio
from .report import AnalysisReport, build_report
from .simulator import (
    PRESETS,
    SimConfig,
    coverage_experiment,
    preset,
    simulate_population,
    true_combination_delta,
)
