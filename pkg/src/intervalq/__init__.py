"""Estimation and inference for quantiles of interval-valued data."""
from .core import (EstimationError, IntervalDataError, IntervalDataset, IntervalObs, QuantileSetEstimate,
                   RngState, load_csv, write_csv)
from .functionals import capacity_ecdf, containment_ecdf, functional_curve
from .quantile_sets import (Cov2, TestOutcome, hausdorff, directed_hausdorff, quantile_set_continuous,
                            quantile_set_discrete, quantile_set_jittered, sigma_continuous,
                            simulate_critical_value, test_quantile_set)
from .conditional import bandwidth_rule, local_quantile_set, test_conditional_quantile_set
from .moments import MomentConfig, bootstrap_critical_value, confidence_set_scan, test_statistic
from .setlp import brute_force_lattice, enumerate_cells, simplex_solve, to_canonical
from .experiments import DgpSpec, generate, local_alternative, run_table

__version__ = "0.1.0"
