"""Experiment orchestration: plans, parallel quenched averaging, trends and reports."""

from .plan import ExperimentPlan, load_plan, validate_plan
from .runner import replay, run_plan
from .trend import TrendReport, classify, trend_report, var_fn_scaling

__all__ = ["ExperimentPlan", "TrendReport", "classify", "load_plan", "replay", "run_plan", "trend_report",
           "validate_plan", "var_fn_scaling"]
