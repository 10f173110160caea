"""Minimal-round parallel sorting and skew-resilient joins on a simulated cluster."""
from .errors import (ConfigError, DatasetParseError, PlanningError, RoutingError,
                     SortJoinError, SpecError)
from .metrics import MinimalityReport, build_report, emit_csv
from .oracle import oracle_join, same_multiset, seq_sort
from .randjoin import randjoin
from .runtime import Cluster, create_cluster
from .smms import smms_sort
from .statjoin import statjoin
from .terasort import terasort

__version__ = "0.1.0"

__all__ = [
    "Cluster", "ConfigError", "DatasetParseError", "MinimalityReport", "PlanningError",
    "RoutingError", "SortJoinError", "SpecError", "build_report", "create_cluster",
    "emit_csv", "oracle_join", "randjoin", "same_multiset", "seq_sort", "smms_sort",
    "statjoin", "terasort",
]
