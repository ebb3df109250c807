"""Temporal graph attention combining breadth-first neighbor attention with
depth-first temporal-path attention for link prediction."""
from .config import VARIANTS, RunConfig
from .errors import (ConfigError, DataError, DimensionError, DivergenceError, DomainError,
                     GuardExceeded, LookupFailure, SamplingError, TbdfsError)
from .graphstore import Schema, SplitBundle, TemporalGraph, chronological_split, load_csv
from .model import TBDFS

__version__ = "0.1.0"

__all__ = [
    "VARIANTS", "RunConfig", "TBDFS", "Schema", "SplitBundle", "TemporalGraph",
    "chronological_split", "load_csv", "ConfigError", "DataError", "DimensionError",
    "DivergenceError", "DomainError", "GuardExceeded", "LookupFailure", "SamplingError",
    "TbdfsError",
]
