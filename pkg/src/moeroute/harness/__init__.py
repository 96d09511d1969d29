"""Synthetic problems, router comparisons and the command-line tool."""

from .rng import Stream
from .synthetic import (
    ComparisonRow,
    SyntheticSpec,
    compare,
    compare_problem,
    generate,
    read_problem,
    sweep,
)

__all__ = [
    "ComparisonRow",
    "Stream",
    "SyntheticSpec",
    "compare",
    "compare_problem",
    "generate",
    "read_problem",
    "sweep",
]
