"""Private release of level-set statistics for symmetric norm estimation on streams."""
from .levels import LevelVector, level_of
from .norms import CalibrationError, NormSpec, eval_on_levels, query
from .params import DerivedParams, InfeasibleParams, PublicParams, derive, mmc_bound
from .pipeline import Pipeline, ReleaseSet, run

__version__ = "0.1.0"
