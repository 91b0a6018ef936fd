"""Global optimal-transport stereo matching at desk scale."""

from otstereo.imageio import StereoPair, read_pfm, write_pfm, read_pgm, write_pgm
from otstereo.otmatch import MatchMaps, SinkhornConfig, global_match
from otstereo.pipeline import PipelineConfig, run_pipeline

__all__ = [
    "StereoPair",
    "read_pfm",
    "write_pfm",
    "read_pgm",
    "write_pgm",
    "MatchMaps",
    "SinkhornConfig",
    "global_match",
    "PipelineConfig",
    "run_pipeline",
]

__version__ = "0.1.0"
