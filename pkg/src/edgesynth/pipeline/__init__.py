"""Desk-scale orchestration: toy data, tiling, fusion, synthesis, training and evaluation."""

from .config import DEFAULTS, PipelineConfig
from .manifest import DatasetManifest, SampleRecord
from .toydata import ToySpec, generate

__all__ = ["DEFAULTS", "DatasetManifest", "PipelineConfig", "SampleRecord", "ToySpec", "generate"]
