"""Robust two-view camera-motion estimation with model-quality tests."""

from .core import (CameraMotion, Correspondence, FundamentalModel, Intrinsics,
                   NoiseModel, SampsonResidual)
from .engine import EngineConfig, Variant, run

__all__ = ["CameraMotion", "Correspondence", "EngineConfig", "FundamentalModel",
           "Intrinsics", "NoiseModel", "SampsonResidual", "Variant", "run"]
