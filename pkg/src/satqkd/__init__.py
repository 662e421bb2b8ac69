"""Satellite-to-ground decoy-state QKD: link model, pass simulation, fitting and key analysis."""

from importlib.metadata import PackageNotFoundError, version

from .config import Config, ConfigError, load_config
from .geometry import PassProfile, load_ephemeris, reference_pass, synthetic_pass
from .link_model import channel_efficiency, count_rate, efficiency_series
from .protocol import DetectionRecord, DetectionTable, simulate_pass
from .security import KeyReport, MismatchParams, analyze, binary_entropy, mismatch_key_rate

try:
    __version__ = version("artifact")
except PackageNotFoundError:
    __version__ = "0.0.0"

__all__ = [
    "Config", "ConfigError", "load_config",
    "PassProfile", "load_ephemeris", "reference_pass", "synthetic_pass",
    "channel_efficiency", "count_rate", "efficiency_series",
    "DetectionRecord", "DetectionTable", "simulate_pass",
    "KeyReport", "MismatchParams", "analyze", "binary_entropy", "mismatch_key_rate",
]
