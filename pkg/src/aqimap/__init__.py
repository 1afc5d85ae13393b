"""Fine-grained AQI map reconstruction and adaptive UAV monitoring."""

from aqimap.grid import Cube, GridSpec, Sample, SampleSet, WindField, cube_centers, neighbors
from aqimap.plume import PlumeParams, classic_gpm, gaussian_q, revised_gpm, revised_gpm_grad
from aqimap.gpmnn import FitReport, GpmNnModel, HiddenLayer, fit, init_hidden, predict

__version__ = "0.1.0"

__all__ = [
    "Cube",
    "FitReport",
    "GpmNnModel",
    "GridSpec",
    "HiddenLayer",
    "PlumeParams",
    "Sample",
    "SampleSet",
    "WindField",
    "classic_gpm",
    "cube_centers",
    "fit",
    "gaussian_q",
    "init_hidden",
    "neighbors",
    "predict",
    "revised_gpm",
    "revised_gpm_grad",
]
