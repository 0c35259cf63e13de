"""Age-structured state-space stock assessment with spline-smoothed
age-dependent parameters."""

__version__ = "0.1.0"

from .config import ModelConfig
from .data import (AgeRange, AuxTable, FleetMeta, ObsRecord, StockData,
                   load_stock, mask_observations, save_stock)

__all__ = [
    "__version__", "ModelConfig", "AgeRange", "AuxTable", "FleetMeta",
    "ObsRecord", "StockData", "load_stock", "mask_observations", "save_stock",
]
