"""
Fixed sinusoidal location encoding.

Maps (lon, lat) in degrees to [sin(lon), cos(lon), sin(lat), cos(lat)] so
that -180 and 180 degrees of longitude encode to the same vector.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from src.utils.errors import DataValidationError

ENCODING_DIM = 4


@dataclass(frozen=True)
class LocationEncoderConfig:
    kind: str = "sinusoidal"

    def __post_init__(self):
        if self.kind != "sinusoidal":
            raise DataValidationError(f"unsupported location encoder '{self.kind}'")

    @property
    def dim(self) -> int:
        return ENCODING_DIM


def encoder_dim(encoder: Optional[LocationEncoderConfig]) -> int:
    return 0 if encoder is None else encoder.dim


def encode_locations(lons, lats) -> np.ndarray:
    lons = np.atleast_1d(np.asarray(lons, dtype=np.float64))
    lats = np.atleast_1d(np.asarray(lats, dtype=np.float64))
    if np.any(np.abs(lons) > 180) or np.any(np.abs(lats) > 90):
        raise DataValidationError("coordinates outside [-180, 180] x [-90, 90]")
    lon_rad = 2.0 * np.pi * lons / 360.0
    lat_rad = 2.0 * np.pi * lats / 360.0
    return np.column_stack([np.sin(lon_rad), np.cos(lon_rad), np.sin(lat_rad), np.cos(lat_rad)])


def encode_location(lon: float, lat: float) -> np.ndarray:
    return encode_locations([lon], [lat])[0]
