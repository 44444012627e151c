"""Coordinate and velocity transforms between the lon-lat raster and the planar frame.

The planar frame maps longitude lam and latitude phi (radians) to
x = r*lam, y = r*sin(phi). Velocities estimated on the lon-lat raster are
converted to km/h in planar components via the per-pixel spacings
dx_lat = r*dphi, dx_long = dlam*r*cos(phi) and the transform
u = U/cos(phi), v = V*cos(phi).

All public functions take degrees; radians are used internally. The map is
invalid near the poles, so every latitude-dependent operation raises
PoleError at |lat| >= MAX_ABS_LAT.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import PoleError, ShapeMismatch

EARTH_RADIUS_KM = 6371.0

# Margin away from the cos(phi) singularity at the poles.
MAX_ABS_LAT = 89.9


@dataclass(frozen=True)
class GeoFrame:
    """Uniform lon-lat raster geometry plus the sphere radius (km)."""

    r: float
    lon_min: float
    lon_max: float
    lat_min: float
    lat_max: float
    dlon: float
    dlat: float
    nx: int
    ny: int

    def __post_init__(self):
        if self.r <= 0 or self.dlon <= 0 or self.dlat <= 0:
            raise ValueError("r, dlon, dlat must be positive")
        if self.nx < 1 or self.ny < 1:
            raise ValueError("nx, ny must be >= 1")
        if abs(self.lon_min + (self.nx - 1) * self.dlon - self.lon_max) > 1e-9:
            raise ValueError("lon_min + (nx-1)*dlon != lon_max")
        if abs(self.lat_min + (self.ny - 1) * self.dlat - self.lat_max) > 1e-9:
            raise ValueError("lat_min + (ny-1)*dlat != lat_max")
        if max(abs(self.lat_min), abs(self.lat_max)) >= 90.0:
            raise ValueError("frame touches a pole")

    @classmethod
    def from_origin(cls, r, lon_min, lat_min, dlon, dlat, nx, ny):
        """Build a frame from its lower-left pixel and spacings."""
        return cls(
            r=r,
            lon_min=lon_min,
            lon_max=lon_min + (nx - 1) * dlon,
            lat_min=lat_min,
            lat_max=lat_min + (ny - 1) * dlat,
            dlon=dlon,
            dlat=dlat,
            nx=nx,
            ny=ny,
        )

    def with_shape(self, nx, ny):
        """Same origin/spacing/radius, different pixel counts."""
        return GeoFrame.from_origin(
            self.r, self.lon_min, self.lat_min, self.dlon, self.dlat, nx, ny
        )

    def lats(self):
        """Pixel-center latitudes (degrees), south to north."""
        return self.lat_min + self.dlat * np.arange(self.ny)

    def lons(self):
        """Pixel-center longitudes (degrees), west to east."""
        return self.lon_min + self.dlon * np.arange(self.nx)


def _check_lat(lat):
    if np.any(np.abs(np.asarray(lat)) >= MAX_ABS_LAT):
        raise PoleError(f"latitude too close to a pole (|lat| >= {MAX_ABS_LAT})")


def lonlat_to_xy(frame: GeoFrame, lon, lat):
    """Map lon/lat (degrees) to planar (x, y) in km: x = r*lam, y = r*sin(phi)."""
    _check_lat(lat)
    x = frame.r * np.deg2rad(lon)
    y = frame.r * np.sin(np.deg2rad(lat))
    return x, y


def xy_to_lonlat(frame: GeoFrame, x, y):
    """Inverse of lonlat_to_xy; returns degrees."""
    lon = np.rad2deg(np.asarray(x) / frame.r)
    lat = np.rad2deg(np.arcsin(np.clip(np.asarray(y) / frame.r, -1.0, 1.0)))
    return lon, lat


def pixel_spacing_km(frame: GeoFrame, lat):
    """Distances one pixel spans at latitude `lat`: (dx_long, dx_lat) in km.

    dx_lat = r*dphi is latitude-independent; dx_long = dlam*r*cos(phi).
    """
    _check_lat(lat)
    dx_lat = frame.r * math.radians(frame.dlat)
    dx_long = frame.r * math.radians(frame.dlon) * np.cos(np.deg2rad(lat))
    return dx_long, dx_lat


def transform_velocity(U, V, lat):
    """Lon-lat velocity (km/h) to planar components: u = U/cos(phi), v = V*cos(phi)."""
    _check_lat(lat)
    c = np.cos(np.deg2rad(lat))
    return U / c, V * c


def inverse_transform_velocity(u, v, lat):
    """Exact inverse of transform_velocity."""
    _check_lat(lat)
    c = np.cos(np.deg2rad(lat))
    return u * c, v / c


def flow_pixels_to_kmh(flow, frame: GeoFrame, dt_minutes):
    """Convert a px/frame flow field to planar km/h.

    Per pixel: scale by the local pixel dimensions, divide by the frame
    interval in hours, then apply transform_velocity at that pixel's
    latitude. Returns a new FlowField tagged km/h.
    """
    from .codio import FlowField, UNITS_KMH

    if dt_minutes <= 0:
        raise ValueError("dt_minutes must be positive")
    if flow.u.shape != (frame.ny, frame.nx):
        raise ShapeMismatch(
            f"flow raster {flow.u.shape} does not match frame {(frame.ny, frame.nx)}"
        )
    lat = frame.lats()[:, None]
    _check_lat(lat)
    dx_long, dx_lat = pixel_spacing_km(frame, lat)
    dt_h = dt_minutes / 60.0
    U = flow.u * dx_long / dt_h
    V = flow.v * dx_lat / dt_h
    u, v = transform_velocity(U, V, lat)
    return FlowField(
        u=u, v=v, units=UNITS_KMH, t_prev=flow.t_prev, t_cur=flow.t_cur, frame=flow.frame
    )


def planar_bounds(frame: GeoFrame):
    """Planar bounding box (x_min, x_max, y_min, y_max) of the pixel centers."""
    x0, y0 = lonlat_to_xy(frame, frame.lon_min, frame.lat_min)
    x1, y1 = lonlat_to_xy(frame, frame.lon_max, frame.lat_max)
    return x0, x1, y0, y1
