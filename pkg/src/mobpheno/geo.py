"""Great-circle and local planar geometry helpers."""
import numpy as np

EARTH_RADIUS_M = 6_371_000.0


def haversine(lat1, lon1, lat2, lon2):
    """Great-circle distance in meters on a sphere of radius 6,371 km.

    Accepts scalars or broadcastable arrays of degrees.
    """
    phi1 = np.radians(lat1)
    phi2 = np.radians(lat2)
    dphi = phi2 - phi1
    dlmb = np.radians(lon2) - np.radians(lon1)
    a = np.sin(dphi / 2.0) ** 2 + np.cos(phi1) * np.cos(phi2) * np.sin(dlmb / 2.0) ** 2
    # clip guards against a marginally > 1 from rounding
    d = 2.0 * EARTH_RADIUS_M * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))
    if np.ndim(d) == 0:
        return float(d)
    return d


def project_local(lat, lon, lat0, lon0):
    """Equirectangular projection to (x east, y north) meters about (lat0, lon0)."""
    k = np.pi / 180.0 * EARTH_RADIUS_M
    x = (np.asarray(lon, dtype=float) - lon0) * k * np.cos(np.radians(lat0))
    y = (np.asarray(lat, dtype=float) - lat0) * k
    return x, y


def offset_coords(lat0, lon0, east_m, north_m):
    """Inverse of ``project_local``: meters offsets back to degrees."""
    k = np.pi / 180.0 * EARTH_RADIUS_M
    lat = lat0 + np.asarray(north_m, dtype=float) / k
    lon = lon0 + np.asarray(east_m, dtype=float) / (k * np.cos(np.radians(lat0)))
    return lat, lon
