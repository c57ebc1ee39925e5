"""Radar measurement model: polar -> Cartesian conversion and the per-frame
measurement grid of free and static masses.

All Gaussians are peak-normalized so every mass stays in [0, 1].
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Mapping, Optional, Sequence

import numpy as np

from .grid import GridMap


class ConfigurationError(ValueError):
    """Invalid static configuration (unknown sensor, bad covariance, ...)."""


@dataclass(frozen=True)
class RadarDetection:
    range: float
    azimuth: float
    range_rate: float  # positive = receding
    sensor_id: str
    timestamp: float


@dataclass(frozen=True)
class SensorMount:
    """Sensor pose in the vehicle frame."""
    x: float
    y: float
    yaw: float


@dataclass(frozen=True)
class EgoState:
    """Ego pose and motion in the global frame."""
    x: float = 0.0
    y: float = 0.0
    yaw: float = 0.0
    vx: float = 0.0
    vy: float = 0.0
    yaw_rate: float = 0.0

    @property
    def pose(self):
        return (self.x, self.y, self.yaw)


@dataclass(frozen=True)
class CartesianMeasurement:
    x_r: float  # vehicle frame
    y_r: float
    v_rx: float  # global frame
    v_ry: float


@dataclass(frozen=True)
class FreeModelParams:
    sigma_f: float = 0.5
    mu_f: float = 0.0

    def __post_init__(self):
        if not self.sigma_f > 0:
            raise ConfigurationError("sigma_f must be positive")
        if self.mu_f != 0.0:
            raise ConfigurationError("mu_f is fixed at 0")


class StaticModelParams:
    """Zero-mean 3D Gaussian over (distance, v_x, v_y)."""

    def __init__(self, sigma_s=None):
        if sigma_s is None:
            sigma_s = np.diag([0.5, 1.0, 1.0]) ** 2
        sigma_s = np.array(sigma_s, dtype=float)
        if sigma_s.shape != (3, 3) or not np.allclose(sigma_s, sigma_s.T):
            raise ConfigurationError("sigma_s must be a symmetric 3x3 matrix")
        try:
            np.linalg.cholesky(sigma_s)
        except np.linalg.LinAlgError:
            raise ConfigurationError("sigma_s must be positive definite") from None
        self.sigma_s = sigma_s
        self.sigma_s_inv = np.linalg.inv(sigma_s)
        self.mu_s = np.zeros(3)

    @property
    def distance_std(self) -> float:
        return float(np.sqrt(self.sigma_s[0, 0]))

    def __repr__(self):
        return f"StaticModelParams(sigma_s={self.sigma_s.tolist()!r})"


def _rot(yaw):
    c, s = np.cos(yaw), np.sin(yaw)
    return np.array([[c, -s], [s, c]])


def detection_to_cartesian(det: RadarDetection, mounts: Mapping[str, SensorMount],
                           ego: EgoState) -> CartesianMeasurement:
    """Position in the vehicle frame plus the ego-compensated range rate projected
    onto the global line of sight."""
    batch = cartesian_batch([det], mounts, ego)
    return CartesianMeasurement(float(batch.pos_vehicle[0, 0]), float(batch.pos_vehicle[0, 1]),
                                float(batch.velocity[0, 0]), float(batch.velocity[0, 1]))


@dataclass
class MeasurementBatch:
    """Vectorized Cartesian measurements of one frame."""
    pos_vehicle: np.ndarray     # (n, 2)
    pos_global: np.ndarray      # (n, 2)
    velocity: np.ndarray        # (n, 2), global frame
    sensor_global: np.ndarray   # (n, 2), sensor origin of each detection
    timestamp: float

    def __len__(self):
        return len(self.pos_global)

    def measurements(self):
        return [CartesianMeasurement(*p, *v) for p, v in zip(self.pos_vehicle.tolist(),
                                                             self.velocity.tolist())]


def cartesian_batch(detections: Sequence[RadarDetection], mounts: Mapping[str, SensorMount],
                    ego: EgoState, timestamp: Optional[float] = None) -> MeasurementBatch:
    n = len(detections)
    rng = np.empty(n)
    az = np.empty(n)
    rr = np.empty(n)
    mx = np.empty(n)
    my = np.empty(n)
    myaw = np.empty(n)
    for k, det in enumerate(detections):
        try:
            m = mounts[det.sensor_id]
        except KeyError:
            raise ConfigurationError(f"unknown sensor_id {det.sensor_id!r}") from None
        rng[k], az[k], rr[k] = det.range, det.azimuth, det.range_rate
        mx[k], my[k], myaw[k] = m.x, m.y, m.yaw

    bearing_v = myaw + az
    pos_v = np.stack([mx + rng * np.cos(bearing_v), my + rng * np.sin(bearing_v)], axis=1)
    mount_v = np.stack([mx, my], axis=1)

    R = _rot(ego.yaw)
    ego_xy = np.array([ego.x, ego.y])
    pos_g = pos_v @ R.T + ego_xy
    mount_g = mount_v @ R.T
    bearing_g = bearing_v + ego.yaw
    los = np.stack([np.cos(bearing_g), np.sin(bearing_g)], axis=1)
    # sensor velocity = ego velocity + yaw_rate x lever arm
    v_sensor = np.stack([ego.vx - ego.yaw_rate * mount_g[:, 1],
                         ego.vy + ego.yaw_rate * mount_g[:, 0]], axis=1)
    compensated = rr + np.einsum("ij,ij->i", v_sensor, los)
    if timestamp is None:
        timestamp = detections[0].timestamp if n else 0.0
    return MeasurementBatch(pos_vehicle=pos_v, pos_global=pos_g,
                            velocity=compensated[:, None] * los,
                            sensor_global=mount_g + ego_xy, timestamp=float(timestamp))


def f_d(d, params: FreeModelParams):
    """Peak-normalized free-space Gaussian of the distance ``d``."""
    d = np.asarray(d, dtype=float)
    out = np.exp(-0.5 * ((d - params.mu_f) / params.sigma_f) ** 2)
    return float(out) if out.ndim == 0 else out


def f_s(x_s, params: StaticModelParams):
    """Peak-normalized static likelihood of ``x_s = [d_c, v_rx, v_ry]``."""
    x = np.asarray(x_s, dtype=float) - params.mu_s
    m = ((x @ params.sigma_s_inv) * x).sum(axis=-1)
    out = np.exp(-0.5 * m)
    return float(out) if out.ndim == 0 else out


def traverse_segments(starts, ends):
    """Exact grid traversal for many segments at once.

    Coordinates are continuous cell coordinates: cell ``(i, j)`` is
    ``[i, i+1) x [j, j+1)``. Returns ``(ray, i, j)`` arrays listing, per
    segment and in order, every cell whose interior the segment crosses,
    excluding the cell holding the segment end.
    """
    p0 = np.atleast_2d(np.asarray(starts, dtype=float))
    p1 = np.atleast_2d(np.asarray(ends, dtype=float))
    n = len(p0)
    d = p1 - p0
    t_parts = [np.zeros(n), np.ones(n)]
    ray_parts = [np.arange(n), np.arange(n)]
    for axis in (0, 1):
        lo = np.minimum(p0[:, axis], p1[:, axis])
        hi = np.maximum(p0[:, axis], p1[:, axis])
        k_lo = np.floor(lo) + 1
        k_hi = np.ceil(hi) - 1
        counts = np.maximum(k_hi - k_lo + 1, 0).astype(np.int64)
        total = int(counts.sum())
        if total == 0:
            continue
        ray = np.repeat(np.arange(n), counts)
        offsets = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
        k = k_lo[ray] + offsets
        t_parts.append((k - p0[ray, axis]) / d[ray, axis])
        ray_parts.append(ray)
    t = np.concatenate(t_parts)
    ray = np.concatenate(ray_parts)
    # one float key sorts by ray, then by t in [0, 1]
    order = np.argsort(ray * 4.0 + t)
    t, ray = t[order], ray[order]
    same = ray[1:] == ray[:-1]
    t_a, t_b, seg_ray = t[:-1][same], t[1:][same], ray[:-1][same]
    keep = (t_b - t_a) > 1e-12
    t_a, t_b, seg_ray = t_a[keep], t_b[keep], seg_ray[keep]
    mid = 0.5 * (t_a + t_b)
    x0, y0 = p0[:, 0], p0[:, 1]
    dx, dy = d[:, 0], d[:, 1]
    ci = np.floor(x0[seg_ray] + mid * dx[seg_ray]).astype(np.int64)
    cj = np.floor(y0[seg_ray] + mid * dy[seg_ray]).astype(np.int64)
    end = np.floor(p1).astype(np.int64)
    keep = (ci != end[seg_ray, 0]) | (cj != end[seg_ray, 1])
    # a segment running along a grid line touches no cell interior
    on_line = ((dx == 0) & (x0 == np.floor(x0))) | ((dy == 0) & (y0 == np.floor(y0)))
    keep &= ~on_line[seg_ray]
    return seg_ray[keep], ci[keep], cj[keep]


def trace_ray(sensor_origin, hit):
    """Cells crossed from ``sensor_origin`` to ``hit`` (cell units), hit cell excluded."""
    _, i, j = traverse_segments([sensor_origin], [hit])
    return list(zip(i.tolist(), j.tolist()))


@dataclass
class MeasurementGrid:
    p_free: np.ndarray     # (nx, ny)
    p_static: np.ndarray   # (nx, ny)
    touched: np.ndarray    # (nx, ny) bool, any ray or static footprint
    occupied: np.ndarray   # (nx, ny) bool, inside some detection's static footprint
    timestamp: float


def build_measurement_grid(batch: MeasurementBatch, grid: GridMap,
                           free: FreeModelParams, static: StaticModelParams) -> MeasurementGrid:
    """Free mass along each ray (hit cell excluded), static mass within a
    3-sigma disk around each hit; detections combine per cell by maximum."""
    shape = grid.shape
    nx, ny = shape
    n_cells = nx * ny
    p_free = np.zeros(n_cells)
    p_static = np.zeros(n_cells)
    touched = np.zeros(n_cells, dtype=bool)
    occupied = np.zeros(n_cells, dtype=bool)
    res = grid.spec.resolution_m
    if len(batch):
        hits = batch.pos_global
        s_cells = grid.to_cell_coords(batch.sensor_global)
        h_cells = grid.to_cell_coords(hits)

        ray, ci, cj = traverse_segments(s_cells, h_cells)
        inside = (ci >= 0) & (ci < nx) & (cj >= 0) & (cj < ny)
        ray, ci, cj = ray[inside], ci[inside], cj[inside]
        ax, ay = grid.anchor
        hx, hy = hits[:, 0], hits[:, 1]
        d_c = np.hypot(ax + (ci + 0.5) * res - hx[ray], ay + (cj + 0.5) * res - hy[ray])
        flat = ci * ny + cj
        np.maximum.at(p_free, flat, 1.0 - f_d(d_c, free))
        touched[flat] = True

        radius = 3.0 * static.distance_std
        r_cells = int(np.ceil(radius / res)) + 1
        off = np.arange(-r_cells, r_cells + 1)
        oi, oj = np.meshgrid(off, off, indexing="ij")
        hit_cell = np.floor(h_cells).astype(np.int64)
        fi = (hit_cell[:, 0:1] + oi.ravel()[None, :]).ravel()
        fj = (hit_cell[:, 1:2] + oj.ravel()[None, :]).ravel()
        det = np.repeat(np.arange(len(hits)), oi.size)
        d_c = np.hypot(ax + (fi + 0.5) * res - hx[det], ay + (fj + 0.5) * res - hy[det])
        ok = (d_c <= radius) & (fi >= 0) & (fi < nx) & (fj >= 0) & (fj < ny)
        det, fi, fj, d_c = det[ok], fi[ok], fj[ok], d_c[ok]
        x_s = np.column_stack([d_c, batch.velocity[det]])
        flat = fi * ny + fj
        np.maximum.at(p_static, flat, f_s(x_s, static))
        touched[flat] = True
        occupied[flat] = True
    return MeasurementGrid(p_free=p_free.reshape(shape), p_static=p_static.reshape(shape),
                           touched=touched.reshape(shape), occupied=occupied.reshape(shape),
                           timestamp=batch.timestamp)


def mounts_from(sensors) -> Dict[str, SensorMount]:
    """Sensor registry keyed by id from anything with ``id`` and ``mount``."""
    return {s.id: s.mount for s in sensors}
