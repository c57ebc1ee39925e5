"""Per-frame filter pipeline.

Order per frame: shift grid -> predict -> measurement grid -> nearest
measurements -> both weight updates -> joint update -> resample (+ births).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .grid import GridMap, GridSpec, shift_grid
from .joint import classify_dynamic, joint_update
from .measurement import (EgoState, FreeModelParams, MeasurementBatch, RadarDetection,
                          SensorMount, StaticModelParams, build_measurement_grid,
                          cartesian_batch)
from .particles import (FilterParams, ParticleSet, SpatialIndex, predict, resample,
                        resample_weight, retire_outside, update_weight_position,
                        update_weight_velocity)


@dataclass
class FrameResult:
    """State right after the joint update (before resampling)."""
    timestamp: float
    grid: GridMap
    particles: ParticleSet          # weights already scaled to the cell masses
    cell_index: np.ndarray          # flat cell per particle, -1 = none
    resample_weights: np.ndarray    # per-particle mass used by the joint update
    n_detections: int
    reset: bool = False

    @property
    def dynamic_particles(self) -> np.ndarray:
        """Indices of particles sitting in cells classified dynamic."""
        ok = self.cell_index >= 0
        pd = self.grid.p_dynamic.ravel()
        dyn = np.zeros(len(self.cell_index), dtype=bool)
        dyn[ok] = classify_dynamic(pd[self.cell_index[ok]])
        return np.flatnonzero(dyn)

    def cell_weight_sums(self) -> np.ndarray:
        ok = self.cell_index >= 0
        return np.bincount(self.cell_index[ok], weights=self.resample_weights[ok],
                           minlength=self.grid.p_dynamic.size).reshape(self.grid.shape)

    def cell_mean_velocity(self) -> np.ndarray:
        """Weighted mean particle velocity per cell, shape ``(nx, ny, 2)``."""
        ok = self.cell_index >= 0
        n = self.grid.p_dynamic.size
        w = self.resample_weights[ok]
        c = self.cell_index[ok]
        wsum = np.bincount(c, weights=w, minlength=n)
        vx = np.bincount(c, weights=w * self.particles.vx[ok], minlength=n)
        vy = np.bincount(c, weights=w * self.particles.vy[ok], minlength=n)
        safe = np.where(wsum > 0, wsum, 1.0)
        return np.stack([vx / safe, vy / safe], axis=-1).reshape(self.grid.shape + (2,))


class DynamicGridFilter:
    def __init__(self, mounts: Mapping[str, SensorMount], grid_spec: Optional[GridSpec] = None,
                 params: Optional[FilterParams] = None, free: Optional[FreeModelParams] = None,
                 static: Optional[StaticModelParams] = None, seed: int = 0,
                 ego: EgoState = EgoState()):
        self.mounts = dict(mounts)
        self.grid_spec = grid_spec or GridSpec()
        self.params = params or FilterParams()
        self.free = free or FreeModelParams(sigma_f=self.grid_spec.resolution_m)
        self.static = static or StaticModelParams()
        self.rng = np.random.default_rng(seed)
        self.grid = GridMap.create(self.grid_spec, ego.pose)
        self.particles = ParticleSet.empty(self.params.particle_count)
        self.unit_mass = 1.0 / self.params.particle_count
        self.last_time: Optional[float] = None
        self._sigma_v_inv = self.params.sigma_v_inv

    def step(self, timestamp: float, ego: EgoState,
             detections: Sequence[RadarDetection] | MeasurementBatch) -> FrameResult:
        p = self.params
        self.grid = shift_grid(self.grid, ego.pose)
        particles = self.particles
        if self.last_time is not None and timestamp > self.last_time:
            particles = predict(particles, timestamp - self.last_time, p, self.rng)
        self.last_time = timestamp

        pos = particles.positions
        cell = self.grid.flat_index(pos)
        retire_outside(particles, cell)
        cell = np.where(particles.alive, cell, -1)

        if isinstance(detections, MeasurementBatch):
            batch = detections
        else:
            batch = cartesian_batch(detections, self.mounts, ego, timestamp)
        meas = build_measurement_grid(batch, self.grid, self.free, self.static)

        index = SpatialIndex(batch.pos_global)
        nn_idx, nn_dist = index.query(pos, p.nn_max_radius)
        v_meas = batch.velocity[np.maximum(nn_idx, 0)] if len(batch) else np.zeros((len(pos), 2))
        w_pos = update_weight_position(particles.w_position, nn_dist, p.epsilon, self.free)
        w_vel = update_weight_velocity(particles.w_velocity, nn_dist, particles.velocities,
                                       v_meas, p.epsilon, self.free, self._sigma_v_inv)
        w_pos[~particles.alive] = 0.0
        w_vel[~particles.alive] = 0.0

        rw = resample_weight(w_pos, w_vel, p.weight_mode)
        jr = joint_update(meas.p_free, meas.p_static, meas.touched, cell, rw)
        scale = np.where(cell >= 0, jr.factor[np.maximum(cell, 0)], 0.0)
        particles.w_position = w_pos * scale
        particles.w_velocity = w_vel * scale
        self.grid.p_empty, self.grid.p_static, self.grid.p_dynamic = (
            jr.p_empty, jr.p_static, jr.p_dynamic)

        rw = resample_weight(particles.w_position, particles.w_velocity, p.weight_mode)
        result = FrameResult(timestamp=timestamp, grid=self.grid.copy(),
                             particles=particles, cell_index=cell,
                             resample_weights=rw, n_detections=len(batch))

        birth_cells = np.flatnonzero(meas.occupied.ravel())
        rs = resample(particles, rw, p, self.rng, birth_cells, self.grid)
        self.particles = rs.particles
        self.unit_mass = rs.unit_mass
        result.reset = rs.reset
        return result
