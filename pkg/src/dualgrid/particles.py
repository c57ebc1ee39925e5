"""Dual-weight particle population for the dynamic part of the grid.

Every particle carries a position weight and a velocity weight. Both are
updated every frame; ``weight_mode`` only decides which of them (or their
maximum) drives the joint update and resampling.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .measurement import ConfigurationError, FreeModelParams, f_d

log = logging.getLogger(__name__)

WEIGHT_MODES = ("position", "velocity", "dual")


@dataclass(frozen=True)
class FilterParams:
    particle_count: int = 10000
    epsilon: float = 0.1
    process_noise_pos: float = 0.1
    process_noise_vel: float = 0.4
    sigma_v: tuple = ((1.0, 0.0), (0.0, 1.0))
    birth_fraction: float = 0.1
    v_init_max: float = 40.0
    weight_mode: str = "dual"
    nn_max_radius: float = 5.0

    def __post_init__(self):
        if self.particle_count <= 0:
            raise ConfigurationError("particle_count must be positive")
        if not 0.0 <= self.epsilon < 1.0:
            raise ConfigurationError("epsilon must be in [0, 1)")
        if not 0.0 <= self.birth_fraction <= 1.0:
            raise ConfigurationError("birth_fraction must be in [0, 1]")
        if self.weight_mode not in WEIGHT_MODES:
            raise ConfigurationError(f"weight_mode must be one of {WEIGHT_MODES}")
        sv = np.asarray(self.sigma_v, dtype=float)
        if sv.shape != (2, 2) or not np.allclose(sv, sv.T):
            raise ConfigurationError("sigma_v must be a symmetric 2x2 matrix")
        try:
            np.linalg.cholesky(sv)
        except np.linalg.LinAlgError:
            raise ConfigurationError("sigma_v must be positive definite") from None
        object.__setattr__(self, "sigma_v", tuple(map(tuple, sv.tolist())))

    @property
    def sigma_v_inv(self) -> np.ndarray:
        return np.linalg.inv(np.asarray(self.sigma_v))


@dataclass
class Particle:
    x_p: float
    y_p: float
    v_px: float
    v_py: float
    w_position: float
    w_velocity: float


@dataclass
class ParticleSet:
    """Structure-of-arrays particle population (global frame)."""
    x: np.ndarray
    y: np.ndarray
    vx: np.ndarray
    vy: np.ndarray
    w_position: np.ndarray
    w_velocity: np.ndarray
    alive: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.alive is None:
            self.alive = np.ones(len(self.x), dtype=bool)

    @classmethod
    def empty(cls, n: int) -> "ParticleSet":
        z = np.zeros(n)
        return cls(z.copy(), z.copy(), z.copy(), z.copy(), z.copy(), z.copy(),
                   np.zeros(n, dtype=bool))

    @classmethod
    def from_particles(cls, particles) -> "ParticleSet":
        a = np.array([[p.x_p, p.y_p, p.v_px, p.v_py, p.w_position, p.w_velocity]
                      for p in particles], dtype=float).reshape(-1, 6)
        return cls(*(a[:, k].copy() for k in range(6)))

    def __len__(self):
        return len(self.x)

    def __getitem__(self, k) -> Particle:
        return Particle(float(self.x[k]), float(self.y[k]), float(self.vx[k]), float(self.vy[k]),
                        float(self.w_position[k]), float(self.w_velocity[k]))

    @property
    def positions(self) -> np.ndarray:
        return np.column_stack([self.x, self.y])

    @property
    def velocities(self) -> np.ndarray:
        return np.column_stack([self.vx, self.vy])

    def copy(self) -> "ParticleSet":
        return ParticleSet(self.x.copy(), self.y.copy(), self.vx.copy(), self.vy.copy(),
                           self.w_position.copy(), self.w_velocity.copy(), self.alive.copy())

    def take(self, idx) -> "ParticleSet":
        return ParticleSet(self.x[idx], self.y[idx], self.vx[idx], self.vy[idx],
                           self.w_position[idx], self.w_velocity[idx], self.alive[idx])

    def write_csv(self, path) -> None:
        data = np.column_stack([self.x, self.y, self.vx, self.vy,
                                self.w_position, self.w_velocity])
        np.savetxt(path, data, delimiter=",", fmt="%.17g",
                   header="x,y,vx,vy,w_position,w_velocity", comments="")


def predict(particles: ParticleSet, dt: float, params: FilterParams,
            rng: np.random.Generator) -> ParticleSet:
    """Constant-velocity transition with additive Gaussian noise; weights unchanged."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    noise = rng.standard_normal((4, len(particles)))
    noise[:2] *= params.process_noise_pos
    noise[2:] *= params.process_noise_vel
    return ParticleSet(particles.x + particles.vx * dt + noise[0],
                       particles.y + particles.vy * dt + noise[1],
                       particles.vx + noise[2], particles.vy + noise[3],
                       particles.w_position.copy(), particles.w_velocity.copy(),
                       particles.alive.copy())


def retire_outside(particles: ParticleSet, cell_index: np.ndarray) -> None:
    """Retire particles without a cell; their slots are refilled at resampling."""
    gone = cell_index < 0
    particles.alive &= ~gone
    particles.w_position[~particles.alive] = 0.0
    particles.w_velocity[~particles.alive] = 0.0


def f_v(v_p, mu_v, sigma_v_inv):
    """Peak-normalized 2D Gaussian of particle velocity around ``mu_v``."""
    dv = np.asarray(v_p, dtype=float) - np.asarray(mu_v, dtype=float)
    m = ((dv @ sigma_v_inv) * dv).sum(axis=-1)
    out = np.exp(-0.5 * m)
    return float(out) if out.ndim == 0 else out


def update_weight_position(w_prev, nn_dist, epsilon: float, free: FreeModelParams):
    """``f_d(d_p) * (1 - eps) * w_prev``; pure decay where ``nn_dist`` is NaN or None."""
    if nn_dist is None:
        nn_dist = np.nan
    d = np.asarray(nn_dist, dtype=float)
    prior = (1.0 - epsilon) * np.asarray(w_prev, dtype=float)
    upd = np.where(np.isnan(d), 1.0, f_d(np.nan_to_num(d), free))
    out = upd * prior
    return float(out) if out.ndim == 0 else out


def update_weight_velocity(w_prev, nn_dist, v_particle, v_meas, epsilon: float,
                           free: FreeModelParams, sigma_v_inv):
    """``f_d * f_v + (1 - f_d) * (1 - eps) * w_prev``.

    NaN/None ``nn_dist`` means no measurement: the weight only decays.
    """
    if nn_dist is None:
        nn_dist = np.nan
    d = np.asarray(nn_dist, dtype=float)
    missing = np.isnan(d)
    fd = np.where(missing, 0.0, f_d(np.nan_to_num(d), free))
    fv = np.where(missing, 0.0, f_v(np.nan_to_num(np.asarray(v_particle, dtype=float)),
                                    np.nan_to_num(np.asarray(v_meas, dtype=float)), sigma_v_inv))
    out = fd * fv + (1.0 - fd) * (1.0 - epsilon) * np.asarray(w_prev, dtype=float)
    return float(out) if out.ndim == 0 else out


def resample_weight(w_position, w_velocity, mode: str):
    if mode == "position":
        return w_position
    if mode == "velocity":
        return w_velocity
    if mode == "dual":
        return np.maximum(w_position, w_velocity)
    raise ConfigurationError(f"unknown weight mode {mode!r}")


class SpatialIndex:
    """Exact nearest-neighbor index over one frame's measurement positions."""

    def __init__(self, points):
        self.points = np.asarray(points, dtype=float).reshape(-1, 2)
        self._tree = cKDTree(self.points) if len(self.points) else None

    def __len__(self):
        return len(self.points)

    def query(self, xy, max_radius: float):
        """Nearest measurement index and distance per query; -1 / NaN when none
        lies within ``max_radius``."""
        xy = np.asarray(xy, dtype=float).reshape(-1, 2)
        if self._tree is None:
            return np.full(len(xy), -1, dtype=np.int64), np.full(len(xy), np.nan)
        # the tree's bound is strict; the next float up makes it inclusive
        bound = np.nextafter(max_radius, np.inf)
        dist, idx = self._tree.query(xy, k=1, distance_upper_bound=bound)
        miss = ~np.isfinite(dist)
        idx = np.where(miss, -1, idx).astype(np.int64)
        return idx, np.where(miss, np.nan, dist)


def nearest_measurement(p: Particle, index: SpatialIndex, max_radius: float):
    """``(measurement index, d_p)`` of the nearest measurement, or None."""
    idx, dist = index.query([[p.x_p, p.y_p]], max_radius)
    if idx[0] < 0:
        return None
    return int(idx[0]), float(dist[0])


def systematic_resample(weights, n: int, rng: np.random.Generator) -> np.ndarray:
    """Low-variance resampling: ``n`` indices drawn with one uniform offset."""
    w = np.asarray(weights, dtype=float)
    total = w.sum()
    if n == 0 or not total > 0:
        return np.zeros(0, dtype=np.int64)
    positions = (rng.random() + np.arange(n)) / n
    cum = np.cumsum(w) / total
    cum[-1] = 1.0
    return np.searchsorted(cum, positions, side="right").astype(np.int64)


def sample_births(n: int, cells: np.ndarray, grid, params: FilterParams,
                  rng: np.random.Generator) -> ParticleSet:
    """``n`` particles uniformly inside randomly chosen ``cells`` (flat indices;
    the whole map when empty) with velocities uniform in ``[-v_init_max, v_init_max]^2``."""
    nx, ny = grid.shape
    if len(cells) == 0:
        cells = np.arange(nx * ny)
    pick = cells[rng.integers(0, len(cells), n)]
    res = grid.spec.resolution_m
    u = rng.random((n, 2))
    x = grid.anchor[0] + (pick // ny + u[:, 0]) * res
    y = grid.anchor[1] + (pick % ny + u[:, 1]) * res
    v = rng.uniform(-params.v_init_max, params.v_init_max, (n, 2))
    z = np.zeros(n)
    return ParticleSet(x, y, v[:, 0].copy(), v[:, 1].copy(), z, z.copy())


def _concat(a: ParticleSet, b: ParticleSet) -> ParticleSet:
    return ParticleSet(*(np.concatenate([getattr(a, f), getattr(b, f)])
                         for f in ("x", "y", "vx", "vy", "w_position", "w_velocity", "alive")))


@dataclass
class ResampleResult:
    particles: ParticleSet
    unit_mass: float
    reset: bool


def resample(particles: ParticleSet, masses: np.ndarray, params: FilterParams,
             rng: np.random.Generator, birth_cells: np.ndarray, grid) -> ResampleResult:
    """Systematic resampling on ``masses`` plus births; both weights of every
    particle are reset to ``total_mass / particle_count``.

    With no positive mass the whole population is reborn (a filter reset) and
    the weights start at ``1 / particle_count``.
    """
    n = params.particle_count
    masses = np.where(particles.alive, masses, 0.0)
    total = float(masses.sum())
    if not total > 0:
        log.info("filter reset: no positive resample weight, full rebirth")
        out = sample_births(n, birth_cells, grid, params, rng)
        unit = 1.0 / n
        out.w_position[:] = unit
        out.w_velocity[:] = unit
        return ResampleResult(out, unit, True)
    n_birth = int(round(params.birth_fraction * n))
    idx = systematic_resample(masses, n - n_birth, rng)
    out = _concat(particles.take(idx), sample_births(n_birth, birth_cells, grid, params, rng))
    unit = total / n
    out.w_position[:] = unit
    out.w_velocity[:] = unit
    out.alive[:] = True
    return ResampleResult(out, unit, False)
