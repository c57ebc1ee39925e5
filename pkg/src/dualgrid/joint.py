"""Joint update: measurement masses and particle weights -> normalized cell states."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import UNKNOWN_PRIOR

DYNAMIC_THRESHOLD = 0.6


@dataclass(frozen=True)
class CellEvidence:
    p_free_meas: float
    p_static_meas: float
    particle_weight_sum: float


def normalize_cell(e: CellEvidence):
    """``(p_empty, p_static, p_dynamic)`` of one cell; unknown prior when all evidence is 0."""
    q = e.p_free_meas + e.p_static_meas + e.particle_weight_sum
    if q > 0:
        return (e.p_free_meas / q, e.p_static_meas / q, e.particle_weight_sum / q)
    return UNKNOWN_PRIOR


def normalize_cells(p_free, p_static, weight_sum):
    """Vectorized :func:`normalize_cell`."""
    q = p_free + p_static + weight_sum
    pos = q > 0
    safe = np.where(pos, q, 1.0)
    pe = np.where(pos, p_free / safe, UNKNOWN_PRIOR[0])
    ps = np.where(pos, p_static / safe, UNKNOWN_PRIOR[1])
    pd = np.where(pos, weight_sum / safe, UNKNOWN_PRIOR[2])
    return pe, ps, pd


def classify_dynamic(p_dynamic):
    """Strictly above the 0.6 threshold."""
    return p_dynamic > DYNAMIC_THRESHOLD


def scale_particle_weights_to_cell(w_position, w_velocity, resample_weights, p_dynamic):
    """Scale both weights of a cell's particles so their resample weights sum to ``p_dynamic``."""
    wp = np.asarray(w_position, dtype=float)
    wv = np.asarray(w_velocity, dtype=float)
    total = float(np.sum(resample_weights))
    if total == 0:
        return wp.copy(), wv.copy()
    factor = p_dynamic / total
    return wp * factor, wv * factor


@dataclass
class JointResult:
    p_empty: np.ndarray
    p_static: np.ndarray
    p_dynamic: np.ndarray
    factor: np.ndarray       # per-cell weight scale factor
    weight_sum: np.ndarray   # per-cell pre-normalization resample weight sum


def joint_update(p_free_meas, p_static_meas, touched, cell_index, resample_weights,
                 unobserved=UNKNOWN_PRIOR[:2]) -> JointResult:
    """Grid-wide joint update.

    ``cell_index`` holds the flat cell of every particle (-1 = none). Cells
    untouched by the measurement grid take ``unobserved`` as their free/static
    evidence, so particles alone never make a cell fully dynamic.
    """
    shape = p_free_meas.shape
    n_cells = p_free_meas.size
    ok = cell_index >= 0
    wsum = np.bincount(cell_index[ok], weights=resample_weights[ok], minlength=n_cells)
    free = np.where(touched, p_free_meas, unobserved[0]).ravel()
    static = np.where(touched, p_static_meas, unobserved[1]).ravel()
    pe, ps, pd = normalize_cells(free, static, wsum)
    factor = np.where(wsum > 0, pd / np.where(wsum > 0, wsum, 1.0), 1.0)
    return JointResult(pe.reshape(shape), ps.reshape(shape), pd.reshape(shape),
                       factor, wsum)
