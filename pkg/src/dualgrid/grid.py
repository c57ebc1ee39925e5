"""Ego-centered occupancy grid with free / static / dynamic cell masses.

The grid is axis-aligned with the global frame and anchored on a global
lattice of ``resolution_m`` sized cells. Its window follows the ego vehicle
in whole-cell steps (:func:`shift_grid`); particles live in the global frame
and are never moved by a shift.

Cell ``(i, j)`` covers ``[lo, hi)`` along both axes, ``i`` indexing x and
``j`` indexing y. Storage is dense and row-major, shape ``(nx, ny)``.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

# Unknown prior for cells without evidence: (empty, static, dynamic).
UNKNOWN_PRIOR = (0.5, 0.5, 0.0)


@dataclass(frozen=True)
class GridSpec:
    length_m: float = 200.0
    width_m: float = 25.0
    resolution_m: float = 0.5
    origin_offset: Optional[Tuple[float, float]] = None

    def __post_init__(self):
        if not self.resolution_m > 0:
            raise ValueError("resolution_m must be positive")
        for name in ("length_m", "width_m"):
            n = getattr(self, name) / self.resolution_m
            if getattr(self, name) <= 0 or abs(n - round(n)) > 1e-9:
                raise ValueError(f"{name} must be a positive multiple of resolution_m")
        if self.origin_offset is None:
            object.__setattr__(self, "origin_offset", (self.length_m / 2.0, self.width_m / 2.0))

    @property
    def shape(self) -> Tuple[int, int]:
        return (int(round(self.length_m / self.resolution_m)),
                int(round(self.width_m / self.resolution_m)))

    @property
    def cell_count(self) -> int:
        nx, ny = self.shape
        return nx * ny


def world_to_cell(pos, spec: GridSpec) -> Optional[Tuple[int, int]]:
    """Cell ``(i, j)`` containing ``pos`` (ego frame), or None if outside the map."""
    res = spec.resolution_m
    i = int(np.floor((pos[0] + spec.origin_offset[0]) / res))
    j = int(np.floor((pos[1] + spec.origin_offset[1]) / res))
    nx, ny = spec.shape
    if 0 <= i < nx and 0 <= j < ny:
        return (i, j)
    return None


def cell_to_world(cell, spec: GridSpec) -> Tuple[float, float]:
    """Center of ``cell`` in the ego frame."""
    res = spec.resolution_m
    return ((cell[0] + 0.5) * res - spec.origin_offset[0],
            (cell[1] + 0.5) * res - spec.origin_offset[1])


@dataclass
class GridMap:
    """Persistent grid state.

    ``anchor`` is the global position of the lower-left corner of cell (0, 0);
    ``residual`` holds the sub-cell ego displacement (in cells) not yet applied.
    """
    spec: GridSpec
    p_empty: np.ndarray
    p_static: np.ndarray
    p_dynamic: np.ndarray
    ego_pose: Tuple[float, float, float]
    anchor: np.ndarray
    residual: np.ndarray = field(default_factory=lambda: np.zeros(2))

    @classmethod
    def create(cls, spec: GridSpec, ego_pose=(0.0, 0.0, 0.0)) -> "GridMap":
        shape = spec.shape
        anchor = np.array([ego_pose[0] - spec.origin_offset[0],
                           ego_pose[1] - spec.origin_offset[1]], dtype=float)
        return cls(spec=spec,
                   p_empty=np.full(shape, UNKNOWN_PRIOR[0]),
                   p_static=np.full(shape, UNKNOWN_PRIOR[1]),
                   p_dynamic=np.full(shape, UNKNOWN_PRIOR[2]),
                   ego_pose=tuple(float(v) for v in ego_pose),
                   anchor=anchor)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.spec.shape

    def copy(self) -> "GridMap":
        return dataclasses.replace(
            self, p_empty=self.p_empty.copy(), p_static=self.p_static.copy(),
            p_dynamic=self.p_dynamic.copy(), anchor=self.anchor.copy(),
            residual=self.residual.copy())

    def to_cell_coords(self, xy) -> np.ndarray:
        """Global positions -> continuous cell coordinates (cell units)."""
        return (np.asarray(xy, dtype=float) - self.anchor) / self.spec.resolution_m

    def flat_index(self, xy) -> np.ndarray:
        """Flat row-major cell index for each global position, -1 when outside."""
        c = np.floor(self.to_cell_coords(xy)).astype(np.int64)
        nx, ny = self.shape
        inside = (c[..., 0] >= 0) & (c[..., 0] < nx) & (c[..., 1] >= 0) & (c[..., 1] < ny)
        return np.where(inside, c[..., 0] * ny + c[..., 1], -1)

    def cell_centers(self) -> np.ndarray:
        """Global cell-center coordinates, shape ``(nx, ny, 2)``."""
        nx, ny = self.shape
        res = self.spec.resolution_m
        ii, jj = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
        return np.stack([self.anchor[0] + (ii + 0.5) * res,
                         self.anchor[1] + (jj + 0.5) * res], axis=-1)

    def simplex_error(self) -> float:
        return float(np.max(np.abs(self.p_empty + self.p_static + self.p_dynamic - 1.0)))


def _roll_fill(a: np.ndarray, kx: int, ky: int, fill: float) -> np.ndarray:
    out = np.full_like(a, fill)
    nx, ny = a.shape
    if abs(kx) >= nx or abs(ky) >= ny:
        return out
    src_x = slice(max(kx, 0), nx + min(kx, 0))
    dst_x = slice(max(-kx, 0), nx + min(-kx, 0))
    src_y = slice(max(ky, 0), ny + min(ky, 0))
    dst_y = slice(max(-ky, 0), ny + min(-ky, 0))
    out[dst_x, dst_y] = a[src_x, src_y]
    return out


def shift_grid(grid: GridMap, new_ego_pose) -> GridMap:
    """Re-center the window on ``new_ego_pose`` in whole-cell steps.

    Content at cell ``(i, j)`` moves to ``(i - kx, j - ky)`` for an integer
    shift ``(kx, ky)``; cells entering at the leading edge get the unknown
    prior. Sub-cell displacement accumulates in ``residual``, kept in ``[0, 1)``.
    """
    pose = tuple(float(v) for v in new_ego_pose)
    if not np.all(np.isfinite(pose)):
        raise ValueError("new_ego_pose must be finite")
    res = grid.spec.resolution_m
    delta = (np.array(pose[:2]) - np.array(grid.ego_pose[:2])) / res + grid.residual
    # floor keeps the residual in [0, 1), so the window depends only on the ego
    # position and not on the path; rounding absorbs float error such as
    # 10 * 0.3 = 2.9999999999999996
    k = np.floor(np.round(delta, 9)).astype(np.int64)
    kx, ky = int(k[0]), int(k[1])
    out = grid.copy()
    out.ego_pose = pose
    out.residual = delta - k
    if kx or ky:
        out.p_empty = _roll_fill(grid.p_empty, kx, ky, UNKNOWN_PRIOR[0])
        out.p_static = _roll_fill(grid.p_static, kx, ky, UNKNOWN_PRIOR[1])
        out.p_dynamic = _roll_fill(grid.p_dynamic, kx, ky, UNKNOWN_PRIOR[2])
        out.anchor = grid.anchor + k * res
    return out


def _hsv_to_rgb(h, s, v):
    i = np.floor(h * 6.0).astype(int) % 6
    f = h * 6.0 - np.floor(h * 6.0)
    p, q, t = v * (1 - s), v * (1 - s * f), v * (1 - s * (1 - f))
    r = np.choose(i, [v, q, p, p, t, v])
    g = np.choose(i, [t, v, v, q, p, p])
    b = np.choose(i, [p, p, t, v, v, q])
    return np.stack([r, g, b], axis=-1)


def render_snapshot(grid: GridMap, mean_velocity: Optional[np.ndarray] = None) -> np.ndarray:
    """RGB image with one pixel per cell, +y up and +x to the right.

    White marks free-dominant cells, black static-dominant ones. Dynamic-dominant
    cells get a hue from the direction of ``mean_velocity`` (shape
    ``(nx, ny, 2)``) and a value equal to ``p_dynamic``. Ties between free and
    static (the unknown prior) render mid-gray.
    """
    pe, ps, pd = grid.p_empty, grid.p_static, grid.p_dynamic
    rgb = np.full(pe.shape + (3,), 0.5)
    rgb[pe > ps] = 1.0
    rgb[ps > pe] = 0.0
    dyn = pd > np.maximum(pe, ps)
    if np.any(dyn):
        if mean_velocity is None:
            hue = np.zeros(pe.shape)
        else:
            hue = (np.arctan2(mean_velocity[..., 1], mean_velocity[..., 0]) / (2 * np.pi)) % 1.0
        colored = _hsv_to_rgb(hue, np.ones_like(pd), pd)
        rgb[dyn] = colored[dyn]
    img = np.round(rgb * 255).astype(np.uint8)
    return np.ascontiguousarray(img.transpose(1, 0, 2)[::-1])


def write_ppm(path, image: np.ndarray) -> None:
    """Write an ``(h, w, 3)`` uint8 image as binary PPM."""
    h, w, _ = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(image, dtype=np.uint8).tobytes())


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        tokens.append(data[pos:end])
        pos = end
    if tokens[0] != b"P6":
        raise ValueError("not a binary PPM file")
    w, h = int(tokens[1]), int(tokens[2])
    return np.frombuffer(data[pos + 1:], dtype=np.uint8, count=w * h * 3).reshape(h, w, 3)
