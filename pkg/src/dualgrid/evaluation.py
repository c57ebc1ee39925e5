"""Object-level evaluation: DBSCAN over dynamic-cell particles, greedy
association to ground truth and the scenario metrics (position / velocity
error, time to first consistent cluster, tracked-duration fraction)."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

NOISE = -1

DBSCAN_EPS = 1.0
DBSCAN_MIN_PTS = 5
ASSOCIATION_GATE = 3.0
N_CONSISTENT = 5


def _components(n: int, i: np.ndarray, j: np.ndarray) -> np.ndarray:
    g = coo_matrix((np.ones(len(i), dtype=np.int8), (i, j)), shape=(n, n))
    return connected_components(g, directed=False)[1]


def _cell_codes(keys: np.ndarray):
    """Integer codes for 2D integer cell keys plus the row stride used."""
    lo = keys.min(axis=0) - 4
    k = keys - lo
    stride = int(k[:, 1].max()) + 5
    return k[:, 0] * stride + k[:, 1], stride


def _core_components(core_pts: np.ndarray, eps: float) -> np.ndarray:
    """Connected components of the eps-graph over core points.

    Points are bucketed into cells of side eps / (2 sqrt 2). Points in the same
    or 8-adjacent cells are always within eps, so those cells are joined
    outright; cells a little further apart are joined only after an exact
    check of their point pairs, and only if they are not already connected.
    """
    side = eps / (2.0 * math.sqrt(2.0))
    keys = np.floor(core_pts / side).astype(np.int64)
    codes, stride = _cell_codes(keys)
    cell_codes, cell_of = np.unique(codes, return_inverse=True)
    n_cells = len(cell_codes)
    cx, cy = np.divmod(cell_codes, stride)

    def neighbours(dx, dy):
        target = (cx + dx) * stride + (cy + dy)
        pos = np.searchsorted(cell_codes, target)
        pos = np.minimum(pos, n_cells - 1)
        hit = cell_codes[pos] == target
        return np.flatnonzero(hit), pos[hit]

    ea, eb = [np.arange(n_cells)], [np.arange(n_cells)]
    for dx, dy in ((1, 0), (0, 1), (1, 1), (1, -1)):
        a, b = neighbours(dx, dy)
        ea.append(a)
        eb.append(b)
    comp = _components(n_cells, np.concatenate(ea), np.concatenate(eb))

    # farther offsets whose closest points may still lie within eps
    pa, pb = [], []
    for dx in range(0, 4):
        for dy in range(-3, 4):
            if (dx, dy) <= (0, 0) or (dx <= 1 and abs(dy) <= 1):
                continue
            if max(dx - 1, 0) ** 2 + max(abs(dy) - 1, 0) ** 2 > 8:
                continue
            a, b = neighbours(dx, dy)
            still_apart = comp[a] != comp[b]
            pa.append(a[still_apart])
            pb.append(b[still_apart])
    pa, pb = np.concatenate(pa), np.concatenate(pb)
    if len(pa):
        order = np.argsort(cell_of, kind="stable")
        count = np.bincount(cell_of, minlength=n_cells)
        start = np.cumsum(count) - count
        na, nb = count[pa], count[pb]
        tot = na * nb
        pair = np.repeat(np.arange(len(pa)), tot)
        local = np.arange(int(tot.sum())) - np.repeat(np.cumsum(tot) - tot, tot)
        ia = order[start[pa][pair] + local // nb[pair]]
        ib = order[start[pb][pair] + local % nb[pair]]
        d2 = ((core_pts[ia] - core_pts[ib]) ** 2).sum(axis=1)
        ok = np.zeros(len(pa), dtype=bool)
        ok[pair[d2 <= eps * eps]] = True
        if ok.any():
            comp = _components(n_cells, np.concatenate(ea + [pa[ok]]),
                               np.concatenate(eb + [pb[ok]]))
    return comp[cell_of]


def dbscan(points, eps: float = DBSCAN_EPS, min_pts: int = DBSCAN_MIN_PTS) -> np.ndarray:
    """Cluster labels (0..k-1) with ``NOISE`` for outliers.

    A point is core when at least ``min_pts`` points (itself included) lie
    within ``eps``. Clusters are numbered by their lowest-index core point; a
    border point reachable from several clusters joins the lowest-numbered one,
    which is the cluster that claims it first in index order.
    """
    if not eps > 0 or min_pts < 1:
        raise ValueError("eps must be positive and min_pts >= 1")
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    n = len(pts)
    labels = np.full(n, NOISE, dtype=np.int64)
    if n == 0:
        return labels
    # points sharing a cell of side eps/sqrt(2) are mutually within eps, so
    # every point of a cell holding >= min_pts points is core without counting
    codes, _ = _cell_codes(np.floor(pts / (eps / math.sqrt(2.0))).astype(np.int64))
    _, inv, cell_count = np.unique(codes, return_inverse=True, return_counts=True)
    core = cell_count[inv] >= min_pts
    todo = np.flatnonzero(~core)
    if len(todo):
        counts = cKDTree(pts).query_ball_point(pts[todo], eps, return_length=True)
        core[todo] = counts >= min_pts
    core_idx = np.flatnonzero(core)
    if len(core_idx) == 0:
        return labels
    comp = _core_components(pts[core_idx], eps)
    # renumber components by their lowest core index (core_idx is sorted)
    first = np.full(comp.max() + 1, len(core_idx))
    np.minimum.at(first, comp, np.arange(len(core_idx)))
    rank = np.empty_like(first)
    rank[np.argsort(first)] = np.arange(len(first))
    labels[core_idx] = rank[comp]

    border = np.flatnonzero(~core)
    if len(border):
        core_tree = cKDTree(pts[core_idx])
        for b, nbrs in zip(border.tolist(), core_tree.query_ball_point(pts[border], eps)):
            if nbrs:
                labels[b] = labels[core_idx[nbrs]].min()
    return labels


@dataclass
class Cluster:
    members: np.ndarray
    centroid_pos: np.ndarray
    centroid_vel: np.ndarray
    total_weight: float


def clusters_from_particles(pos, vel, weights, eps: float = DBSCAN_EPS,
                            min_pts: int = DBSCAN_MIN_PTS) -> List[Cluster]:
    """DBSCAN clusters with weight-averaged position and velocity."""
    pos = np.asarray(pos, dtype=float).reshape(-1, 2)
    vel = np.asarray(vel, dtype=float).reshape(-1, 2)
    w = np.asarray(weights, dtype=float)
    labels = dbscan(pos, eps, min_pts)
    out = []
    if len(labels) == 0 or labels.max() < 0:
        return out
    k = labels.max() + 1
    ok = labels >= 0
    lab = labels[ok]
    wsum = np.bincount(lab, weights=w[ok], minlength=k)
    cnt = np.bincount(lab, minlength=k)
    order = np.argsort(labels, kind="stable")
    starts = np.searchsorted(labels[order], np.arange(k))
    for c in range(k):
        members = order[starts[c]:starts[c] + cnt[c]]
        wc = w[members]
        if wsum[c] > 0:
            cp = wc @ pos[members] / wsum[c]
            cv = wc @ vel[members] / wsum[c]
        else:
            cp, cv = pos[members].mean(axis=0), vel[members].mean(axis=0)
        out.append(Cluster(members, cp, cv, float(wsum[c])))
    return out


def associate(cluster_pos, object_pos, gate: float = ASSOCIATION_GATE) -> Dict[int, int]:
    """Greedy nearest-centroid matching under ``gate``: object index -> cluster index."""
    if not gate > 0:
        raise ValueError("gate must be positive")
    cp = np.asarray(cluster_pos, dtype=float).reshape(-1, 2)
    op = np.asarray(object_pos, dtype=float).reshape(-1, 2)
    if len(cp) == 0 or len(op) == 0:
        return {}
    d = np.hypot(op[:, None, 0] - cp[None, :, 0], op[:, None, 1] - cp[None, :, 1])
    oi, ci = np.nonzero(d <= gate)
    order = np.lexsort((ci, oi, d[oi, ci]))
    matched: Dict[int, int] = {}
    used = set()
    for k in order.tolist():
        o, c = int(oi[k]), int(ci[k])
        if o in matched or c in used:
            continue
        matched[o] = c
        used.add(c)
    return matched


@dataclass
class FrameEval:
    """Per-frame association outcome for each ground-truth object."""
    timestamp: float
    visible: Dict[str, bool]
    errors: Dict[str, tuple]  # object id -> (position error, velocity error) when matched


def evaluate_frame(clusters: Sequence[Cluster], truth, gate: float = ASSOCIATION_GATE,
                   in_map=None) -> FrameEval:
    """Associate ``clusters`` with the objects of a ground-truth frame.

    ``in_map`` optionally maps object id -> whether the object center lies in
    the grid window; objects outside are not counted as visible.
    """
    objs = list(truth.objects)
    cpos = np.array([c.centroid_pos for c in clusters]).reshape(-1, 2)
    opos = np.array([[o.x, o.y] for o in objs]).reshape(-1, 2)
    match = associate(cpos, opos, gate)
    errors = {}
    for oi, ci in match.items():
        o, c = objs[oi], clusters[ci]
        errors[o.id] = (float(np.hypot(*(c.centroid_pos - (o.x, o.y)))),
                        float(np.hypot(*(c.centroid_vel - (o.vx, o.vy)))))
    visible = {o.id: bool(o.visible and (in_map is None or in_map.get(o.id, True)))
               for o in objs}
    return FrameEval(float(truth.timestamp), visible, errors)


@dataclass
class MetricsReport:
    delta_x: float
    delta_v: float
    t_d: float
    duration_fraction: float
    per_object_duration: Dict[str, float] = field(default_factory=dict)

    @property
    def D(self) -> float:
        return self.duration_fraction


class EmptyRunError(ValueError):
    pass


def compute_metrics(frames: Sequence[FrameEval], n_consistent: int = N_CONSISTENT) -> MetricsReport:
    """Aggregate per-frame associations into scenario metrics.

    ``t_d`` is measured from the first visible frame of the first object to
    appear until the start of its first run of ``n_consistent`` consecutive
    matched frames (NaN if there is none). Matched frames count towards the
    duration of an object only while it is visible.
    """
    if not frames:
        raise EmptyRunError("no frames to evaluate")
    ids: List[str] = []
    for f in frames:
        for oid in f.visible:
            if oid not in ids:
                ids.append(oid)
    dx = [e[0] for f in frames for e in f.errors.values()]
    dv = [e[1] for f in frames for e in f.errors.values()]

    per_object = {}
    for oid in ids:
        vis = [f.visible.get(oid, False) for f in frames]
        hit = [v and oid in f.errors for v, f in zip(vis, frames)]
        n_vis = sum(vis)
        per_object[oid] = (sum(hit) / n_vis) if n_vis else float("nan")

    t_d = float("nan")
    first_seen = [(next((k for k, f in enumerate(frames) if f.visible.get(oid)), None), oid)
                  for oid in ids]
    first_seen = [(k, oid) for k, oid in first_seen if k is not None]
    if first_seen:
        k0, oid = min(first_seen)
        run = 0
        for k in range(k0, len(frames)):
            run = run + 1 if oid in frames[k].errors else 0
            if run >= n_consistent:
                t_d = frames[k - n_consistent + 1].timestamp - frames[k0].timestamp
                break

    durations = [v for v in per_object.values() if not math.isnan(v)]
    return MetricsReport(delta_x=float(np.mean(dx)) if dx else float("nan"),
                         delta_v=float(np.mean(dv)) if dv else float("nan"),
                         t_d=t_d,
                         duration_fraction=float(np.mean(durations)) if durations else float("nan"),
                         per_object_duration=per_object)


def _fmt(x: float) -> str:
    return repr(float(x))


def write_metrics_csv(path, reports: Dict[str, MetricsReport]) -> None:
    """One row per weight mode: mode, delta_x, delta_v, t_d, D."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["mode", "delta_x", "delta_v", "t_d", "D"])
        for mode, r in reports.items():
            w.writerow([mode, _fmt(r.delta_x), _fmt(r.delta_v), _fmt(r.t_d),
                        _fmt(r.duration_fraction)])


def write_per_object_csv(path, reports: Dict[str, MetricsReport]) -> None:
    """One row per (mode, object) with the tracked-duration fraction."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["mode", "object_id", "duration"])
        for mode, r in reports.items():
            for oid, frac in r.per_object_duration.items():
                w.writerow([mode, oid, _fmt(frac)])


def read_metrics_csv(path) -> Dict[str, Dict[str, float]]:
    with open(path, newline="") as fh:
        return {row["mode"]: {k: float(v) for k, v in row.items() if k != "mode"}
                for row in csv.DictReader(fh)}
