"""Deterministic radar scenario simulator.

Targets are rectangles moving along straight lanes with piecewise-linear
speed profiles. Every sensor samples a few scatter points on the part of each
target's silhouette that faces it and lies inside its field of view and range;
the raw range rate is the relative velocity projected on the line of sight.
Each step is a pure function of ``(scenario, seed, t)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import yaml

from .measurement import ConfigurationError, EgoState, RadarDetection, SensorMount

KMH = 1.0 / 3.6
SCATTER_SPACING = 0.05  # m, candidate spacing along the silhouette


class UsageError(ValueError):
    pass


@dataclass(frozen=True)
class Trajectory:
    """Straight-line motion with a piecewise-linear speed profile.

    ``speed_profile`` is a sequence of ``(t, speed)`` knots; speed is held
    constant outside the knot range.
    """
    x0: float
    y0: float
    heading: float
    speed_profile: Tuple[Tuple[float, float], ...]

    def __post_init__(self):
        prof = tuple((float(t), float(v)) for t, v in self.speed_profile)
        if not prof:
            raise ConfigurationError("speed_profile needs at least one knot")
        if any(b[0] <= a[0] for a, b in zip(prof, prof[1:])):
            raise ConfigurationError("speed_profile times must be increasing")
        object.__setattr__(self, "speed_profile", prof)

    def speed(self, t: float) -> float:
        ts, vs = zip(*self.speed_profile)
        return float(np.interp(t, ts, vs))

    def distance(self, t: float) -> float:
        knots = list(self.speed_profile)
        if t <= knots[0][0]:
            return knots[0][1] * t
        s = knots[0][1] * knots[0][0]
        for (ta, va), (tb, vb) in zip(knots, knots[1:]):
            if t <= tb:
                vt = va + (vb - va) * (t - ta) / (tb - ta)
                return s + 0.5 * (va + vt) * (t - ta)
            s += 0.5 * (va + vb) * (tb - ta)
        return s + knots[-1][1] * (t - knots[-1][0])

    def state(self, t: float):
        """``(x, y, heading, vx, vy)`` at time ``t``."""
        c, s = math.cos(self.heading), math.sin(self.heading)
        d, v = self.distance(t), self.speed(t)
        return (self.x0 + c * d, self.y0 + s * d, self.heading, c * v, s * v)

    def speed_range(self, duration: float) -> Tuple[float, float]:
        vs = [self.speed(0.0), self.speed(duration)]
        vs += [v for t, v in self.speed_profile if 0.0 <= t <= duration]
        return min(vs), max(vs)


@dataclass(frozen=True)
class TargetObject:
    id: str
    length: float
    width: float
    trajectory: Trajectory


@dataclass(frozen=True)
class StaticObject:
    """Roadside reflector (post, sign, barrier element)."""
    id: str
    x: float
    y: float
    length: float = 0.3
    width: float = 0.3

    @property
    def trajectory(self) -> Trajectory:
        return Trajectory(self.x, self.y, 0.0, ((0.0, 0.0),))


@dataclass(frozen=True)
class RadarSensorSpec:
    id: str
    mount: SensorMount
    fov: float
    max_range: float
    sigma_range: float = 0.15
    sigma_azimuth: float = math.radians(0.5)
    sigma_range_rate: float = 0.1
    points_per_target: int = 3

    def __post_init__(self):
        if not 0 < self.fov <= 2 * math.pi:
            raise ConfigurationError(f"sensor {self.id}: fov must be in (0, 2pi]")
        if not self.max_range > 0:
            raise ConfigurationError(f"sensor {self.id}: max_range must be positive")


def default_rig() -> List[RadarSensorSpec]:
    """Four corner short-range radars at the wheels plus a front long-range radar."""
    srr = dict(fov=math.radians(150.0), max_range=50.0)
    d45 = math.radians(45.0)
    return [
        RadarSensorSpec("lrr", SensorMount(2.3, 0.0, 0.0), fov=math.radians(20.0), max_range=180.0),
        RadarSensorSpec("srr_fl", SensorMount(1.4, 0.8, d45), **srr),
        RadarSensorSpec("srr_fr", SensorMount(1.4, -0.8, -d45), **srr),
        RadarSensorSpec("srr_rl", SensorMount(-1.4, 0.8, 3 * d45), **srr),
        RadarSensorSpec("srr_rr", SensorMount(-1.4, -0.8, -3 * d45), **srr),
    ]


@dataclass
class ScenarioSpec:
    name: str
    duration: float
    dt: float
    ego: Trajectory
    targets: List[TargetObject]
    sensors: List[RadarSensorSpec] = field(default_factory=default_rig)
    landmarks: List[StaticObject] = field(default_factory=list)
    seed: int = 0
    noise: bool = True
    clutter_rate: float = 0.0  # expected false alarms per sensor and frame

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigurationError("dt must be positive")
        if not self.duration >= 0:
            raise ConfigurationError("duration must be non-negative")
        ids = [s.id for s in self.sensors]
        if len(set(ids)) != len(ids):
            raise ConfigurationError("sensor ids must be unique")

    @property
    def _landmark_xy(self) -> np.ndarray:
        return np.array([[m.x, m.y] for m in self.landmarks]).reshape(-1, 2)

    @property
    def n_steps(self) -> int:
        return int(math.floor(self.duration / self.dt + 1e-9)) + 1

    def times(self) -> np.ndarray:
        return np.arange(self.n_steps) * self.dt

    @property
    def mounts(self) -> Dict[str, SensorMount]:
        return {s.id: s.mount for s in self.sensors}


@dataclass(frozen=True)
class ObjectTruth:
    id: str
    x: float
    y: float
    heading: float
    vx: float
    vy: float
    length: float
    width: float
    visible: bool


@dataclass(frozen=True)
class GroundTruthFrame:
    timestamp: float
    ego: EgoState
    objects: Tuple[ObjectTruth, ...]


def ego_state(scenario: ScenarioSpec, t: float) -> EgoState:
    x, y, h, vx, vy = scenario.ego.state(t)
    return EgoState(x, y, h, vx, vy, 0.0)


def _wrap(a):
    return (a + np.pi) % (2 * np.pi) - np.pi


def _silhouette_candidates(cx, cy, heading, length, width, sx, sy):
    """Points on the edges of the rectangle that face the sensor at ``(sx, sy)``."""
    c, s = math.cos(heading), math.sin(heading)
    hl, hw = length / 2.0, width / 2.0
    # edges as (midpoint offset in body frame, outward normal in body frame, half-length axis)
    edges = (((hl, 0.0), (1.0, 0.0), (0.0, hw)),
             ((-hl, 0.0), (-1.0, 0.0), (0.0, hw)),
             ((0.0, hw), (0.0, 1.0), (hl, 0.0)),
             ((0.0, -hw), (0.0, -1.0), (hl, 0.0)))
    pts = []
    for (mx, my), (nx, ny), (ax, ay) in edges:
        gx, gy = cx + c * mx - s * my, cy + s * mx + c * my
        gnx, gny = c * nx - s * ny, s * nx + c * ny
        if gnx * (sx - gx) + gny * (sy - gy) <= 0:
            continue
        half = math.hypot(ax, ay)
        n = max(int(math.ceil(2 * half / SCATTER_SPACING)), 1) + 1
        u = np.linspace(-1.0, 1.0, n)
        gax, gay = c * ax - s * ay, s * ax + c * ay
        pts.append(np.column_stack([gx + u * gax, gy + u * gay]))
    if not pts:
        return np.zeros((0, 2))
    return np.concatenate(pts)


@dataclass(frozen=True)
class _SensorPose:
    spec: RadarSensorSpec
    x: float
    y: float
    yaw: float
    vx: float
    vy: float


def _sensor_poses(scenario: ScenarioSpec, ego: EgoState) -> List[_SensorPose]:
    c, s = math.cos(ego.yaw), math.sin(ego.yaw)
    out = []
    for spec in scenario.sensors:
        m = spec.mount
        lx, ly = c * m.x - s * m.y, s * m.x + c * m.y
        out.append(_SensorPose(spec, ego.x + lx, ego.y + ly, ego.yaw + m.yaw,
                               ego.vx - ego.yaw_rate * ly, ego.vy + ego.yaw_rate * lx))
    return out


def _visible_points(sp: _SensorPose, pts: np.ndarray) -> np.ndarray:
    if len(pts) == 0:
        return pts
    dx, dy = pts[:, 0] - sp.x, pts[:, 1] - sp.y
    r = np.hypot(dx, dy)
    az = _wrap(np.arctan2(dy, dx) - sp.yaw)
    ok = (r <= sp.spec.max_range) & (np.abs(az) <= sp.spec.fov / 2.0) & (r > 0)
    return pts[ok]


def _objects(scenario: ScenarioSpec, sp: _SensorPose):
    for tgt in scenario.targets:
        yield tgt, False
    if scenario.landmarks:
        xy = scenario._landmark_xy
        reach = sp.spec.max_range + 1.0
        near = np.flatnonzero(np.hypot(xy[:, 0] - sp.x, xy[:, 1] - sp.y) <= reach)
        for k in near.tolist():
            yield scenario.landmarks[k], True


def step(scenario: ScenarioSpec, t: float):
    """Ground truth and radar detections at lattice time ``t``."""
    k = int(round(t / scenario.dt))
    if abs(k * scenario.dt - t) > 1e-9 * max(1.0, abs(t)) or k < 0 or k >= scenario.n_steps:
        raise UsageError(f"t={t!r} is not on the scenario time lattice")
    t = k * scenario.dt
    rng = np.random.default_rng([scenario.seed, k])
    ego = ego_state(scenario, t)
    sensors = _sensor_poses(scenario, ego)

    truths = []
    detections: List[RadarDetection] = []
    for sp in sensors:
        spec = sp.spec
        for obj, is_static in _objects(scenario, sp):
            ox, oy, oh, ovx, ovy = obj.trajectory.state(t)
            cand = _visible_points(sp, _silhouette_candidates(ox, oy, oh, obj.length, obj.width,
                                                              sp.x, sp.y))
            if len(cand) == 0:
                continue
            n_pts = 1 if is_static else spec.points_per_target
            pick = cand[rng.integers(0, len(cand), n_pts)]
            dx, dy = pick[:, 0] - sp.x, pick[:, 1] - sp.y
            r = np.hypot(dx, dy)
            los_x, los_y = dx / r, dy / r
            rr = (ovx - sp.vx) * los_x + (ovy - sp.vy) * los_y
            az = _wrap(np.arctan2(dy, dx) - sp.yaw)
            if scenario.noise:
                r = r + rng.normal(0.0, spec.sigma_range, len(r))
                az = az + rng.normal(0.0, spec.sigma_azimuth, len(az))
                rr = rr + rng.normal(0.0, spec.sigma_range_rate, len(rr))
            for a, b, c in zip(np.abs(r).tolist(), az.tolist(), rr.tolist()):
                detections.append(RadarDetection(a, b, c, spec.id, t))
        if scenario.clutter_rate > 0:
            n = int(rng.poisson(scenario.clutter_rate))
            r = rng.uniform(0.5, spec.max_range, n)
            az = rng.uniform(-spec.fov / 2.0, spec.fov / 2.0, n)
            bearing = az + sp.yaw
            rr = -(sp.vx * np.cos(bearing) + sp.vy * np.sin(bearing))
            for a, b, c in zip(r.tolist(), az.tolist(), rr.tolist()):
                detections.append(RadarDetection(a, b, c, spec.id, t))

    for tgt in scenario.targets:
        ox, oy, oh, ovx, ovy = tgt.trajectory.state(t)
        visible = False
        for sp in sensors:
            cand = _silhouette_candidates(ox, oy, oh, tgt.length, tgt.width, sp.x, sp.y)
            if len(_visible_points(sp, cand)):
                visible = True
                break
        truths.append(ObjectTruth(tgt.id, ox, oy, oh, ovx, ovy, tgt.length, tgt.width, visible))
    return GroundTruthFrame(t, ego, tuple(truths)), detections


def simulate(scenario: ScenarioSpec):
    """All steps in order as ``(truth, detections)`` pairs."""
    return [step(scenario, t) for t in scenario.times()]


# -- built-in scenarios -------------------------------------------------------

BUILTIN_DT = 0.1
BUILTIN_DURATION = 20.0


def _const(v_kmh: float):
    return ((0.0, v_kmh * KMH),)


def _guardrail(prefix: str, y: float, x0: float = -100.0, x1: float = 900.0,
               spacing: float = 10.0) -> List[StaticObject]:
    """Posts of a roadside barrier along ``y``."""
    xs = np.arange(x0, x1 + 1e-9, spacing)
    return [StaticObject(f"{prefix}{k}", float(x), y) for k, x in enumerate(xs)]


def builtin_scenario(name: str, seed: int = 0, **overrides) -> ScenarioSpec:
    """``simple_road`` or ``highway``; keyword overrides replace spec fields."""
    if name == "simple_road":
        ego = Trajectory(0.0, 0.0, 0.0, _const(90.0))
        lead = Trajectory(30.0, 0.0, 0.0, ((0.0, 100 * KMH), (8.0, 100 * KMH),
                                           (12.0, 110 * KMH), (20.0, 110 * KMH)))
        targets = [TargetObject("lead_car", 4.6, 1.9, lead)]
        landmarks = _guardrail("rail_l", 5.0) + _guardrail("rail_r", -5.0)
    elif name == "highway":
        ego = Trajectory(0.0, 0.0, 0.0, _const(100.0))
        targets = [
            TargetObject("lead_car", 4.6, 1.9, Trajectory(30.0, 0.0, 0.0, _const(110.0))),
            TargetObject("overtaking_car", 4.6, 1.9, Trajectory(-30.0, -3.5, 0.0, _const(125.0))),
            TargetObject("truck", 12.0, 2.5, Trajectory(0.0, 7.0, 0.0, _const(100.0))),
            TargetObject("oncoming_car_1", 4.6, 1.9, Trajectory(150.0, 11.0, math.pi, _const(100.0))),
            TargetObject("oncoming_car_2", 4.8, 2.0, Trajectory(700.0, 11.0, math.pi, _const(120.0))),
        ]
        landmarks = _guardrail("median", 9.0) + _guardrail("rail_r", -6.0)
    else:
        raise UsageError(f"unknown built-in scenario {name!r}")
    spec = ScenarioSpec(name=name, duration=BUILTIN_DURATION, dt=BUILTIN_DT, ego=ego,
                        targets=targets, landmarks=landmarks, seed=seed)
    return replace(spec, **overrides) if overrides else spec


# -- declarative scenario files -----------------------------------------------

def _trajectory_from(d: dict, where: str) -> Trajectory:
    try:
        if "speed_profile" in d:
            prof = [(float(t), float(v) * KMH) for t, v in d["speed_profile"]]
        else:
            prof = [(0.0, float(d["speed_kmh"]) * KMH)]
        return Trajectory(float(d.get("x", 0.0)), float(d.get("y", 0.0)),
                          math.radians(float(d.get("heading_deg", 0.0))), tuple(prof))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigurationError(f"{where}: bad trajectory ({exc})") from None


def scenario_from_dict(d: dict) -> ScenarioSpec:
    """Build a scenario from a parsed config mapping.

    Speeds are given in km/h, angles in degrees. ``base`` starts from a built-in
    scenario and the remaining keys override it.
    """
    if not isinstance(d, dict):
        raise ConfigurationError("scenario config must be a mapping")
    known = {"base", "name", "duration", "dt", "seed", "noise", "clutter_rate",
             "ego", "targets", "landmarks", "sensors"}
    for key in d:
        if key not in known:
            raise ConfigurationError(f"unknown scenario key {key!r}")
    if "base" in d:
        spec = builtin_scenario(d["base"])
    else:
        if "ego" not in d:
            raise ConfigurationError("missing scenario key 'ego'")
        spec = ScenarioSpec(name="custom", duration=BUILTIN_DURATION, dt=BUILTIN_DT,
                            ego=_trajectory_from(d["ego"], "ego"), targets=[])
    kw = {}
    for key, conv in (("name", str), ("duration", float), ("dt", float), ("seed", int),
                      ("noise", bool), ("clutter_rate", float)):
        if key in d:
            try:
                kw[key] = conv(d[key])
            except (TypeError, ValueError):
                raise ConfigurationError(f"bad value for scenario key {key!r}") from None
    if "ego" in d:
        kw["ego"] = _trajectory_from(d["ego"], "ego")
    if "targets" in d:
        targets = []
        for k, t in enumerate(d["targets"]):
            where = f"targets[{k}]"
            try:
                targets.append(TargetObject(str(t["id"]), float(t.get("length", 4.6)),
                                            float(t.get("width", 1.9)), _trajectory_from(t, where)))
            except (KeyError, TypeError) as exc:
                raise ConfigurationError(f"{where}: missing {exc}") from None
        kw["targets"] = targets
    if "landmarks" in d:
        kw["landmarks"] = [StaticObject(str(m.get("id", f"lm{k}")), float(m["x"]), float(m["y"]),
                                        float(m.get("length", 0.3)), float(m.get("width", 0.3)))
                           for k, m in enumerate(d["landmarks"])]
    if "sensors" in d:
        sensors = []
        for k, s in enumerate(d["sensors"]):
            try:
                sensors.append(RadarSensorSpec(
                    str(s["id"]),
                    SensorMount(float(s["x"]), float(s["y"]), math.radians(float(s["yaw_deg"]))),
                    fov=math.radians(float(s["fov_deg"])), max_range=float(s["max_range"]),
                    sigma_range=float(s.get("sigma_range", 0.15)),
                    sigma_azimuth=math.radians(float(s.get("sigma_azimuth_deg", 0.5))),
                    sigma_range_rate=float(s.get("sigma_range_rate", 0.1)),
                    points_per_target=int(s.get("points_per_target", 3))))
            except KeyError as exc:
                raise ConfigurationError(f"sensors[{k}]: missing {exc}") from None
        kw["sensors"] = sensors
    return replace(spec, **kw)


def load_scenario(path) -> ScenarioSpec:
    with open(path) as fh:
        try:
            data = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigurationError(f"{path}: {exc}") from None
    return scenario_from_dict(data)
