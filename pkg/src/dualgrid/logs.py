"""Line-delimited detection and ground-truth logs for replay without the simulator.

Detection log::

    #sensor,<id>,<x>,<y>,<yaw>,<fov>,<max_range>     rig header, one per sensor
    #ego,<t>,<x>,<y>,<yaw>,<vx>,<vy>,<yaw_rate>        starts a frame
    <t>,<sensor_id>,<range>,<azimuth>,<range_rate>     one detection per line

Truth log::

    <t>,<object_id>,<x>,<y>,<heading>,<vx>,<vy>,<length>,<width>,<visible>

Floats are written with ``repr`` so a replay reproduces the run bit for bit.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List

from .measurement import EgoState, RadarDetection, SensorMount
from .simulator import GroundTruthFrame, ObjectTruth


class LogFormatError(ValueError):
    def __init__(self, path, lineno, msg):
        super().__init__(f"{path}:{lineno}: {msg}")
        self.lineno = lineno


@dataclass
class DetectionFrame:
    timestamp: float
    ego: EgoState
    detections: List[RadarDetection]


@dataclass
class RadarSensorHeader:
    id: str
    mount: SensorMount
    fov: float
    max_range: float


def _r(x) -> str:
    return repr(float(x))


def write_detection_log(path, sensors, frames) -> None:
    """``frames`` is a sequence of ``(timestamp, EgoState, detections)``."""
    with open(path, "w") as fh:
        for s in sensors:
            m = s.mount
            fh.write(f"#sensor,{s.id},{_r(m.x)},{_r(m.y)},{_r(m.yaw)},{_r(s.fov)},{_r(s.max_range)}\n")
        for t, ego, dets in frames:
            fh.write(f"#ego,{_r(t)},{_r(ego.x)},{_r(ego.y)},{_r(ego.yaw)},{_r(ego.vx)},"
                     f"{_r(ego.vy)},{_r(ego.yaw_rate)}\n")
            for d in dets:
                fh.write(f"{_r(d.timestamp)},{d.sensor_id},{_r(d.range)},{_r(d.azimuth)},"
                         f"{_r(d.range_rate)}\n")


def read_detection_log(path):
    """``(sensor headers, frames)``; raises :class:`LogFormatError` naming the line."""
    sensors: List[RadarSensorHeader] = []
    frames: List[DetectionFrame] = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            try:
                if parts[0] == "#sensor":
                    if len(parts) != 7:
                        raise ValueError("expected 7 fields")
                    x, y, yaw, fov, rmax = map(float, parts[2:])
                    sensors.append(RadarSensorHeader(parts[1], SensorMount(x, y, yaw), fov, rmax))
                elif parts[0] == "#ego":
                    if len(parts) != 8:
                        raise ValueError("expected 8 fields")
                    t, *state = map(float, parts[1:])
                    frames.append(DetectionFrame(t, EgoState(*state), []))
                elif parts[0].startswith("#"):
                    continue
                else:
                    if len(parts) != 5:
                        raise ValueError("expected 5 fields")
                    if not frames:
                        raise ValueError("detection before the first #ego line")
                    t = float(parts[0])
                    if t != frames[-1].timestamp:
                        raise ValueError("timestamp does not match the current frame")
                    frames[-1].detections.append(RadarDetection(
                        float(parts[2]), float(parts[3]), float(parts[4]), parts[1], t))
            except ValueError as exc:
                raise LogFormatError(path, lineno, str(exc)) from None
    return sensors, frames


def write_truth_log(path, truths) -> None:
    with open(path, "w") as fh:
        for tr in truths:
            for o in tr.objects:
                fh.write(f"{_r(tr.timestamp)},{o.id},{_r(o.x)},{_r(o.y)},{_r(o.heading)},"
                         f"{_r(o.vx)},{_r(o.vy)},{_r(o.length)},{_r(o.width)},{int(o.visible)}\n")


def read_truth_log(path, frames: List[DetectionFrame]) -> List[GroundTruthFrame]:
    """Truth frames aligned with the detection-log ``frames``."""
    by_time: Dict[float, list] = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            try:
                if len(parts) != 10:
                    raise ValueError("expected 10 fields")
                t = float(parts[0])
                x, y, h, vx, vy, length, width = map(float, parts[2:9])
                if parts[9] not in ("0", "1"):
                    raise ValueError("visible flag must be 0 or 1")
            except ValueError as exc:
                raise LogFormatError(path, lineno, str(exc)) from None
            by_time.setdefault(t, []).append(
                ObjectTruth(parts[1], x, y, h, vx, vy, length, width, parts[9] == "1"))
    return [GroundTruthFrame(f.timestamp, f.ego, tuple(by_time.get(f.timestamp, ())))
            for f in frames]
