"""Shared domain types, units, and coordinate conventions.

Conventions used throughout the package:

- Right-handed coordinates, camera looks down -Z, X right, Y up.
- Poses are 4x4 row-major camera-to-world rigid transforms, translation in
  meters. World-to-camera is obtained by inversion.
- Depth is stored as 16-bit unsigned millimeters, 0 = invalid/missing,
  giving a representable range of (0, 65.535] m.

All types here are immutable value objects and safe to share across threads.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np


class ArbenchError(Exception):
    """Base class for package errors; `code` is the stable machine-readable name."""

    code = "Error"

    def __init__(self, message=""):
        super().__init__(message or self.code)


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def to_json_dict(self):
        return {
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "width": self.width,
            "height": self.height,
        }

    @classmethod
    def from_json_dict(cls, d):
        return cls(
            fx=float(d["fx"]),
            fy=float(d["fy"]),
            cx=float(d["cx"]),
            cy=float(d["cy"]),
            width=int(d["width"]),
            height=int(d["height"]),
        )


@dataclass(frozen=True, eq=False)
class Pose:
    """4x4 row-major camera-to-world (or object-to-world) rigid transform."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=np.float64, copy=True).reshape(4, 4)
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    def __eq__(self, other):
        return isinstance(other, Pose) and np.array_equal(self.matrix, other.matrix)

    @classmethod
    def identity(cls):
        return cls(np.eye(4))

    @classmethod
    def from_flat(cls, values):
        return cls(np.asarray(values, dtype=np.float64).reshape(4, 4))

    def to_flat(self):
        return [float(v) for v in self.matrix.reshape(-1)]

    def compose(self, other: "Pose") -> "Pose":
        return Pose(self.matrix @ other.matrix)

    def inverse(self) -> "Pose":
        r = self.matrix[:3, :3]
        t = self.matrix[:3, 3]
        inv = np.eye(4)
        inv[:3, :3] = r.T
        inv[:3, 3] = -r.T @ t
        return Pose(inv)

    @property
    def translation(self):
        return self.matrix[:3, 3]

    def rotation_violation(self, tol=1e-6):
        """Return None if the transform is rigid, else a short description."""
        r = self.matrix[:3, :3]
        if not np.allclose(r.T @ r, np.eye(3), atol=tol):
            return "rotation block is not orthonormal"
        if not math.isclose(float(np.linalg.det(r)), 1.0, abs_tol=1e-5):
            return "rotation determinant is not +1"
        if not np.allclose(self.matrix[3], [0.0, 0.0, 0.0, 1.0], atol=tol):
            return "last row is not (0,0,0,1)"
        return None


def rotation_y(angle_rad, translation=(0.0, 0.0, 0.0)):
    """Pose rotating about +Y (azimuth), then translating."""
    c, s = math.cos(angle_rad), math.sin(angle_rad)
    m = np.eye(4)
    m[:3, :3] = [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]]
    m[:3, 3] = translation
    return Pose(m)


def translation_pose(x, y, z):
    m = np.eye(4)
    m[:3, 3] = (x, y, z)
    return Pose(m)


@dataclass(frozen=True, eq=False)
class DepthMap:
    """Row-major uint16 depth samples in millimeters; 0 marks invalid pixels."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, copy=True)
        if v.dtype != np.uint16:
            raise TypeError("depth values must be uint16 millimeters")
        if v.ndim != 2:
            raise ValueError("depth values must be a (height, width) array")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __eq__(self, other):
        return isinstance(other, DepthMap) and np.array_equal(self.values, other.values)

    @property
    def width(self):
        return self.values.shape[1]

    @property
    def height(self):
        return self.values.shape[0]

    def to_meters(self):
        """Depth in float64 meters; invalid pixels map to 0.0."""
        return self.values.astype(np.float64) / 1000.0

    def valid_mask(self):
        return self.values > 0

    @classmethod
    def from_meters(cls, meters):
        """Quantize float meters to uint16 millimeters, saturating at 65.535 m."""
        mm = np.rint(np.asarray(meters, dtype=np.float64) * 1000.0)
        return cls(np.clip(mm, 0, 65535).astype(np.uint16))


@dataclass(frozen=True, eq=False)
class RgbImage:
    """Row-major 8-bit image, 3 (RGB) or 4 (RGBA) channels."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, copy=True)
        if v.dtype != np.uint8:
            raise TypeError("image values must be uint8")
        if v.ndim != 3 or v.shape[2] not in (3, 4):
            raise ValueError("image values must be (height, width, 3|4)")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __eq__(self, other):
        return isinstance(other, RgbImage) and np.array_equal(self.values, other.values)

    @property
    def width(self):
        return self.values.shape[1]

    @property
    def height(self):
        return self.values.shape[0]

    @property
    def channels(self):
        return self.values.shape[2]


@dataclass(frozen=True)
class Frame:
    """One timestamped capture unit."""

    index: int
    timestamp_ns: int
    rgb: RgbImage
    depth: DepthMap
    pose: Pose


@dataclass(frozen=True)
class VirtualObject:
    """A placeable mesh (OBJ path) or the literal "plane" occlusion primitive."""

    object_id: str
    mesh_ref: str
    pose: Pose
    scale: float
    base_color: tuple = (0.8, 0.8, 0.8)

    def to_json_dict(self):
        return {
            "object_id": self.object_id,
            "mesh_ref": self.mesh_ref,
            "pose": self.pose.to_flat(),
            "scale": self.scale,
            "base_color": list(self.base_color),
        }

    @classmethod
    def from_json_dict(cls, d):
        return cls(
            object_id=d["object_id"],
            mesh_ref=d["mesh_ref"],
            pose=Pose.from_flat(d["pose"]),
            scale=float(d["scale"]),
            base_color=tuple(d.get("base_color", (0.8, 0.8, 0.8))),
        )


@dataclass(frozen=True)
class SessionManifest:
    """Immutable per-session capture configuration, sent once at init time."""

    session_id: str
    intrinsics: CameraIntrinsics
    target_resolution: tuple
    depth_resolution: tuple
    objects: tuple = ()
    created_at: str = ""

    def __post_init__(self):
        object.__setattr__(self, "target_resolution", tuple(self.target_resolution))
        object.__setattr__(self, "depth_resolution", tuple(self.depth_resolution))
        object.__setattr__(self, "objects", tuple(self.objects))
        if not self.created_at:
            stamp = datetime.now(timezone.utc).isoformat()
            object.__setattr__(self, "created_at", stamp)

    def to_json_dict(self):
        return {
            "session_id": self.session_id,
            "intrinsics": self.intrinsics.to_json_dict(),
            "target_resolution": list(self.target_resolution),
            "depth_resolution": list(self.depth_resolution),
            "objects": [o.to_json_dict() for o in self.objects],
            "created_at": self.created_at,
        }

    def to_json(self):
        return json.dumps(self.to_json_dict(), separators=(",", ":"))

    @classmethod
    def from_json_dict(cls, d):
        return cls(
            session_id=d["session_id"],
            intrinsics=CameraIntrinsics.from_json_dict(d["intrinsics"]),
            target_resolution=tuple(d["target_resolution"]),
            depth_resolution=tuple(d["depth_resolution"]),
            objects=tuple(VirtualObject.from_json_dict(o) for o in d.get("objects", [])),
            created_at=d.get("created_at", ""),
        )

    @classmethod
    def from_json(cls, text):
        return cls.from_json_dict(json.loads(text))


@dataclass(frozen=True, eq=False)
class EnvironmentMap:
    """Equirectangular HDR radiance map, float32 linear RGB, width = 2 * height."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, copy=True)
        if v.dtype != np.float32:
            v = v.astype(np.float32)
        if v.ndim != 3 or v.shape[2] != 3:
            raise ValueError("environment map must be (height, width, 3)")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __eq__(self, other):
        return isinstance(other, EnvironmentMap) and np.array_equal(self.values, other.values)

    @property
    def width(self):
        return self.values.shape[1]

    @property
    def height(self):
        return self.values.shape[0]


TASKS = ("object_rendering", "occlusion_plane", "point_cloud", "env_map_eval", "three_sphere")


@dataclass(frozen=True)
class ProtocolEntry:
    model_id: str
    task: str
    task_params: dict = field(default_factory=dict)
    metric_ids: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "metric_ids", tuple(self.metric_ids))

    def to_json_dict(self):
        return {
            "model_id": self.model_id,
            "task": self.task,
            "task_params": dict(self.task_params),
            "metric_ids": list(self.metric_ids),
        }

    @classmethod
    def from_json_dict(cls, d):
        return cls(
            model_id=d["model_id"],
            task=d["task"],
            task_params=dict(d.get("task_params", {})),
            metric_ids=tuple(d.get("metric_ids", ())),
        )


@dataclass(frozen=True)
class ExperimentProtocol:
    """A declarative set of model-metric-task combinations to run on a session."""

    protocol_id: str
    entries: tuple

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))

    def to_json_dict(self):
        return {
            "protocol_id": self.protocol_id,
            "entries": [e.to_json_dict() for e in self.entries],
        }

    @classmethod
    def from_json_dict(cls, d):
        return cls(
            protocol_id=d["protocol_id"],
            entries=tuple(ProtocolEntry.from_json_dict(e) for e in d["entries"]),
        )


@dataclass(frozen=True)
class ValidationResult:
    ok: bool
    violation: str | None = None


def validate_manifest(m: SessionManifest) -> ValidationResult:
    """Check every manifest invariant; report the first violation with its field path."""

    def fail(msg):
        return ValidationResult(ok=False, violation=msg)

    if not m.session_id:
        return fail("session_id must be nonempty")

    k = m.intrinsics
    if not k.fx > 0:
        return fail("intrinsics.fx must be > 0")
    if not k.fy > 0:
        return fail("intrinsics.fy must be > 0")
    if k.width < 1 or k.height < 1:
        return fail("intrinsics.width and intrinsics.height must be >= 1")
    if not 0 <= k.cx < k.width:
        return fail("intrinsics.cx must be in [0, width)")
    if not 0 <= k.cy < k.height:
        return fail("intrinsics.cy must be in [0, height)")

    for name in ("target_resolution", "depth_resolution"):
        res = getattr(m, name)
        if len(res) != 2 or res[0] < 1 or res[1] < 1:
            return fail(f"{name} must be two positive integers")

    for i, obj in enumerate(m.objects):
        if not obj.object_id:
            return fail(f"objects[{i}].object_id must be nonempty")
        if not obj.mesh_ref:
            return fail(f"objects[{i}].mesh_ref must be nonempty")
        if not obj.scale > 0:
            return fail(f"objects[{i}].scale must be > 0")
        if len(obj.base_color) != 3 or any(not 0 <= c <= 1 for c in obj.base_color):
            return fail(f"objects[{i}].base_color must be an RGB triple in [0,1]")
        pose_problem = obj.pose.rotation_violation()
        if pose_problem is not None:
            return fail(f"objects[{i}].pose: {pose_problem}")

    return ValidationResult(ok=True)


def resize_nearest(arr, target_wh):
    """Nearest-neighbor resize of a (h, w[, c]) array to (width, height).

    Nearest is deliberate for depth: bilinear blends across discontinuities and
    fabricates mid-range values exactly where edges matter.
    """
    tw, th = int(target_wh[0]), int(target_wh[1])
    h, w = arr.shape[:2]
    if (w, h) == (tw, th):
        return arr
    rows = np.minimum((np.arange(th) + 0.5) * h / th, h - 1).astype(np.intp)
    cols = np.minimum((np.arange(tw) + 0.5) * w / tw, w - 1).astype(np.intp)
    return arr[rows][:, cols]
