"""Depth-to-point-cloud conversion and binary PCD v0.7 output.

Unprojection inverts the render projection exactly: pixel (u, v) at depth
d meters maps to the camera-space point

    ((u - cx) * d / fx, -(v - cy) * d / fy, -d)

then through the camera-to-world pose. Colors ride along as packed
0x00RRGGBB, the conventional PCD float-rgb bit pattern.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import ArbenchError, CameraIntrinsics, DepthMap, Pose, RgbImage, resize_nearest


class PointCloudError(ArbenchError):
    code = "PointCloudError"


class NoValidPixels(PointCloudError):
    code = "NoValidPixels"


class StorageUnavailable(PointCloudError):
    code = "StorageUnavailable"


class PcdParseError(PointCloudError):
    code = "PcdParseError"


@dataclass(frozen=True)
class ColoredPointSet:
    points: np.ndarray  # (N, 3) float32 world meters
    colors: np.ndarray  # (N, 3) uint8

    def __len__(self):
        return len(self.points)

    @classmethod
    def empty(cls):
        return cls(points=np.zeros((0, 3), dtype=np.float32), colors=np.zeros((0, 3), dtype=np.uint8))


def _pixel_grid(width, height, stride):
    us = np.arange(0, width, stride)
    vs = np.arange(0, height, stride)
    return np.meshgrid(us, vs)


def _to_world(x_cam, y_cam, z_cam, cam_pose: Pose):
    pts = np.stack([x_cam, y_cam, z_cam], axis=-1)
    r = cam_pose.matrix[:3, :3]
    t = cam_pose.matrix[:3, 3]
    return pts @ r.T + t


def unproject(depth: DepthMap, rgb: RgbImage, k: CameraIntrinsics, cam_pose: Pose, stride=1) -> ColoredPointSet:
    """Lift valid depth pixels on the stride grid into a colored world-space set."""
    if stride < 1:
        raise PointCloudError("stride must be >= 1")
    rgb_matched = resize_nearest(rgb.values, (depth.width, depth.height))
    uu, vv = _pixel_grid(depth.width, depth.height, stride)
    d = depth.to_meters()[vv, uu]
    valid = depth.valid_mask()[vv, uu]
    if not valid.any():
        raise NoValidPixels("depth map has no valid pixels on the stride grid")
    uu, vv, d = uu[valid], vv[valid], d[valid]
    x = (uu - k.cx) * d / k.fx
    y = -(vv - k.cy) * d / k.fy
    world = _to_world(x, y, -d, cam_pose)
    colors = rgb_matched[vv, uu, :3]
    return ColoredPointSet(points=world.astype(np.float32), colors=colors.astype(np.uint8))


def project(points_world, k: CameraIntrinsics, cam_pose: Pose):
    """World points back to continuous pixel coordinates (u, v) and depth."""
    inv = cam_pose.inverse().matrix
    p = np.atleast_2d(np.asarray(points_world, dtype=np.float64))
    cam = p @ inv[:3, :3].T + inv[:3, 3]
    depth = -cam[:, 2]
    safe = np.where(depth == 0, 1.0, depth)
    u = k.fx * cam[:, 0] / safe + k.cx
    v = k.cy - k.fy * cam[:, 1] / safe
    return u, v, depth


def virtual_to_points(layer, k: CameraIntrinsics, cam_pose: Pose, stride=1) -> ColoredPointSet:
    """Unproject a render layer's covered pixels using its z-buffer as depth."""
    if stride < 1:
        raise PointCloudError("stride must be >= 1")
    h, w = layer.zbuffer.shape
    uu, vv = _pixel_grid(w, h, stride)
    covered = (layer.alpha[vv, uu] > 0) & np.isfinite(layer.zbuffer[vv, uu])
    if not covered.any():
        return ColoredPointSet.empty()
    uu, vv = uu[covered], vv[covered]
    d = layer.zbuffer[vv, uu]
    x = (uu - k.cx) * d / k.fx
    y = -(vv - k.cy) * d / k.fy
    world = _to_world(x, y, -d, cam_pose)
    colors = layer.color.values[vv, uu, :3]
    return ColoredPointSet(points=world.astype(np.float32), colors=colors.astype(np.uint8))


def merge(a: ColoredPointSet, b: ColoredPointSet) -> ColoredPointSet:
    return ColoredPointSet(
        points=np.concatenate([a.points, b.points]),
        colors=np.concatenate([a.colors, b.colors]),
    )


def _pack_rgb(colors) -> np.ndarray:
    c = colors.astype(np.uint32)
    packed = (c[:, 0] << 16) | (c[:, 1] << 8) | c[:, 2]
    return packed.astype("<u4").view("<f4")


def _unpack_rgb(rgb_f32) -> np.ndarray:
    packed = np.ascontiguousarray(rgb_f32).view("<u4")
    return np.stack(
        [(packed >> 16) & 0xFF, (packed >> 8) & 0xFF, packed & 0xFF], axis=-1
    ).astype(np.uint8)


def encode_pcd(cloud: ColoredPointSet) -> bytes:
    """Binary PCD v0.7 with FIELDS x y z rgb, 16 bytes per point."""
    n = len(cloud)
    header = (
        "VERSION .7\n"
        "FIELDS x y z rgb\n"
        "SIZE 4 4 4 4\n"
        "TYPE F F F F\n"
        "COUNT 1 1 1 1\n"
        f"WIDTH {n}\n"
        "HEIGHT 1\n"
        "VIEWPOINT 0 0 0 1 0 0 0\n"
        f"POINTS {n}\n"
        "DATA binary\n"
    ).encode("ascii")
    body = np.empty((n, 4), dtype="<f4")
    body[:, :3] = cloud.points.astype("<f4")
    body[:, 3] = _pack_rgb(cloud.colors)
    return header + body.tobytes()


def decode_pcd(buf: bytes) -> ColoredPointSet:
    """Parse the binary PCD subset written by encode_pcd, bit-exactly."""
    marker = b"DATA binary\n"
    end = buf.find(marker)
    if end < 0:
        raise PcdParseError("missing 'DATA binary' header line")
    header = {}
    for line in buf[:end].decode("ascii").splitlines():
        key, _, rest = line.partition(" ")
        header[key] = rest
    if header.get("VERSION") != ".7":
        raise PcdParseError(f"unsupported PCD version {header.get('VERSION')!r}")
    if header.get("FIELDS") != "x y z rgb":
        raise PcdParseError(f"unsupported fields {header.get('FIELDS')!r}")
    n = int(header.get("POINTS", "0"))
    body = buf[end + len(marker) :]
    if len(body) != n * 16:
        raise PcdParseError(f"payload is {len(body)} bytes, expected {n * 16}")
    data = np.frombuffer(body, dtype="<f4").reshape(n, 4)
    return ColoredPointSet(
        points=data[:, :3].astype(np.float32),
        colors=_unpack_rgb(data[:, 3]),
    )


def merge_and_write_pcd(real: ColoredPointSet, virtual: ColoredPointSet, path) -> int:
    """Merge the real and virtual clouds and write one PCD file; returns byte length."""
    blob = encode_pcd(merge(real, virtual))
    try:
        Path(path).write_bytes(blob)
    except OSError as exc:
        raise StorageUnavailable(str(exc)) from exc
    return len(blob)
