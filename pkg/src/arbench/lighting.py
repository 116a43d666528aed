"""Light-probe rendering under equirectangular environment maps.

Implements the three-probe evaluation protocol (diffuse, matte, mirror
spheres) plus environment-map sampling and full-object relighting. All
radiance is linear float32 RGB; every material is linear in the map, so
scaling the map by k scales every rendered pixel by k.

Equirectangular convention: theta = acos(y) in [0, pi] maps to rows
(zenith at row 0), phi = atan2(x, -z) in [0, 2*pi) maps to columns. A
texel subtends solid angle (2*pi/W) * (pi/H) * sin(theta).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import ArbenchError, EnvironmentMap

PROBE_KINDS = ("diffuse", "matte", "mirror")

# Probe pixels are shaded in chunks to bound the (pixels x texels) cosine
# matrix; 2048 rows keeps it under ~100 MB at 256x128 maps.
_CHUNK = 2048


class LightingError(ArbenchError):
    code = "LightingError"


@dataclass(frozen=True)
class ProbeMaterial:
    kind: str
    albedo: tuple = (1.0, 1.0, 1.0)
    phong_exponent: float = 32.0

    def __post_init__(self):
        if self.kind not in PROBE_KINDS:
            raise LightingError(f"unknown probe material {self.kind!r}")
        if self.phong_exponent <= 0:
            raise LightingError("phong_exponent must be > 0")


@dataclass(frozen=True)
class ProbeRender:
    """Square orthographic render of a unit sphere; zeros outside the mask."""

    image: np.ndarray
    mask: np.ndarray


def texel_directions(width, height):
    """Unit direction and solid angle for every texel center, row-major.

    Returns (dirs, dw) with dirs shaped (H*W, 3) and dw shaped (H*W,).
    """
    theta = (np.arange(height) + 0.5) * math.pi / height
    phi = (np.arange(width) + 0.5) * 2.0 * math.pi / width
    sin_t = np.sin(theta)[:, None]
    x = sin_t * np.sin(phi)[None, :]
    y = np.cos(theta)[:, None] * np.ones_like(phi)[None, :]
    z = -sin_t * np.cos(phi)[None, :]
    dirs = np.stack([x, y, z], axis=-1).reshape(-1, 3)
    dw = (2.0 * math.pi / width) * (math.pi / height) * np.repeat(sin_t[:, 0], width)
    return dirs, dw


def sample_env(env: EnvironmentMap, directions) -> np.ndarray:
    """Nearest-texel equirectangular lookup for one or many unit directions."""
    d = np.atleast_2d(np.asarray(directions, dtype=np.float64))
    theta = np.arccos(np.clip(d[:, 1], -1.0, 1.0))
    phi = np.mod(np.arctan2(d[:, 0], -d[:, 2]), 2.0 * math.pi)
    u = np.minimum((phi / (2.0 * math.pi) * env.width).astype(np.intp), env.width - 1)
    v = np.minimum((theta / math.pi * env.height).astype(np.intp), env.height - 1)
    out = env.values[v, u]
    return out[0] if np.asarray(directions).ndim == 1 else out


def reflect(view, normal):
    """Mirror direction 2(n.v)n - v, vectorized over rows."""
    v = np.atleast_2d(np.asarray(view, dtype=np.float64))
    n = np.atleast_2d(np.asarray(normal, dtype=np.float64))
    ndotv = np.sum(n * v, axis=-1, keepdims=True)
    r = 2.0 * ndotv * n - v
    return r[0] if np.asarray(view).ndim == 1 and np.asarray(normal).ndim == 1 else r


def _probe_geometry(resolution):
    px = (np.arange(resolution) + 0.5) / resolution * 2.0 - 1.0
    py = 1.0 - (np.arange(resolution) + 0.5) / resolution * 2.0
    x, y = np.meshgrid(px, py)
    rr = x * x + y * y
    mask = rr <= 1.0
    z = np.sqrt(np.clip(1.0 - rr, 0.0, 1.0))
    normals = np.stack([x, y, z], axis=-1)
    return mask, normals


def shade_diffuse(env: EnvironmentMap, normals, albedo):
    """Lambertian radiance albedo/pi * E(n) with E the cosine-weighted map sum.

    The discrete irradiance sum converges to pi*L for a constant map, so a
    unit-albedo sphere under radiance L renders at L (white furnace).
    """
    dirs, dw = texel_directions(env.width, env.height)
    radiance = env.values.reshape(-1, 3).astype(np.float64) * dw[:, None]
    n = np.atleast_2d(np.asarray(normals, dtype=np.float64))
    out = np.empty((n.shape[0], 3))
    for lo in range(0, n.shape[0], _CHUNK):
        cos = np.clip(n[lo : lo + _CHUNK] @ dirs.T, 0.0, None)
        out[lo : lo + _CHUNK] = cos @ radiance
    return out * (np.asarray(albedo, dtype=np.float64) / math.pi)


def shade_matte(env: EnvironmentMap, reflect_dirs, albedo, exponent):
    """Glossy radiance: cosine-lobe power `exponent` around the mirror
    direction, normalized by (exponent+1)/(2*pi) so the lobe integrates to
    one and a constant map renders at exactly the map radiance for any
    exponent value.
    """
    dirs, dw = texel_directions(env.width, env.height)
    radiance = env.values.reshape(-1, 3).astype(np.float64) * dw[:, None]
    norm = (exponent + 1.0) / (2.0 * math.pi)
    r = np.atleast_2d(np.asarray(reflect_dirs, dtype=np.float64))
    out = np.empty((r.shape[0], 3))
    for lo in range(0, r.shape[0], _CHUNK):
        lobe = np.clip(r[lo : lo + _CHUNK] @ dirs.T, 0.0, None) ** exponent
        out[lo : lo + _CHUNK] = lobe @ radiance
    return out * (norm * np.asarray(albedo, dtype=np.float64))


def shade_mirror(env: EnvironmentMap, reflect_dirs):
    return sample_env(env, reflect_dirs).astype(np.float64)


def shade_directions(env, material: ProbeMaterial, normals, views):
    """Shade unit normals/views with the given material, rows-to-rows."""
    if material.kind == "diffuse":
        return shade_diffuse(env, normals, material.albedo)
    r = reflect(views, normals)
    norms = np.linalg.norm(r, axis=-1, keepdims=True)
    r = r / np.where(norms == 0, 1.0, norms)
    if material.kind == "mirror":
        return shade_mirror(env, r)
    return shade_matte(env, r, material.albedo, material.phong_exponent)


def render_probe(env: EnvironmentMap, material: ProbeMaterial, resolution: int) -> ProbeRender:
    """Orthographic unit-sphere probe, view fixed at +Z."""
    if resolution < 8:
        raise LightingError("probe resolution must be >= 8")
    mask, normals = _probe_geometry(resolution)
    flat_n = normals[mask]
    views = np.tile(np.array([0.0, 0.0, 1.0]), (flat_n.shape[0], 1))
    shaded = shade_directions(env, material, flat_n, views)
    image = np.zeros((resolution, resolution, 3), dtype=np.float32)
    image[mask] = shaded.astype(np.float32)
    return ProbeRender(image=image, mask=mask)


def rotate_env(env: EnvironmentMap, delta_azimuth_deg: float) -> EnvironmentMap:
    """Azimuthally shifted copy; positive angles rotate content toward +phi.

    The shift is snapped to whole texels, so a 0-degree rotation is the
    identity bit-for-bit.
    """
    shift = int(round(delta_azimuth_deg / 360.0 * env.width))
    return EnvironmentMap(np.roll(env.values, shift, axis=1))


def tonemap(linear_rgb) -> np.ndarray:
    """clamp(linear)^(1/2.2) to 8-bit, for viewer-side PNGs of HDR content."""
    clamped = np.clip(np.asarray(linear_rgb, dtype=np.float64), 0.0, 1.0)
    return np.rint(255.0 * clamped ** (1.0 / 2.2)).astype(np.uint8)


def relight_object(mesh, pose, scale, env: EnvironmentMap, material: ProbeMaterial, cam, k):
    """Rasterize a mesh and shade it per pixel under an environment map.

    Uses the same projection and z-buffering as plain object rendering but
    replaces Lambertian shading with the probe material formulas applied to
    interpolated world-space normals; the result layer composites normally.
    """
    from . import render

    world_to_cam = cam.inverse().matrix
    cam_tris, world_normals = render._transform_mesh(mesh, pose, scale, world_to_cam)
    zbuffer, attrs, mask = render.rasterize_triangles(cam_tris, world_normals, k)
    if not mask.any():
        return render.shaded_layer(zbuffer, mask, np.zeros((0, 3)), (k.width, k.height))

    n = attrs[mask]
    length = np.linalg.norm(n, axis=-1, keepdims=True)
    n = n / np.where(length == 0, 1.0, length)

    ys, xs = np.nonzero(mask)
    depth = zbuffer[mask]
    x_cam = (xs + 0.5 - k.cx) * depth / k.fx
    y_cam = -(ys + 0.5 - k.cy) * depth / k.fy
    p_cam = np.stack([x_cam, y_cam, -depth], axis=-1)
    p_world = p_cam @ cam.matrix[:3, :3].T + cam.matrix[:3, 3]
    views = cam.matrix[:3, 3] - p_world
    views = views / np.linalg.norm(views, axis=-1, keepdims=True)

    shaded = shade_directions(env, material, n, views)
    return render.shaded_layer(zbuffer, mask, shaded, (k.width, k.height))
