"""Off-screen software rendering and depth-test compositing.

Projection follows the package convention (camera looks down -Z, X right,
Y up): a camera-space point (x, y, z) with z < 0 lands at

    u = fx * x / -z + cx        v = cy - fy * y / -z

with u right and v down; the z-buffer stores camera depth -z in meters.
Rasterization is z-buffered with the top-left fill rule, perspective-correct
attribute interpolation, and camera-space back-face culling. Shading for
plain object rendering is Lambertian with a fixed 0.1 ambient floor;
image-based materials are layered on top of the same rasterizer elsewhere.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import (
    ArbenchError,
    CameraIntrinsics,
    DepthMap,
    Pose,
    RgbImage,
    SessionManifest,
    resize_nearest,
)

log = logging.getLogger(__name__)

NEAR_PLANE = 1e-6
AMBIENT_FLOOR = 0.1
DEFAULT_LIGHT_DIR = (0.3713906763541037, 0.7427813527082074, 0.5570860145311556)

PLANE_MESH_REF = "plane"

# Ships primitive meshes (assets/cube.obj) so synthetic sessions resolve
# their objects on any server without provisioning.
BUILTIN_ASSET_ROOT = Path(__file__).resolve().parent


class RenderError(ArbenchError):
    code = "RenderError"


class ParseError(RenderError):
    code = "ParseError"


class EmptyMesh(RenderError):
    code = "EmptyMesh"


class NonpositiveDepth(RenderError):
    code = "NonpositiveDepth"


class ResolutionMismatch(RenderError):
    code = "ResolutionMismatch"


@dataclass(frozen=True)
class RenderLayer:
    """RGBA virtual-content layer plus per-pixel depth; +inf where empty."""

    color: RgbImage
    zbuffer: np.ndarray

    @property
    def alpha(self):
        return self.color.values[..., 3]


@dataclass(frozen=True)
class TriangleMesh:
    vertices: np.ndarray
    faces: np.ndarray
    corner_normals: np.ndarray

    @property
    def face_count(self):
        return self.faces.shape[0]


def _face_normals(vertices, faces):
    a = vertices[faces[:, 0]]
    edge1 = vertices[faces[:, 1]] - a
    edge2 = vertices[faces[:, 2]] - a
    n = np.cross(edge1, edge2)
    length = np.linalg.norm(n, axis=1, keepdims=True)
    return n / np.where(length == 0, 1.0, length)


def make_mesh(vertices, faces, vertex_normals=None) -> TriangleMesh:
    vertices = np.asarray(vertices, dtype=np.float64)
    faces = np.asarray(faces, dtype=np.intp)
    if faces.size == 0:
        raise EmptyMesh("mesh has no faces")
    if faces.min() < 0 or faces.max() >= len(vertices):
        raise ParseError("face references a vertex out of range")
    if vertex_normals is not None:
        corner = np.asarray(vertex_normals, dtype=np.float64)[faces]
    else:
        corner = np.repeat(_face_normals(vertices, faces)[:, None, :], 3, axis=1)
    return TriangleMesh(vertices=vertices, faces=faces, corner_normals=corner)


def load_obj(path) -> TriangleMesh:
    """Parse the v/vn/f subset of OBJ; polygons are fan-triangulated.

    Supports 1-based and negative indices and the v, v/vt, v//vn, v/vt/vn
    corner forms. Records outside the subset are skipped with a warning.
    """
    vertices = []
    normals = []
    tri_corners = []  # (vertex_idx, normal_idx_or_None) triples
    skipped = set()

    def resolve(idx, count, lineno, what):
        if idx == 0 or abs(idx) > count:
            raise ParseError(f"line {lineno}: {what} index {idx} out of range (have {count})")
        return idx - 1 if idx > 0 else count + idx

    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            tag, _, rest = line.partition(" ")
            fields = rest.split()
            if tag == "v":
                if len(fields) < 3:
                    raise ParseError(f"line {lineno}: vertex needs 3 coordinates")
                vertices.append([float(c) for c in fields[:3]])
            elif tag == "vn":
                if len(fields) < 3:
                    raise ParseError(f"line {lineno}: normal needs 3 components")
                normals.append([float(c) for c in fields[:3]])
            elif tag == "f":
                if len(fields) < 3:
                    raise ParseError(f"line {lineno}: face needs at least 3 corners")
                corners = []
                for token in fields:
                    parts = token.split("/")
                    try:
                        vi = resolve(int(parts[0]), len(vertices), lineno, "vertex")
                        ni = None
                        if len(parts) >= 3 and parts[2]:
                            ni = resolve(int(parts[2]), len(normals), lineno, "normal")
                    except ValueError:
                        raise ParseError(f"line {lineno}: bad face corner {token!r}") from None
                    corners.append((vi, ni))
                for i in range(1, len(corners) - 1):
                    tri_corners.append((corners[0], corners[i], corners[i + 1]))
            else:
                skipped.add(tag)

    if skipped:
        log.warning("ignored OBJ records: %s", ", ".join(sorted(skipped)))
    if not tri_corners:
        raise EmptyMesh(f"{path}: no faces")

    verts = np.asarray(vertices, dtype=np.float64)
    norms = np.asarray(normals, dtype=np.float64) if normals else None
    faces = np.array([[c[0][0], c[1][0], c[2][0]] for c in tri_corners], dtype=np.intp)
    face_n = _face_normals(verts, faces)
    corner_n = np.empty((len(tri_corners), 3, 3))
    for f, corners in enumerate(tri_corners):
        for k, (_, ni) in enumerate(corners):
            corner_n[f, k] = norms[ni] if ni is not None else face_n[f]
    return TriangleMesh(vertices=verts, faces=faces, corner_normals=corner_n)


def unit_cube(half=0.5) -> TriangleMesh:
    """Axis-aligned cube with outward-facing triangles."""
    s = half
    v = np.array(
        [
            [-s, -s, -s], [s, -s, -s], [s, s, -s], [-s, s, -s],
            [-s, -s, s], [s, -s, s], [s, s, s], [-s, s, s],
        ]
    )
    quads = [
        (4, 5, 6, 7),  # +z
        (1, 0, 3, 2),  # -z
        (5, 1, 2, 6),  # +x
        (0, 4, 7, 3),  # -x
        (7, 6, 2, 3),  # +y
        (0, 1, 5, 4),  # -y
    ]
    faces = []
    for a, b, c, d in quads:
        faces.append((a, b, c))
        faces.append((a, c, d))
    return make_mesh(v, faces)


def uv_sphere(rings=16, segments=16, radius=0.5) -> TriangleMesh:
    """Latitude-longitude sphere; rings*segments*2 - 2*segments triangles."""
    verts = []
    for r in range(rings + 1):
        theta = np.pi * r / rings
        for s in range(segments):
            phi = 2 * np.pi * s / segments
            verts.append(
                (
                    radius * np.sin(theta) * np.cos(phi),
                    radius * np.cos(theta),
                    radius * np.sin(theta) * np.sin(phi),
                )
            )
    faces = []
    for r in range(rings):
        for s in range(segments):
            a = r * segments + s
            b = r * segments + (s + 1) % segments
            c = (r + 1) * segments + s
            d = (r + 1) * segments + (s + 1) % segments
            if r > 0:
                faces.append((a, c, b))
            if r < rings - 1:
                faces.append((b, c, d))
    v = np.asarray(verts)
    normals = v / radius
    return make_mesh(v, faces, vertex_normals=normals)


def scale_intrinsics(k: CameraIntrinsics, resolution) -> CameraIntrinsics:
    w, h = resolution
    sx, sy = w / k.width, h / k.height
    return CameraIntrinsics(fx=k.fx * sx, fy=k.fy * sy, cx=k.cx * sx, cy=k.cy * sy, width=w, height=h)


def project_points(points_cam, k: CameraIntrinsics):
    """Camera-space points to (u, v, depth); callers mask depth <= 0."""
    p = np.atleast_2d(np.asarray(points_cam, dtype=np.float64))
    depth = -p[:, 2]
    safe = np.where(depth == 0, 1.0, depth)
    u = k.fx * p[:, 0] / safe + k.cx
    v = k.cy - k.fy * p[:, 1] / safe
    return u, v, depth


def _clip_near(tri_cam, tri_attr):
    """Sutherland-Hodgman clip of one triangle against z <= -NEAR_PLANE."""
    inside = tri_cam[:, 2] <= -NEAR_PLANE
    if inside.all():
        return [(tri_cam, tri_attr)]
    if not inside.any():
        return []
    out_pos, out_attr = [], []
    for i in range(3):
        j = (i + 1) % 3
        pi, pj = tri_cam[i], tri_cam[j]
        ai, aj = tri_attr[i], tri_attr[j]
        if inside[i]:
            out_pos.append(pi)
            out_attr.append(ai)
        if inside[i] != inside[j]:
            t = (-NEAR_PLANE - pi[2]) / (pj[2] - pi[2])
            out_pos.append(pi + t * (pj - pi))
            out_attr.append(ai + t * (aj - ai))
    tris = []
    for i in range(1, len(out_pos) - 1):
        tris.append(
            (
                np.stack([out_pos[0], out_pos[i], out_pos[i + 1]]),
                np.stack([out_attr[0], out_attr[i], out_attr[i + 1]]),
            )
        )
    return tris


def rasterize_triangles(cam_tris, corner_attrs, k: CameraIntrinsics):
    """Z-buffered rasterization of camera-space triangles.

    cam_tris: (F, 3, 3) camera-space corner positions.
    corner_attrs: (F, 3, A) attributes, perspective-correct interpolated.
    Returns (zbuffer, attrs, mask) at the intrinsics' resolution; zbuffer
    holds +inf where uncovered. Back faces (normal pointing away from the
    camera) are culled before clipping.
    """
    w, h = k.width, k.height
    zbuffer = np.full((h, w), np.inf)
    nattr = corner_attrs.shape[2] if len(corner_attrs) else 0
    attrs = np.zeros((h, w, nattr), dtype=np.float32)

    cam_tris = np.asarray(cam_tris, dtype=np.float64)
    corner_attrs = np.asarray(corner_attrs, dtype=np.float64)
    if len(cam_tris) == 0:
        return zbuffer, attrs, np.zeros((h, w), dtype=bool)

    # Back-face cull: geometric normal must point toward the camera (origin).
    normal = np.cross(cam_tris[:, 1] - cam_tris[:, 0], cam_tris[:, 2] - cam_tris[:, 0])
    centroid = cam_tris.mean(axis=1)
    front = np.einsum("ij,ij->i", normal, centroid) < 0.0
    cam_tris = cam_tris[front]
    corner_attrs = corner_attrs[front]

    # Near-plane clip; triangles fully in front pass through untouched.
    fully_inside = (cam_tris[:, :, 2] <= -NEAR_PLANE).all(axis=1)
    kept_tris = [cam_tris[fully_inside]]
    kept_attrs = [corner_attrs[fully_inside]]
    for tri, attr in zip(cam_tris[~fully_inside], corner_attrs[~fully_inside]):
        for clipped_tri, clipped_attr in _clip_near(tri, attr):
            kept_tris.append(clipped_tri[None])
            kept_attrs.append(clipped_attr[None])
    cam_tris = np.concatenate(kept_tris)
    corner_attrs = np.concatenate(kept_attrs)
    if len(cam_tris) == 0:
        return zbuffer, attrs, np.zeros((h, w), dtype=bool)

    # Shared per-triangle setup, vectorized: projection, orientation
    # normalization (positive edge functions inside), and 1/z terms.
    depth = -cam_tris[:, :, 2]
    u = k.fx * cam_tris[:, :, 0] / depth + k.cx
    v = k.cy - k.fy * cam_tris[:, :, 1] / depth
    area2 = (u[:, 1] - u[:, 0]) * (v[:, 2] - v[:, 0]) - (v[:, 1] - v[:, 0]) * (u[:, 2] - u[:, 0])
    flip = area2 < 0
    u[flip] = u[flip][:, [0, 2, 1]]
    v[flip] = v[flip][:, [0, 2, 1]]
    depth[flip] = depth[flip][:, [0, 2, 1]]
    corner_attrs[flip] = corner_attrs[flip][:, [0, 2, 1]]
    area2 = np.abs(area2)
    nondegenerate = area2 > 0

    inv_depth = 1.0 / depth
    attr_over_d = corner_attrs * inv_depth[:, :, None]
    x_lo = np.maximum(np.floor(u.min(axis=1) - 0.5).astype(np.intp), 0)
    x_hi = np.minimum(np.ceil(u.max(axis=1) + 0.5).astype(np.intp), w - 1)
    y_lo = np.maximum(np.floor(v.min(axis=1) - 0.5).astype(np.intp), 0)
    y_hi = np.minimum(np.ceil(v.max(axis=1) + 0.5).astype(np.intp), h - 1)
    on_screen = (x_hi >= x_lo) & (y_hi >= y_lo) & nondegenerate

    px_base = np.arange(w, dtype=np.float64) + 0.5
    py_base = np.arange(h, dtype=np.float64) + 0.5
    for f in np.nonzero(on_screen)[0]:
        _raster_bbox(
            u[f], v[f], inv_depth[f], attr_over_d[f], float(area2[f]),
            int(x_lo[f]), int(x_hi[f]), int(y_lo[f]), int(y_hi[f]),
            px_base, py_base, zbuffer, attrs,
        )

    return zbuffer, attrs, np.isfinite(zbuffer)


def _raster_bbox(u, v, inv_depth, attr_over_d, area2, x0, x1, y0, y1, px_base, py_base, zbuffer, attrs):
    px = px_base[x0 : x1 + 1]
    py = py_base[y0 : y1 + 1][:, None]

    # Edge i is opposite vertex i; ties follow the top-left rule.
    u0, u1, u2 = u
    v0, v1, v2 = v
    e0 = (u2 - u1) * (py - v1) - (v2 - v1) * (px - u1)
    e1 = (u0 - u2) * (py - v2) - (v0 - v2) * (px - u2)
    e2 = (u1 - u0) * (py - v0) - (v1 - v0) * (px - u0)
    cover = None
    for e, (ua, va, ub, vb) in (
        (e0, (u1, v1, u2, v2)),
        (e1, (u2, v2, u0, v0)),
        (e2, (u0, v0, u1, v1)),
    ):
        dy = vb - va
        accept_tie = (dy == 0 and ub - ua > 0) or dy < 0
        inside = e >= 0 if accept_tie else e > 0
        cover = inside if cover is None else (cover & inside)
    if not cover.any():
        return

    ys, xs = np.nonzero(cover)
    w0 = e0[cover] / area2
    w1 = e1[cover] / area2
    w2 = e2[cover] / area2
    pixel_depth = 1.0 / (w0 * inv_depth[0] + w1 * inv_depth[1] + w2 * inv_depth[2])
    ys = ys + y0
    xs = xs + x0

    closer = pixel_depth < zbuffer[ys, xs]
    if not closer.any():
        return
    ys, xs = ys[closer], xs[closer]
    pixel_depth = pixel_depth[closer]
    interp = (
        w0[closer, None] * attr_over_d[0]
        + w1[closer, None] * attr_over_d[1]
        + w2[closer, None] * attr_over_d[2]
    ) * pixel_depth[:, None]
    zbuffer[ys, xs] = pixel_depth
    attrs[ys, xs] = interp


def _world_to_cam(cam_pose: Pose):
    return cam_pose.inverse().matrix


def _transform_mesh(mesh: TriangleMesh, pose: Pose, scale, world_to_cam):
    model = pose.matrix.copy()
    rot = model[:3, :3]
    world_v = (mesh.vertices * scale) @ rot.T + model[:3, 3]
    cam_v = world_v @ world_to_cam[:3, :3].T + world_to_cam[:3, 3]
    world_n = mesh.corner_normals @ rot.T
    return cam_v[mesh.faces], world_n


def render_objects(mesh_set, cam: Pose, k: CameraIntrinsics, light_dir=DEFAULT_LIGHT_DIR) -> RenderLayer:
    """Rasterize (mesh, pose, scale, base_color) entries with Lambertian shading.

    Shading is base_color * max(0.1, n . light_dir) on the interpolated
    world-space normal; off-screen or fully-occluded content simply leaves
    the layer empty.
    """
    world_to_cam = _world_to_cam(cam)
    cam_tris, corner_attrs = [], []
    for mesh, pose, scale, base_color in mesh_set:
        tris, normals = _transform_mesh(mesh, pose, scale, world_to_cam)
        color = np.broadcast_to(np.asarray(base_color, dtype=np.float64), (len(tris), 3, 3))
        cam_tris.append(tris)
        corner_attrs.append(np.concatenate([normals, color], axis=2))
    if cam_tris:
        cam_tris = np.concatenate(cam_tris)
        corner_attrs = np.concatenate(corner_attrs)
    zbuffer, attrs, mask = rasterize_triangles(cam_tris, corner_attrs, k)

    color = np.zeros((k.height, k.width, 4), dtype=np.uint8)
    if mask.any():
        n = attrs[mask][:, :3]
        length = np.linalg.norm(n, axis=1, keepdims=True)
        n = n / np.where(length == 0, 1.0, length)
        light = np.asarray(light_dir, dtype=np.float64)
        light = light / np.linalg.norm(light)
        lambert = np.maximum(AMBIENT_FLOOR, n @ light)
        rgb = np.clip(attrs[mask][:, 3:6] * lambert[:, None], 0.0, 1.0)
        color[mask, :3] = np.rint(255.0 * rgb).astype(np.uint8)
        color[mask, 3] = 255
    return RenderLayer(color=RgbImage(color), zbuffer=zbuffer)


def shaded_layer(zbuffer, mask, rgb_linear, resolution) -> RenderLayer:
    """Pack externally shaded linear RGB (rows matching mask) into a layer."""
    w, h = resolution
    color = np.zeros((h, w, 4), dtype=np.uint8)
    if mask.any():
        color[mask, :3] = np.rint(255.0 * np.clip(rgb_linear, 0.0, 1.0)).astype(np.uint8)
        color[mask, 3] = 255
    return RenderLayer(color=RgbImage(color), zbuffer=zbuffer)


def render_occlusion_plane(resolution, plane_depth_m, plane_color=(0, 0, 0)) -> RenderLayer:
    """Full-viewport fronto-parallel plane at a fixed camera depth.

    The plane itself covers everything; compositing's depth test decides
    where it actually shows (scene farther than the plane, or invalid).
    """
    if plane_depth_m <= 0:
        raise NonpositiveDepth(f"plane depth {plane_depth_m}")
    w, h = resolution
    color = np.empty((h, w, 4), dtype=np.uint8)
    color[..., :3] = np.asarray(plane_color, dtype=np.uint8)
    color[..., 3] = 255
    zbuffer = np.full((h, w), float(plane_depth_m))
    return RenderLayer(color=RgbImage(color), zbuffer=zbuffer)


def composite(camera_rgb: RgbImage, layer: RenderLayer, depth_pred: DepthMap, manifest: SessionManifest) -> RgbImage:
    """Depth-test blend of a virtual layer over the camera image.

    The predicted depth is converted to meters and nearest-neighbor resized
    to the target resolution; invalid (0) depth counts as infinitely far,
    so sensor holes never occlude virtual content. Virtual pixels win where
    layer depth < scene depth, strictly.
    """
    tw, th = manifest.target_resolution
    if (camera_rgb.width, camera_rgb.height) != (tw, th):
        raise ResolutionMismatch(
            f"camera {camera_rgb.width}x{camera_rgb.height} vs target {tw}x{th}"
        )
    scene = resize_nearest(depth_pred.to_meters(), (tw, th)).copy()
    scene[resize_nearest(depth_pred.values, (tw, th)) == 0] = np.inf
    visible = (layer.alpha > 0) & (layer.zbuffer < scene)
    out = np.array(camera_rgb.values, copy=True)
    out[visible, :3] = layer.color.values[visible, :3]
    if out.shape[2] == 4:
        out[visible, 3] = 255
    return RgbImage(out)


class SceneRenderer:
    """Per-session renderer owning the static scene graph.

    The scene graph (meshes, intrinsics scaled to the target resolution) is
    built exactly once per session; per-frame calls only consume the camera
    pose and whatever interactive overrides are in effect. `scene_builds`
    counts graph constructions so tests can assert the once-only behavior.
    """

    def __init__(self, manifest: SessionManifest, base_dir=None, asset_dirs=()):
        self.manifest = manifest
        self.base_dir = Path(base_dir) if base_dir else None
        self.asset_dirs = [Path(d) for d in asset_dirs]
        self.k = scale_intrinsics(manifest.intrinsics, manifest.target_resolution)
        self.scene_builds = 0
        self._nodes = {}
        self._build_scene()

    def _resolve_mesh(self, mesh_ref):
        path = Path(mesh_ref)
        if path.is_absolute():
            candidates = [path]
        else:
            # Session-local assets win; server-wide asset dirs are the
            # fallback for live captures whose meshes were provisioned ahead.
            candidates = [d / path for d in [self.base_dir, *self.asset_dirs] if d is not None]
        for candidate in candidates:
            if candidate.exists():
                return load_obj(candidate)
        raise RenderError(f"mesh {mesh_ref!r} not resolvable at session load")

    def _build_scene(self):
        self.scene_builds += 1
        self._nodes.clear()
        for obj in self.manifest.objects:
            if obj.mesh_ref == PLANE_MESH_REF:
                continue  # occlusion plane is interactive state, not a mesh node
            self._nodes[obj.object_id] = {
                "mesh": self._resolve_mesh(obj.mesh_ref),
                "pose": obj.pose,
                "scale": obj.scale,
                "color": obj.base_color,
            }

    def set_object_pose(self, object_id, pose: Pose, scale):
        if object_id not in self._nodes:
            raise RenderError(f"unknown object {object_id!r}")
        self._nodes[object_id]["pose"] = pose
        self._nodes[object_id]["scale"] = float(scale)

    def mesh_set(self):
        return [(n["mesh"], n["pose"], n["scale"], n["color"]) for n in self._nodes.values()]

    def object_layer(self, cam_pose: Pose, light_dir=DEFAULT_LIGHT_DIR, mesh_set=None) -> RenderLayer:
        if mesh_set is None:
            mesh_set = self.mesh_set()
        return render_objects(mesh_set, cam_pose, self.k, light_dir)

    def plane_layer(self, plane_depth_m, plane_color=(0, 0, 0)) -> RenderLayer:
        return render_occlusion_plane(self.manifest.target_resolution, plane_depth_m, plane_color)
