import numpy as np
import pytest

from arbench import render
from arbench.core import (
    CameraIntrinsics,
    DepthMap,
    Pose,
    RgbImage,
    VirtualObject,
    translation_pose,
)

from conftest import make_manifest, ramp_depth_mm
from oracles import brute_composite


@pytest.fixture
def k():
    return CameraIntrinsics(fx=100.0, fy=100.0, cx=32.0, cy=24.0, width=64, height=48)


def object_pose(z=-2.0):
    return translation_pose(0.0, 0.0, z)


class TestObjLoader:
    def test_single_triangle(self, tmp_path):
        path = tmp_path / "tri.obj"
        path.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n")
        mesh = render.load_obj(path)
        assert len(mesh.vertices) == 3
        assert mesh.face_count == 1

    def test_quad_becomes_two_triangles(self, tmp_path):
        path = tmp_path / "quad.obj"
        path.write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n")
        assert render.load_obj(path).face_count == 2

    def test_out_of_range_index(self, tmp_path):
        path = tmp_path / "bad.obj"
        path.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 4\n")
        with pytest.raises(render.ParseError) as err:
            render.load_obj(path)
        assert "line 4" in str(err.value)

    def test_negative_indices(self, tmp_path):
        path = tmp_path / "neg.obj"
        path.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf -3 -2 -1\n")
        mesh = render.load_obj(path)
        assert np.array_equal(mesh.faces[0], [0, 1, 2])

    def test_vertex_normals_used(self, tmp_path):
        path = tmp_path / "n.obj"
        path.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nvn 0 0 1\nf 1//1 2//1 3//1\n")
        mesh = render.load_obj(path)
        assert np.allclose(mesh.corner_normals, [[0, 0, 1]] * 3)

    def test_empty_mesh(self, tmp_path):
        path = tmp_path / "empty.obj"
        path.write_text("v 0 0 0\n# nothing else\n")
        with pytest.raises(render.EmptyMesh):
            render.load_obj(path)

    def test_unknown_records_ignored(self, tmp_path):
        path = tmp_path / "extra.obj"
        path.write_text("mtllib x.mtl\nv 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nf 1 2 3\n")
        assert render.load_obj(path).face_count == 1


class TestProjection:
    def test_principal_point(self, k):
        u, v, depth = render.project_points(np.array([[0.0, 0.0, -2.0]]), k)
        assert (u[0], v[0], depth[0]) == (32.0, 24.0, 2.0)

    def test_axis_directions(self, k):
        # +X goes right on screen, +Y goes up (v decreases).
        u, v, _ = render.project_points(np.array([[0.5, 0.5, -1.0]]), k)
        assert u[0] > k.cx and v[0] < k.cy

    def test_zbuffer_value_at_center(self, k):
        tri = np.array([[[-0.5, -0.5, -2.0], [0.5, -0.5, -2.0], [0.0, 0.5, -2.0]]])
        attrs = np.zeros((1, 3, 1))
        zb, _, mask = render.rasterize_triangles(tri, attrs, k)
        assert mask[24, 32]
        assert zb[24, 32] == pytest.approx(2.0, rel=1e-12)

    def test_behind_camera_clipped(self, k):
        tri = np.array([[[0.0, 0.0, 2.0], [1.0, 0.0, 2.0], [0.0, 1.0, 2.0]]])
        _, _, mask = render.rasterize_triangles(tri, np.zeros((1, 3, 1)), k)
        assert not mask.any()

    def test_partial_near_clip_keeps_front_part(self, k):
        # Crosses the camera plane; the part in front must still rasterize.
        tri = np.array([[[-0.5, -0.5, -2.0], [0.5, -0.5, -2.0], [0.0, 0.5, 0.5]]])
        _, _, mask = render.rasterize_triangles(tri, np.zeros((1, 3, 1)), k)
        assert mask.any()


class TestRasterizer:
    def test_square_footprint(self, k):
        # 0.4 m square at 2 m with fx=100 spans 20 px; allow one row/col slack.
        half = 0.2
        quad = [
            [[-half, -half, -2.0], [half, -half, -2.0], [half, half, -2.0]],
            [[-half, -half, -2.0], [half, half, -2.0], [-half, half, -2.0]],
        ]
        _, _, mask = render.rasterize_triangles(np.array(quad), np.zeros((2, 3, 1)), k)
        count = int(mask.sum())
        assert 19 * 19 <= count <= 21 * 21

    def test_shared_edge_drawn_once(self, k):
        # Top-left rule: two triangles sharing a diagonal tile the square
        # with no gaps and no double coverage.
        half = 0.2
        t1 = np.array([[[-half, -half, -2.0], [half, -half, -2.0], [half, half, -2.0]]])
        t2 = np.array([[[-half, -half, -2.0], [half, half, -2.0], [-half, half, -2.0]]])
        _, _, m1 = render.rasterize_triangles(t1, np.zeros((1, 3, 1)), k)
        _, _, m2 = render.rasterize_triangles(t2, np.zeros((1, 3, 1)), k)
        _, _, both = render.rasterize_triangles(np.concatenate([t1, t2]), np.zeros((2, 3, 1)), k)
        assert not (m1 & m2).any()
        assert ((m1 | m2) == both).all()

    def test_back_face_culled(self, k):
        front = np.array([[[0.0, 0.0, -2.0], [0.5, 0.0, -2.0], [0.0, 0.5, -2.0]]])
        back = front[:, ::-1, :]
        _, _, mf = render.rasterize_triangles(front, np.zeros((1, 3, 1)), k)
        _, _, mb = render.rasterize_triangles(back, np.zeros((1, 3, 1)), k)
        assert mf.any()
        assert not mb.any()

    def test_depth_test_nearest_wins(self, k):
        tri = [[[-0.5, -0.5, -3.0], [0.5, -0.5, -3.0], [0.0, 0.5, -3.0]]]
        near = [[[-0.5, -0.5, -1.0], [0.5, -0.5, -1.0], [0.0, 0.5, -1.0]]]
        attrs = np.zeros((2, 3, 1))
        attrs[1] = 1.0
        zb, at, mask = render.rasterize_triangles(np.array(tri + near), attrs, k)
        assert zb[24, 32] == pytest.approx(1.0, rel=1e-12)
        assert at[24, 32, 0] == pytest.approx(1.0)


class TestRenderObjects:
    def test_lambertian_headlight(self, k):
        cube = render.unit_cube()
        layer = render.render_objects(
            [(cube, object_pose(-2.0), 1.0, (1.0, 0.5, 0.25))], Pose.identity(), k,
            light_dir=(0.0, 0.0, 1.0),
        )
        covered = layer.alpha > 0
        assert covered.any()
        # facing the light head-on: full base color
        center = layer.color.values[24, 32]
        assert tuple(center[:3]) == (255, 128, 64)
        assert np.all(layer.zbuffer[covered] > 0)

    def test_ambient_floor(self, k):
        cube = render.unit_cube()
        layer = render.render_objects(
            [(cube, object_pose(-2.0), 1.0, (0.8, 0.8, 0.8))], Pose.identity(), k,
            light_dir=(0.0, 0.0, -1.0),  # light behind the cube
        )
        covered = layer.alpha > 0
        assert np.all(layer.color.values[covered][:, 0] == round(255 * 0.8 * render.AMBIENT_FLOOR))

    def test_empty_scene(self, k):
        layer = render.render_objects([], Pose.identity(), k)
        assert not (layer.alpha > 0).any()
        assert np.all(np.isinf(layer.zbuffer))


class TestOcclusionPlane:
    def test_ramp_boundary(self):
        manifest = make_manifest(width=64, height=48)
        depth = DepthMap(ramp_depth_mm(64, 48))
        layer = render.render_occlusion_plane((64, 48), 1.0)
        camera = RgbImage(np.full((48, 64, 3), 200, dtype=np.uint8))
        out = render.composite(camera, layer, depth, manifest)
        black = np.all(out.values == 0, axis=2)
        # rows strictly deeper than 1.0 m show the plane
        expected = depth.to_meters() > 1.0
        assert np.array_equal(black, expected)

    def test_plane_in_front_of_everything(self):
        manifest = make_manifest()
        depth = DepthMap(np.full((48, 64), 500, dtype=np.uint16))
        layer = render.render_occlusion_plane((64, 48), 0.01)
        camera = RgbImage(np.full((48, 64, 3), 200, dtype=np.uint8))
        out = render.composite(camera, layer, depth, manifest)
        assert np.all(out.values == 0)

    def test_plane_behind_everything(self):
        manifest = make_manifest()
        depth = DepthMap(np.full((48, 64), 5000, dtype=np.uint16))
        layer = render.render_occlusion_plane((64, 48), 100.0)
        camera = RgbImage(np.full((48, 64, 3), 200, dtype=np.uint8))
        out = render.composite(camera, layer, depth, manifest)
        assert out == camera

    def test_nonpositive_depth(self):
        with pytest.raises(render.NonpositiveDepth):
            render.render_occlusion_plane((64, 48), 0.0)


class TestComposite:
    def test_invalid_depth_never_occludes(self):
        manifest = make_manifest()
        depth = DepthMap(np.zeros((48, 64), dtype=np.uint16))
        layer = render.render_occlusion_plane((64, 48), 1.0, plane_color=(10, 20, 30))
        camera = RgbImage(np.full((48, 64, 3), 200, dtype=np.uint8))
        out = render.composite(camera, layer, depth, manifest)
        assert np.all(out.values == (10, 20, 30))

    def test_resolution_mismatch(self):
        manifest = make_manifest()
        camera = RgbImage(np.zeros((10, 10, 3), dtype=np.uint8))
        layer = render.render_occlusion_plane((64, 48), 1.0)
        depth = DepthMap(np.ones((48, 64), dtype=np.uint16))
        with pytest.raises(render.ResolutionMismatch):
            render.composite(camera, layer, depth, manifest)

    def test_lower_resolution_depth_resized(self):
        manifest = make_manifest(width=64, height=48)
        depth = DepthMap(ramp_depth_mm(16, 12))  # quarter-res sensor depth
        layer = render.render_occlusion_plane((64, 48), 1.0)
        camera = RgbImage(np.full((48, 64, 3), 100, dtype=np.uint8))
        out = render.composite(camera, layer, depth, manifest)
        # boundary follows the nearest-neighbor upsampled depth
        from arbench.core import resize_nearest

        scene = resize_nearest(depth.to_meters(), (64, 48))
        assert np.array_equal(np.all(out.values == 0, axis=2), scene > 1.0)

    def test_matches_brute_force_on_random_inputs(self):
        rng = np.random.default_rng(11)
        manifest = make_manifest(width=16, height=12)
        for _ in range(20):
            camera = RgbImage(rng.integers(0, 256, (12, 16, 3), dtype=np.uint16).astype(np.uint8))
            depth_mm = rng.integers(0, 3000, (12, 16), dtype=np.uint32).astype(np.uint16)
            zbuf = rng.uniform(0.1, 3.0, (12, 16))
            rgba = rng.integers(0, 256, (12, 16, 4), dtype=np.uint16).astype(np.uint8)
            rgba[..., 3] = rng.integers(0, 2, (12, 16)).astype(np.uint8) * 255
            layer = render.RenderLayer(color=RgbImage(rgba), zbuffer=zbuf)
            out = render.composite(camera, layer, DepthMap(depth_mm), manifest)
            expected = brute_composite(camera.values, rgba, zbuf, depth_mm)
            for r in range(12):
                for c in range(16):
                    assert tuple(out.values[r, c]) == expected[r][c]


class TestSceneRenderer:
    def make_session(self, tmp_path):
        obj_path = tmp_path / "tri.obj"
        obj_path.write_text("v -0.5 -0.5 0\nv 0.5 -0.5 0\nv 0 0.5 0\nf 1 2 3\n")
        objects = (
            VirtualObject(
                object_id="tri",
                mesh_ref="tri.obj",
                pose=object_pose(-2.0),
                scale=1.0,
                base_color=(1.0, 0.0, 0.0),
            ),
        )
        manifest = make_manifest(width=64, height=48, objects=objects)
        return render.SceneRenderer(manifest, base_dir=tmp_path)

    def test_scene_built_once(self, tmp_path):
        renderer = self.make_session(tmp_path)
        for _ in range(5):
            renderer.object_layer(Pose.identity())
        assert renderer.scene_builds == 1

    def test_pose_override_changes_output_without_rebuild(self, tmp_path):
        renderer = self.make_session(tmp_path)
        before = renderer.object_layer(Pose.identity())
        renderer.set_object_pose("tri", object_pose(-1.0), 1.0)
        after = renderer.object_layer(Pose.identity())
        assert renderer.scene_builds == 1
        assert (after.alpha > 0).sum() > (before.alpha > 0).sum()

    def test_missing_mesh_fails_at_load(self, tmp_path):
        objects = (
            VirtualObject(
                object_id="ghost", mesh_ref="missing.obj", pose=Pose.identity(), scale=1.0
            ),
        )
        manifest = make_manifest(objects=objects)
        with pytest.raises(render.RenderError):
            render.SceneRenderer(manifest, base_dir=tmp_path)

    def test_plane_objects_are_not_mesh_nodes(self, tmp_path):
        objects = (
            VirtualObject(object_id="occ", mesh_ref="plane", pose=Pose.identity(), scale=1.0),
        )
        manifest = make_manifest(objects=objects)
        renderer = render.SceneRenderer(manifest, base_dir=tmp_path)
        assert renderer.mesh_set() == []


def test_projection_unprojection_consistency(k):
    # A rasterized pixel's z-buffer, unprojected, lands on the source plane.
    from arbench import pointcloud

    tri = np.array([[[-0.5, -0.5, -2.0], [0.5, -0.5, -2.0], [0.0, 0.5, -2.0]]])
    zb, _, mask = render.rasterize_triangles(tri, np.zeros((1, 3, 1)), k)
    ys, xs = np.nonzero(mask)
    depth = DepthMap.from_meters(np.where(mask, zb, 0.0))
    rgb = RgbImage(np.zeros((48, 64, 3), dtype=np.uint8))
    cloud = pointcloud.unproject(depth, rgb, k, Pose.identity(), stride=1)
    # all points on the z = -2 plane within quantization + half-pixel error
    assert np.abs(cloud.points[:, 2] + 2.0).max() < 0.01
