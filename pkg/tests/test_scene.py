import json
import math

import numpy as np
import pytest
from shapely.geometry import Polygon

from skyfleet.camera import CameraModel, pixel_rays
from skyfleet.exceptions import GenerationError
from skyfleet.grid import GridSpec, Pose2D
from skyfleet.scene import (T_FUTURE, T_PAST, FeatureEmbedding, InstanceTrack, Scene,
                            SceneParams, footprint_corners, generate_scene, instance_center,
                            rasterize_gt_bev, rectangles_overlap, render_view,
                            visible_instances)
from skyfleet.sisw import compress

from conftest import nadir_camera


def box(iid, x, y, yaw=0.0, length=4.0, width=2.0, height=1.5, speed=0.0, yaw_rate=0.0,
        frames=T_PAST + T_FUTURE):
    poses = [(x, y, yaw)]
    for _ in range(frames - 1):
        px, py, pyaw = poses[-1]
        poses.append((px + speed * math.cos(pyaw), py + speed * math.sin(pyaw), pyaw + yaw_rate))
    return InstanceTrack(iid, length, width, height, tuple(poses), speed, yaw_rate)


def exhaustive_hits(origin, direction, tracks, frame):
    """Nearest hit per ray by intersecting every face plane of every box."""
    best, best_id = math.inf, 0
    for t in tracks:
        x, y, yaw = t.pose(frame)
        c, s = math.cos(yaw), math.sin(yaw)
        o = np.array([c * (origin[0] - x) + s * (origin[1] - y),
                      -s * (origin[0] - x) + c * (origin[1] - y), origin[2]])
        d = np.array([c * direction[0] + s * direction[1],
                      -s * direction[0] + c * direction[1], direction[2]])
        half = np.array([t.length / 2, t.width / 2])
        faces = [(0, -half[0]), (0, half[0]), (1, -half[1]), (1, half[1]), (2, 0.0),
                 (2, t.height)]
        for axis, value in faces:
            if d[axis] == 0:
                continue
            dist = (value - o[axis]) / d[axis]
            if dist <= 0:
                continue
            p = o + dist * d
            ok = (abs(p[0]) <= half[0] + 1e-9 and abs(p[1]) <= half[1] + 1e-9
                  and -1e-9 <= p[2] <= t.height + 1e-9)
            if ok and dist < best:
                best, best_id = dist, t.id
    return best, best_id


class TestGenerateScene:
    def test_deterministic(self):
        a = json.dumps(generate_scene(7).to_dict(), sort_keys=True)
        b = json.dumps(generate_scene(7).to_dict(), sort_keys=True)
        assert a == b
        assert a != json.dumps(generate_scene(8).to_dict(), sort_keys=True)

    def test_empty_scene_has_rig(self):
        scene = generate_scene(0, SceneParams(n_instances=0))
        assert scene.tracks == []
        assert len(scene.drones) == 4
        assert all(d.camera.altitude == 50.0 for d in scene.drones)

    def test_frame_zero_footprints_disjoint(self):
        for seed in range(100):
            tracks = generate_scene(seed).tracks
            polys = [Polygon(t.corners(0)) for t in tracks]
            for i in range(len(polys)):
                for j in range(i + 1, len(polys)):
                    assert polys[i].intersection(polys[j]).area < 1e-9, (seed, i, j)

    def test_unsatisfiable_density_names_seed(self):
        with pytest.raises(GenerationError, match="seed 13"):
            generate_scene(13, SceneParams(n_instances=50, area=10.0, max_retries=20))

    def test_tracks_cover_every_frame_and_heights_fit_bins(self):
        scene = generate_scene(3)
        assert len({t.id for t in scene.tracks}) == len(scene.tracks)
        for t in scene.tracks:
            assert len(t.poses) == T_PAST + T_FUTURE
            assert 0 < t.height <= 10.0

    def test_round_trip_dict(self):
        scene = generate_scene(5)
        back = Scene.from_dict(json.loads(json.dumps(scene.to_dict())))
        assert json.dumps(back.to_dict(), sort_keys=True) == json.dumps(scene.to_dict(),
                                                                         sort_keys=True)

    def test_drones_face_area_centre(self):
        for drone in generate_scene(0).drones:
            cam = drone.camera
            axis = pixel_rays(cam, (cam.width - 1) / 2, (cam.height - 1) / 2)
            t = -cam.altitude / axis[2]
            hit = cam.origin + t * axis
            assert np.hypot(hit[0], hit[1]) < 1e-6

    def test_constant_motion(self):
        scene = generate_scene(2)
        for t in scene.tracks:
            steps = [np.hypot(t.poses[k + 1][0] - t.poses[k][0], t.poses[k + 1][1] - t.poses[k][1])
                     for k in range(len(t.poses) - 1)]
            np.testing.assert_allclose(steps, t.speed, atol=1e-9)

    def test_overlap_test_agrees_with_polygon_oracle(self, rng):
        for _ in range(500):
            a = footprint_corners((*rng.uniform(-5, 5, 2), rng.uniform(-3, 3)), *rng.uniform(1, 6, 2))
            b = footprint_corners((*rng.uniform(-5, 5, 2), rng.uniform(-3, 3)), *rng.uniform(1, 6, 2))
            area = Polygon(a).intersection(Polygon(b)).area
            if area > 1e-6:
                assert rectangles_overlap(a, b)
            elif not Polygon(a).intersects(Polygon(b)):
                assert not rectangles_overlap(a, b)


class TestRenderView:
    def test_empty_ground(self):
        cam = nadir_camera(size=(41, 31))
        view = render_view(cam, [], 0)
        assert not view.instance_map.any()
        assert not view.true_height.any()
        assert view.validity.all()

    def test_box_under_nadir_camera(self):
        cam = nadir_camera(50.0, size=(41, 31))
        view = render_view(cam, [box(1, 0, 0, length=20, width=20, height=2.0)], 0)
        assert view.instance_map[15, 20] == 1
        assert view.true_height[15, 20] == 2.0
        # the top face is 48 m below the camera
        assert view.depth[15, 20] == pytest.approx(48.0, abs=1e-9)

    def test_occlusion_matches_exhaustive_oracle(self, rng):
        cam = CameraModel.from_pose((-30.0, 0.0, 20.0), 0.0, 0.5, (64, 48), 1.2)
        for _ in range(5):
            tracks = [box(i + 1, *rng.uniform(-8, 8, 2), rng.uniform(-3, 3),
                          rng.uniform(3, 7), rng.uniform(1.5, 3), rng.uniform(1, 4))
                      for i in range(4)]
            view = render_view(cam, tracks, 0)
            v, u = np.mgrid[0:cam.height, 0:cam.width]
            dirs = pixel_rays(cam, u, v)
            for r in range(0, cam.height, 3):
                for c in range(0, cam.width, 3):
                    dist, iid = exhaustive_hits(cam.origin, dirs[r, c], tracks, 0)
                    ground = -cam.altitude / dirs[r, c, 2] if dirs[r, c, 2] < 0 else math.inf
                    expected = iid if dist < ground else 0
                    assert view.instance_map[r, c] == expected, (r, c)
                    if expected:
                        assert view.depth[r, c] == pytest.approx(dist, rel=1e-9)

    def test_height_consistency_and_determinism(self):
        scene = generate_scene(4)
        cam = scene.drones[0].camera
        a = render_view(cam, scene.tracks, 1)
        b = render_view(cam, scene.tracks, 1)
        np.testing.assert_array_equal(a.instance_map, b.instance_map)
        np.testing.assert_array_equal(a.feature, b.feature)
        heights = {t.id: t.height for t in scene.tracks}
        ids = a.instance_map[a.instance_map > 0]
        np.testing.assert_array_equal(a.true_height[a.instance_map > 0],
                                      [heights[i] for i in ids])
        assert not a.true_height[(a.instance_map == 0) & a.validity].any()
        assert a.true_height.max() <= max(heights.values())

    def test_sky_pixels_invalid(self):
        cam = CameraModel.from_pose((0, 0, 50.0), 0.0, 0.1, (64, 48), 1.5)
        view = render_view(cam, [], 0)
        assert not view.validity[0].any()
        assert view.validity[-1].all()
        assert not view.feature[0].any()

    def test_visible_instances(self):
        cam = nadir_camera(50.0, size=(41, 31))
        tracks = [box(1, 0, 0, length=20, width=20), box(2, 500, 500)]
        view = render_view(cam, tracks, 0)
        assert visible_instances([view]) == {1}
        assert visible_instances([view], min_pixels=10**6) == set()


class TestEmbedding:
    def test_ground_compresses_to_zero_and_vehicles_below(self):
        emb = FeatureEmbedding()
        assert emb.ground().mean() == 0.0
        for iid in range(1, 200):
            f = emb.vehicle(iid)
            assert f.mean() < 0
            assert np.linalg.norm(f) == pytest.approx(emb.norm)

    def test_encode_matches_per_pixel_embedding(self):
        emb = FeatureEmbedding()
        inst = np.array([[0, 3, 3], [7, 0, 0]])
        cls = (inst > 0).astype(int)
        valid = np.array([[True, True, True], [True, True, False]])
        key, table = emb.encode(cls, inst, valid)
        feats = table[key]
        np.testing.assert_array_equal(feats[0, 0], emb.ground())
        np.testing.assert_array_equal(feats[0, 1], emb.vehicle(3))
        np.testing.assert_array_equal(feats[1, 0], emb.vehicle(7))
        np.testing.assert_array_equal(feats[1, 2], np.zeros(16))

    def test_compress_of_ground_cells_is_zero(self):
        emb = FeatureEmbedding()
        grid = np.tile(emb.ground() * 13.0, (3, 3, 1))
        np.testing.assert_array_equal(compress(grid), 0.0)


class TestRasterize:
    def test_axis_aligned_rectangle_cell_count(self):
        gt = rasterize_gt_bev([box(1, 0.0, 0.0, length=4.0, width=2.0)], 0, GridSpec.long())
        assert gt.occupancy.sum() == 32
        assert set(np.unique(gt.instance_ids)) == {0, 1}

    def test_empty_scene(self):
        gt = rasterize_gt_bev([], 0, GridSpec.long())
        assert not gt.occupancy.any()

    def test_flow_of_moving_instance(self):
        gt = rasterize_gt_bev([box(1, 0.0, 0.0, speed=1.0)], 0, GridSpec.long())
        np.testing.assert_allclose(gt.flow[gt.occupancy], np.tile([1.0, 0.0], (32, 1)),
                                   atol=1e-12)
        assert not gt.flow[~gt.occupancy].any()

    def test_flow_in_rotated_grid_frame(self):
        pose = Pose2D(math.pi / 2)
        gt = rasterize_gt_bev([box(1, 0.0, 0.0, speed=1.0)], 0, GridSpec.long(), pose)
        np.testing.assert_allclose(gt.flow[gt.occupancy], np.tile([0.0, -1.0], (32, 1)),
                                   atol=1e-12)

    def test_overlap_goes_to_nearest_centre(self):
        a = box(1, 0.0, 0.0, length=6.0, width=2.0)
        b = box(2, 2.0, 0.0, length=6.0, width=2.0)
        gt = rasterize_gt_bev([b, a], 0, GridSpec.long())
        xs, ys = GridSpec.long().cell_centers()
        both = (np.abs(xs - 1.0) < 2.0) & (np.abs(ys) < 1.0)
        near_a = both & (np.hypot(xs, ys) < np.hypot(xs - 2.0, ys))
        assert (gt.instance_ids[near_a] == 1).all()
        assert (gt.instance_ids[both & ~near_a] == 2).all()

    def test_ids_match_tracks_inside_grid(self):
        tracks = [box(1, 10, 10), box(2, -30, 45), box(3, 80, 0), box(4, 0, -70)]
        gt = rasterize_gt_bev(tracks, 0, GridSpec.long())
        assert set(np.unique(gt.instance_ids)) - {0} == {1, 2}
        # invariants: ids exactly where occupied
        np.testing.assert_array_equal(gt.instance_ids > 0, gt.occupancy)

    def test_instance_centre_in_grid_frame(self):
        t = box(1, 3.0, 4.0)
        np.testing.assert_allclose(instance_center(t, 0, Pose2D(math.pi / 2)), [4.0, -3.0],
                                   atol=1e-12)
