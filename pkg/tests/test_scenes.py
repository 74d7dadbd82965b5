import json

import numpy as np
import pytest

from poet.errors import InputError, PackingError, ParseError
from poet.geometry import CameraIntrinsics, Pose, look_at, project, random_rotation
from poet.scenes import (
    TRAJECTORIES,
    NoiseModel,
    Symmetry,
    build_model,
    default_intrinsics,
    default_library,
    generate_scene,
    gt_detections,
    load_dataset,
    load_sequence,
    make_dataset,
    make_sequence,
    perturb_detections,
    render_frame,
    save_dataset,
    save_sequence,
    toy_benchmark,
    trajectory,
    verify_sequence,
)
from poet.scenes.primitives import bracket, box, cube, cylinder
from poet.scenes.scene import Landmark, WorldLayout, bbox_from_points


def test_generate_scene_single_and_bounds():
    layout = generate_scene(1, 1)
    assert len(layout.landmarks) == 1
    t = layout.landmarks[0].pose.translation
    assert -0.25 <= t[0] <= 0.25 and -0.25 <= t[1] <= 0.25 and 0 <= t[2] <= 0.08


def test_generate_scene_determinism_and_spacing():
    a, b = generate_scene(9, 5), generate_scene(9, 5)
    for x, y in zip(a.landmarks, b.landmarks):
        assert x.class_id == y.class_id
        assert np.array_equal(x.pose.matrix(), y.pose.matrix())
    lms = a.landmarks
    for i in range(len(lms)):
        for j in range(i + 1, len(lms)):
            gap = np.linalg.norm(lms[i].pose.translation - lms[j].pose.translation)
            assert gap > a.models[lms[i].class_id].radius + a.models[lms[j].class_id].radius


def test_generate_scene_errors():
    with pytest.raises(InputError):
        generate_scene(0, 0)
    with pytest.raises(PackingError):
        generate_scene(0, 50, bounds=((0, 0.1), (0, 0.1), (0, 0.01)), max_tries=200)


def test_orientation_uniformity():
    R = random_rotation(np.random.default_rng(4), 1000)
    assert np.max(np.abs(R.mean(0))) < 0.05


def test_render_on_axis_object_centered():
    intr = default_intrinsics()
    lib = default_library(4)
    layout = WorldLayout([Landmark(0, 3, Pose(np.eye(3), [0.0, 0.0, 0.0]))], lib)  # cube, symmetric box
    cam = Pose(np.eye(3), [0.0, 0.0, -2.0])
    f = render_frame(layout, cam, intr)
    cx, cy, _, _ = f.objects[0].bbox
    assert cx * intr.width == pytest.approx(intr.cx, abs=1e-9)
    assert cy * intr.height == pytest.approx(intr.cy, abs=1e-9)


def test_render_camera_frame_pose_exact(rng):
    layout = generate_scene(2, 3)
    intr = default_intrinsics()
    for _ in range(20):
        cam = look_at(rng.uniform([-1, -1, 0.5], [1, 1, 1.0]), [0, 0, 0])
        f = render_frame(layout, cam, intr)
        for o in f.objects:
            expect = np.linalg.inv(cam.matrix()) @ o.pose_world.matrix()
            assert np.max(np.abs(expect - o.pose_cam.matrix())) < 1e-12


def test_bbox_equals_brute_force_projection():
    seq = make_sequence("b", 4, 6, 4, "walk-1")
    intr = seq.intrinsics
    for f in seq.frames:
        for o in f.objects:
            pts = o.pose_cam.apply(seq.models[o.class_id].points)
            us, vs = [], []
            for p in pts:
                u, v = project(intr, p)
                us.append(u)
                vs.append(v)
            x0, x1 = max(min(us), 0), min(max(us), intr.width)
            y0, y1 = max(min(vs), 0), min(max(vs), intr.height)
            ref = ((x0 + x1) / 2 / intr.width, (y0 + y1) / 2 / intr.height, (x1 - x0) / intr.width, (y1 - y0) / intr.height)
            assert np.allclose(o.bbox, ref, atol=1e-12)


def test_behind_camera_is_empty_frame():
    layout = generate_scene(2, 2)
    cam = look_at([0, 0, 1.0], [0, 0, 3.0], up=(0, 1, 0))  # looking away
    f = render_frame(layout, cam, default_intrinsics())
    assert f.empty


def test_generated_sequences_pass_invariants():
    for name in TRAJECTORIES:
        seq = make_sequence(name, 3, 5, 4, name)
        assert verify_sequence(seq) == []


def test_verify_catches_corruption():
    seq = make_sequence("v", 1, 3, 3, "orbit-0")
    o = seq.frames[0].objects[0]
    cx, cy, w, h = o.bbox
    o.bbox = (cx, cy, w * 0.5, h)
    assert verify_sequence(seq)


def test_trajectory_catalogue():
    assert len(TRAJECTORIES) == 12
    with pytest.raises(InputError):
        trajectory("spiral-0", 5)
    poses = trajectory("dolly-2", 7)
    d = [np.linalg.norm(p.translation) for p in poses]
    assert all(b < a for a, b in zip(d, d[1:]))


def test_primitives_and_symmetries():
    assert cube(0).symmetry_group().__len__() == 24
    assert len(box(0).symmetry_group()) == 4
    assert len(bracket(0).symmetry_group()) == 1
    cyl = cylinder(0)
    assert any(s.continuous for s in cyl.symmetries)
    with pytest.raises(InputError):
        Symmetry((0.0, 0.0, 2.0), None)
    with pytest.raises(InputError):
        Symmetry((0.0, 0.0, 1.0), 1)
    assert build_model(cyl.spec()).spec() == cyl.spec()


def test_object_model_rejects_coplanar():
    from poet.scenes import ObjectModel

    with pytest.raises(InputError):
        ObjectModel(0, "flat", "flat", {}, np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0.0]]), np.zeros((4, 3)))


def test_zero_noise_detections_equal_gt(rng):
    f = make_sequence("d", 2, 2, 4).frames[0]
    assert perturb_detections(f, NoiseModel(), rng) == gt_detections(f)
    assert perturb_detections(f, NoiseModel(p_miss=1.0), rng) == []


def test_miss_rate_statistics():
    f = make_sequence("d", 2, 1, 4).frames[0]
    rng = np.random.default_rng(8)
    n = len(f.objects)
    draws = 10000 // n
    kept = sum(len(perturb_detections(f, NoiseModel(p_miss=0.1), rng)) for _ in range(draws))
    assert abs(1 - kept / (draws * n) - 0.1) < 0.01


def test_mislabel_and_clamping(rng):
    f = make_sequence("d", 2, 1, 4).frames[0]
    dets = perturb_detections(f, NoiseModel(sigma_center=0.3, sigma_size=0.5, p_cls=1.0, n_classes=4), rng)
    for d, o in zip(dets, f.objects):
        assert d.class_id != o.class_id
        cx, cy, w, h = d.bbox
        assert cx - w / 2 >= -1e-12 and cx + w / 2 <= 1 + 1e-12
    with pytest.raises(InputError):
        NoiseModel(p_cls=0.5)


def test_save_load_round_trip(tmp_path):
    seq = make_sequence("rt", 6, 4, 3, "walk-0", rasterize=True)
    save_sequence(seq, tmp_path / "rt")
    back = load_sequence(tmp_path / "rt")
    assert back.name == seq.name and back.trajectory == seq.trajectory
    for a, b in zip(seq.frames, back.frames):
        assert a.frame_id == b.frame_id
        assert np.array_equal(a.camera_pose.matrix(), b.camera_pose.matrix())
        assert np.array_equal(a.image, b.image)
        for oa, ob in zip(a.objects, b.objects):
            assert oa.bbox == ob.bbox
            assert np.array_equal(oa.pose_cam.matrix(), ob.pose_cam.matrix())
    for lm_a, lm_b in zip(seq.layout.landmarks, back.layout.landmarks):
        assert np.array_equal(lm_a.pose.matrix(), lm_b.pose.matrix())


def test_resave_is_byte_identical(tmp_path):
    seq = make_sequence("big", 8, 100, 3, "orbit-1")
    files = save_sequence(seq, tmp_path / "a")
    save_sequence(load_sequence(tmp_path / "a"), tmp_path / "b")
    for p in files:
        rel = p.relative_to(tmp_path / "a")
        assert p.read_bytes() == (tmp_path / "b" / rel).read_bytes()


def test_out_of_range_bbox_names_frame(tmp_path):
    seq = make_sequence("bad", 6, 3, 2, "orbit-0")
    save_sequence(seq, tmp_path / "bad")
    path = tmp_path / "bad" / "frames" / "000001.json"
    d = json.loads(path.read_text())
    d["objects"][0]["bbox"][0] = 1.7
    path.write_text(json.dumps(d))
    with pytest.raises(ParseError, match=r"frame 1.*bbox"):
        load_sequence(tmp_path / "bad")


def test_malformed_json_reports_line(tmp_path):
    seq = make_sequence("bad", 6, 2, 2, "orbit-0")
    save_sequence(seq, tmp_path / "s")
    (tmp_path / "s" / "frames" / "000000.json").write_text('{"frame_id": 0,\n "R_wc": [\n')
    with pytest.raises(ParseError, match="line"):
        load_sequence(tmp_path / "s")


def test_dataset_round_trip(tmp_path):
    seqs = make_dataset(3, 2, 3, 2)
    save_dataset(seqs, tmp_path)
    back = load_dataset(tmp_path)
    assert [s.name for s in back] == [s.name for s in seqs]
    with pytest.raises(ParseError):
        load_dataset(tmp_path / "nothing")


def test_toy_benchmark_shape():
    data = toy_benchmark()
    frames = [f for s in data for f in s.frames]
    assert len(frames) == 64 and all(not f.empty for f in frames)
    assert {o.class_id for f in frames for o in f.objects} == {0, 1, 2, 3}


def test_intrinsics_defaults():
    intr = default_intrinsics()
    assert isinstance(intr, CameraIntrinsics) and intr.width == 96
    assert bbox_from_points(intr, np.array([[0, 0, 1.0], [0.001, 0.001, 1.0], [0, 0.001, 1.0]])) is None
