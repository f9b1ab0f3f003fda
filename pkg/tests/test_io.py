import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from splatctl.core import GaussianSet, sigmoid
from splatctl.io import (
    ConfigError,
    EmptyDatasetError,
    ImageReadError,
    ManifestError,
    PlyHeaderError,
    PlyPropertyError,
    PlyTruncatedError,
    PoseError,
    RunConfig,
    export_ply,
    format_config,
    import_ply,
    init_gaussians,
    load_config,
    load_dataset,
    parse_config,
    save_dataset,
    scene_extent,
    synth_scene,
)
from splatctl.io.dataset import camera_from_c2w, camera_to_c2w, read_image
from splatctl.io.ply import gaussian_property_names, read_points, write_points
from splatctl.loss import PSNR_CAP, psnr
from splatctl.render import project, render


def random_set(n, degree=3, seed=0):
    rng = np.random.default_rng(seed)
    return GaussianSet(rng.normal(size=(n, 3)), rng.normal(size=(n, 3)), rng.normal(size=(n, 4)),
                       rng.normal(size=(n, 1)), rng.normal(size=(n, 3, (degree + 1) ** 2)),
                       active_sh_degree=min(1, degree))


def assert_sets_equal(a, b):
    for k in a.parameters():
        assert np.array_equal(a.parameters()[k], b.parameters()[k]), k
    assert a.active_sh_degree == b.active_sh_degree


# --- PLY ---------------------------------------------------------------------

@pytest.mark.parametrize("degree", [0, 1, 2, 3])
@pytest.mark.parametrize("n", [0, 1, 17])
def test_ply_round_trip_is_bit_exact(tmp_path, degree, n):
    g = random_set(n, degree)
    export_ply(g, tmp_path / "g.ply")
    assert_sets_equal(g, import_ply(tmp_path / "g.ply"))


def test_ply_property_layout_degree_three(tmp_path):
    names = gaussian_property_names(3)
    assert names[:9] == ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"]
    assert names[-8:] == ["opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"]
    assert len(names) - 6 == 56
    export_ply(random_set(2), tmp_path / "g.ply")
    header = (tmp_path / "g.ply").read_bytes().split(b"end_header")[0].decode()
    assert "format binary_little_endian 1.0" in header
    assert [l.split()[-1] for l in header.splitlines() if l.startswith("property")] == names


def test_ply_rest_coefficients_are_channel_major(tmp_path):
    g = random_set(1, 1)
    g.sh_coeffs[0] = np.arange(12).reshape(3, 4)
    export_ply(g, tmp_path / "g.ply")
    body = (tmp_path / "g.ply").read_bytes().split(b"end_header\n")[1]
    row = np.frombuffer(body, dtype="<f8")
    np.testing.assert_array_equal(row[6:9], [0, 4, 8])
    np.testing.assert_array_equal(row[9:18], [1, 2, 3, 5, 6, 7, 9, 10, 11])


def test_ply_accepts_float32(tmp_path):
    names = gaussian_property_names(0)
    vals = np.arange(len(names), dtype="<f4")[None] / 10
    header = "ply\nformat binary_little_endian 1.0\nelement vertex 1\n"
    header += "".join(f"property float {n}\n" for n in names) + "end_header\n"
    (tmp_path / "f.ply").write_bytes(header.encode() + vals.tobytes())
    g = import_ply(tmp_path / "f.ply")
    assert g.opacity_logits[0, 0] == pytest.approx(0.9, rel=1e-6)


def test_ply_errors(tmp_path):
    p = tmp_path / "x.ply"
    p.write_bytes(b"not a ply")
    with pytest.raises(PlyHeaderError):
        import_ply(p)
    p.write_bytes(b"ply\nformat ascii 1.0\nelement vertex 0\nend_header\n")
    with pytest.raises(PlyHeaderError):
        import_ply(p)
    p.write_bytes(b"ply\nformat binary_little_endian 1.0\nelement vertex 0\nproperty double x\nend_header\n")
    with pytest.raises(PlyPropertyError):
        import_ply(p)
    export_ply(random_set(3), p)
    p.write_bytes(p.read_bytes()[:-5])
    with pytest.raises(PlyTruncatedError):
        import_ply(p)


def test_points_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    pts, cols = rng.normal(size=(9, 3)), rng.integers(0, 256, (9, 3)) / 255.0
    write_points(tmp_path / "p.ply", pts, cols)
    p2, c2 = read_points(tmp_path / "p.ply")
    assert np.array_equal(p2, pts)
    np.testing.assert_allclose(c2, cols)


# --- datasets ----------------------------------------------------------------

def write_manifest(root, frames, angle=math.pi / 2):
    root.mkdir(parents=True, exist_ok=True)
    (root / "transforms.json").write_text(json.dumps({"camera_angle_x": angle, "frames": frames}))


def write_png(path, size=(8, 8), mode="RGB", value=128):
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.new(mode, size, tuple([value] * len(mode))).save(path)


def test_focal_from_field_of_view():
    cam = camera_from_c2w(np.eye(4), math.pi / 2, 800, 600)
    assert cam.fx == pytest.approx(400.0) and cam.fy == pytest.approx(400.0)
    assert (cam.cx, cam.cy) == (400.0, 300.0)


def test_pose_axis_flip_round_trip():
    c2w = np.eye(4)
    c2w[:3, 3] = [0.0, 0.0, 4.0]
    cam = camera_from_c2w(c2w, 1.0, 16, 16)
    # the OpenGL camera looks down -z, so the origin is 4 units in front
    np.testing.assert_allclose(cam.world_to_camera[:3, :3] @ np.zeros(3) + cam.translation, [0.0, 0.0, 4.0])
    np.testing.assert_allclose(camera_to_c2w(cam), c2w, atol=1e-15)


def test_nine_frames_split(tmp_path):
    frames = []
    for i in range(9):
        write_png(tmp_path / f"img{i}.png")
        frames.append({"file_path": f"img{i}", "transform_matrix": np.eye(4).tolist()})
    write_manifest(tmp_path, frames)
    ds = load_dataset(tmp_path)
    assert ds.test_indices == [0, 8]
    assert ds.train_indices == list(range(1, 8))
    assert ds.images[0].shape == (8, 8, 3)
    assert ds.images[0][0, 0, 0] == pytest.approx(128 / 255)


def test_rgba_is_composited_over_black(tmp_path):
    Image.new("RGBA", (4, 4), (200, 100, 50, 128)).save(tmp_path / "a.png")
    img = read_image(tmp_path / "a.png")
    np.testing.assert_allclose(img[0, 0], np.array([200, 100, 50]) / 255 * 128 / 255)


def test_dataset_errors(tmp_path):
    with pytest.raises(ManifestError):
        load_dataset(tmp_path / "missing")
    write_manifest(tmp_path / "empty", [])
    with pytest.raises(EmptyDatasetError):
        load_dataset(tmp_path / "empty")
    write_manifest(tmp_path / "badimg", [{"file_path": "nope.png", "transform_matrix": np.eye(4).tolist()}])
    with pytest.raises(ImageReadError):
        load_dataset(tmp_path / "badimg")
    write_png(tmp_path / "badpose" / "a.png")
    write_manifest(tmp_path / "badpose", [{"file_path": "a.png", "transform_matrix": np.zeros((4, 4)).tolist()}])
    with pytest.raises(PoseError):
        load_dataset(tmp_path / "badpose")
    (tmp_path / "junk").mkdir()
    (tmp_path / "junk" / "transforms.json").write_text("{")
    with pytest.raises(ManifestError):
        load_dataset(tmp_path / "junk")


def test_save_load_round_trip_is_pure(tmp_path):
    _, ds = synth_scene(k=4, seed=1, n_views=3, resolution=16)
    save_dataset(ds, tmp_path / "d")
    a = load_dataset(tmp_path / "d")
    b = load_dataset(tmp_path / "d")
    for x, y, z in zip(a.images, b.images, ds.images):
        assert np.array_equal(x, y) and np.array_equal(x, z)
    for ca, cd in zip(a.cameras, ds.cameras):
        np.testing.assert_allclose(ca.world_to_camera, cd.world_to_camera, atol=1e-12)
    assert np.array_equal(a.init_points, ds.init_points)
    png_only = load_dataset(tmp_path / "d", prefer_raw=False)
    np.testing.assert_allclose(png_only.images[0], ds.images[0], atol=0.5 / 255 + 1e-12)


def test_scene_extent():
    cams = [camera_from_c2w(np.array([[1, 0, 0, x], [0, 1, 0, 0], [0, 0, 1, 0], [0, 0, 0, 1.0]]), 1.0, 4, 4)
            for x in (-2.0, 2.0)]
    assert scene_extent(cams) == pytest.approx(2.2)


# --- initialization ----------------------------------------------------------

def test_init_from_points():
    rng = np.random.default_rng(0)
    pts = rng.uniform(-1, 1, (100, 3))
    cols = np.full((100, 3), 0.5)
    g = init_gaussians(pts, cols, sh_degree=3)
    assert len(g) == 100
    np.testing.assert_allclose(g.opacities, 0.1)
    assert np.all(g.sh_coeffs == 0.0)
    np.testing.assert_array_equal(g.rotations, np.tile([1.0, 0, 0, 0], (100, 1)))
    assert np.all(g.log_scales[:, 0] == g.log_scales[:, 1])


def test_init_scale_is_mean_knn_distance():
    pts = np.array([[0.0, 0, 0], [1, 0, 0], [0, 2, 0], [0, 0, 3], [10, 10, 10]])
    g = init_gaussians(pts, np.zeros((5, 3)))
    assert np.exp(g.log_scales[0, 0]) == pytest.approx(2.0)


def test_init_scale_floor_for_duplicates():
    g = init_gaussians(np.zeros((4, 3)), np.zeros((4, 3)))
    np.testing.assert_allclose(g.log_scales, np.log(1e-7))


def test_init_random_fallback_is_seeded():
    a = init_gaussians(np.zeros((0, 3)), np.zeros((0, 3)), n_random_fallback=50, seed=3)
    b = init_gaussians(np.zeros((0, 3)), np.zeros((0, 3)), n_random_fallback=50, seed=3)
    assert len(a) == 50 and np.array_equal(a.positions, b.positions)
    assert np.all(np.abs(a.positions) <= 1.0)


# --- synthetic scenes --------------------------------------------------------

def test_synth_is_deterministic():
    g1, d1 = synth_scene(k=5, seed=7, n_views=4, resolution=24)
    g2, d2 = synth_scene(k=5, seed=7, n_views=4, resolution=24)
    assert np.array_equal(g1.positions, g2.positions)
    assert all(np.array_equal(a, b) for a, b in zip(d1.images, d2.images))
    assert np.array_equal(d1.init_points, d2.init_points)


def test_synth_ground_truth_properties():
    gt, ds = synth_scene(k=40, seed=3, n_views=10, resolution=32)
    assert len(ds) == 10
    assert np.all(np.linalg.norm(gt.positions, axis=1) <= 1.0)
    s = np.exp(gt.log_scales)
    assert s.min() >= 0.02 - 1e-12 and s.max() <= 0.15 + 1e-12
    assert gt.opacities.min() >= 0.5 and gt.opacities.max() <= 0.95
    for cam in ds.cameras:
        assert np.linalg.norm(cam.center) == pytest.approx(3.0)
    for cam, img in zip(ds.cameras, ds.images):
        assert psnr(render(gt, cam), img) == PSNR_CAP


def test_single_gaussian_brightest_at_projection():
    gt, ds = synth_scene(k=1, seed=0, n_views=6, resolution=48)
    gt.opacity_logits[:] = np.log(0.9 / 0.1)
    gt.log_scales[:] = gt.log_scales[0, 0]
    for cam in ds.cameras:
        img = render(gt, cam)
        mean = project(gt, cam).mean2d[0]
        lum = img.sum(axis=2)
        py, px = np.unravel_index(np.argmax(lum), lum.shape)
        assert abs(px - mean[0]) < 1.0 and abs(py - mean[1]) < 1.0


# --- run configuration -------------------------------------------------------

def test_config_text_round_trip(tmp_path):
    cfg = RunConfig(lambda_alpha=2e-5, tau_remove=40, profile="full", save_checkpoints=False)
    (tmp_path / "c.txt").write_text(format_config(cfg))
    assert load_config(tmp_path / "c.txt") == cfg


def test_config_parsing_rules():
    cfg = parse_config("# comment\nlambda_alpha = 1e-6  # inline\ntau_remove = auto\n\nseed=3\n")
    assert cfg.lambda_alpha == 1e-6 and cfg.tau_remove is None and cfg.seed == 3
    with pytest.raises(ConfigError):
        parse_config("bogus_key = 1")
    with pytest.raises(ConfigError):
        parse_config("seed = many")
    with pytest.raises(ConfigError):
        parse_config("just text")
    with pytest.raises(ConfigError):
        parse_config("profile = huge")
    with pytest.raises(ConfigError):
        parse_config("lambda_w = 2")


def test_desk_and_full_profiles():
    assert RunConfig().control_config(64).tau_remove == 20
    assert RunConfig().control_config(64).n_batch == 500
    full = RunConfig(profile="full").control_config(64)
    assert (full.tau_remove, full.n_batch) == (2000, 100_000)
    assert RunConfig(tau_remove=7).control_config(64).tau_remove == 7
