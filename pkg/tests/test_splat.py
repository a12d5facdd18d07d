import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nbvkit.camera import CameraPose, Intrinsics, Ray, pixel_ray
from nbvkit.errors import DomainError, NumericalDomainError
from nbvkit.pointcloud import DepthMap
from nbvkit.splat import (DropSchedule, Gaussian3D, GaussianScene, composite_ray, drop_gaussians, drop_rate,
                          eval_alpha, l1_depth, l1_rgb, load_gaussians, render_image, render_ray,
                          save_gaussians)

from conftest import random_rotation

Z_RAY = Ray(np.zeros(3), np.array([0.0, 0.0, 1.0]))


def random_scene(rng, n):
    gs = [Gaussian3D(rng.uniform([-1, -1, 1], [1, 1, 5]), rng.uniform(0, 1, 3), float(rng.uniform(0, 1)),
                     rng.uniform(0.05, 0.5, 3), random_rotation(rng)) for _ in range(n)]
    return GaussianScene(tuple(gs), rng.uniform(0, 1, 3))


def random_rays(rng, n):
    d = rng.normal(size=(n, 3)) * [0.3, 0.3, 1.0]
    d[:, 2] = np.abs(d[:, 2]) + 0.2
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return [Ray(np.zeros(3), x) for x in d]


# --- Gaussians ---------------------------------------------------------------------

def test_gaussian_validation():
    with pytest.raises(DomainError):
        Gaussian3D([0, 0, 0], [1, 1, 1], -0.1, [1, 1, 1])
    with pytest.raises(DomainError):
        Gaussian3D([0, 0, 0], [1, 1, 1], 0.5, [1, 0, 1])
    with pytest.raises(DomainError):
        Gaussian3D([0, 0, 0], [1, 1, 1], 0.5, [1, 1, 1], np.diag([1.0, 1.0, -1.0]))


def test_covariance_spd(rng):
    for _ in range(10):
        g = random_scene(rng, 1).gaussians[0]
        S = g.covariance
        assert np.allclose(S, S.T, atol=1e-15)
        assert np.linalg.eigvalsh(S).min() > 0
        assert np.allclose(S @ g.precision, np.eye(3), atol=1e-9)


def test_eval_alpha_cases():
    g = Gaussian3D([1.0, 2.0, 3.0], [1, 0, 0], 0.7, [0.5, 0.5, 0.5])
    assert eval_alpha(g, [1.0, 2.0, 3.0]) == 0.7
    assert math.isclose(eval_alpha(g, [1.5, 2.0, 3.0]), 0.7 * math.exp(-0.5), rel_tol=1e-12)
    assert eval_alpha(g, [7.0, 2.0, 3.0]) < 0.7 * math.exp(-50)
    # compensated opacity above 1 is clamped when evaluated
    assert eval_alpha(Gaussian3D([0, 0, 0], [1, 1, 1], 1.6, [1, 1, 1]), [0, 0, 0]) == 1.0
    with pytest.raises(NumericalDomainError):
        eval_alpha(Gaussian3D([0, 0, 0], [1, 1, 1], 0.5, [1.0, 1.0, 1e-7]), [0, 0, 0])


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_eval_alpha_bounded(seed):
    rng = np.random.default_rng(seed)
    g = random_scene(rng, 1).gaussians[0]
    a = eval_alpha(g, rng.uniform(-3, 3, 3))
    assert 0.0 <= a <= g.opacity


# --- compositing ---------------------------------------------------------------------

def test_empty_scene_is_background():
    s = GaussianScene((), [0.2, 0.3, 0.4])
    color, alpha, depth = render_ray(s, Z_RAY)
    assert np.array_equal(color, [0.2, 0.3, 0.4]) and alpha == 0.0 and math.isnan(depth)


def test_single_opaque_gaussian():
    g = Gaussian3D([0, 0, 2.0], [0.9, 0.1, 0.3], 1.0, [0.1, 0.1, 0.1])
    color, alpha, depth = render_ray(GaussianScene((g,)), Z_RAY)
    assert np.abs(color - g.color).max() <= 1e-3
    assert alpha == pytest.approx(0.999)
    assert depth == 2.0


def test_two_gaussian_hand_case():
    g1 = Gaussian3D([0, 0, 1.0], [1, 0, 0], 0.5, [0.1, 0.1, 0.1])
    g2 = Gaussian3D([0, 0, 2.0], [0, 1, 0], 0.5, [0.1, 0.1, 0.1])
    bg = np.array([0.0, 0.0, 1.0])
    c = composite_ray(GaussianScene((g2, g1), bg), Z_RAY)
    assert np.allclose(c.weights, [0.25, 0.5], atol=1e-15)
    assert np.allclose(c.color, 0.5 * g1.color + 0.25 * g2.color + 0.25 * bg, atol=1e-15)
    assert math.isclose(c.depth, (0.5 * 1 + 0.25 * 2) / 0.75, rel_tol=1e-12)


def test_behind_camera_skipped():
    g = Gaussian3D([0, 0, -2.0], [1, 1, 1], 1.0, [1.0, 1.0, 1.0])
    _, alpha, _ = render_ray(GaussianScene((g,)), Z_RAY)
    assert alpha == 0.0


def test_weights_partition_unity(rng):
    scene = random_scene(rng, 30)
    for ray in random_rays(rng, 200):
        c = composite_ray(scene, ray)
        assert np.all(c.weights >= 0)
        assert c.weights.sum() <= 1 + 1e-12
        assert abs(c.weights.sum() + c.transmittance - 1) <= 1e-9
        assert np.all(c.color >= -1e-12) and np.all(c.color <= 1 + 1e-12)


def test_storage_order_invariance(rng):
    scene = random_scene(rng, 25)
    perm = rng.permutation(len(scene))
    shuffled = GaussianScene(tuple(scene.gaussians[i] for i in perm), scene.background)
    for ray in random_rays(rng, 1000):
        a, b = render_ray(scene, ray), render_ray(shuffled, ray)
        assert np.array_equal(a[0], b[0]) and a[1] == b[1]
        assert a[2] == b[2] or (math.isnan(a[2]) and math.isnan(b[2]))


def test_render_image_matches_render_ray(rng):
    scene = random_scene(rng, 10)
    K = Intrinsics(8.0, 8.0, 4.0, 3.0, 8, 6)
    img, alpha, depth = render_image(scene, CameraPose.identity(), K, chunk=7)
    for v in range(6):
        for u in range(8):
            c, a, d = render_ray(scene, pixel_ray(CameraPose.identity(), K, float(u), float(v)))
            assert np.allclose(img[v, u], c, atol=1e-12) and math.isclose(alpha[v, u], a, abs_tol=1e-12)
            assert depth.valid[v, u] == (not math.isnan(d))


def test_render_image_cases():
    K = Intrinsics(20.0, 20.0, 8.0, 6.0, 16, 12)
    img, alpha, depth = render_image(GaussianScene((), [0.1, 0.2, 0.3]), CameraPose.identity(), K)
    assert np.all(img == [0.1, 0.2, 0.3]) and not alpha.any() and not depth.valid.any()
    g = Gaussian3D([0, 0, 3.0], [1, 1, 1], 1.0, [0.2, 0.2, 0.2])
    scene = GaussianScene((g,))
    img, alpha, _ = render_image(scene, CameraPose.identity(), K)
    assert np.unravel_index(np.argmax(alpha), alpha.shape) == (6, 8)
    assert alpha[6, 8] > alpha.reshape(-1)[np.arange(alpha.size) != 6 * 16 + 8].max()
    img2, alpha2, _ = render_image(scene, CameraPose.identity(), K)
    assert np.array_equal(img, img2) and np.array_equal(alpha, alpha2)


# --- dropping ------------------------------------------------------------------------

def test_drop_rate_schedule():
    s = DropSchedule(0.4, 1000)
    assert drop_rate(0, s) == 0.0
    assert drop_rate(1000, s) == 0.4
    assert drop_rate(500, s) == 0.2
    with pytest.raises(DomainError):
        drop_rate(1001, s)
    with pytest.raises(DomainError):
        DropSchedule(1.0, 10)


def test_drop_gaussians_compensation(rng):
    scene = random_scene(rng, 200)
    assert drop_gaussians(scene, 0.0, 1) is scene
    out = drop_gaussians(scene, 0.25, 3)
    by_mu = {tuple(g.mu): g for g in scene.gaussians}
    for g in out.gaussians:
        assert g.opacity == by_mu[tuple(g.mu)].opacity / (1 - 0.25)
    assert 0 < len(out) < len(scene)
    assert len(drop_gaussians(scene, 0.25, 3)) == len(out)
    with pytest.raises(DomainError):
        drop_gaussians(scene, 1.0, 0)


def test_drop_expectation_monte_carlo():
    g = GaussianScene((Gaussian3D([0, 0, 1], [1, 1, 1], 0.5, [1, 1, 1]),))
    r, trials = 0.3, 10_000
    total = 0.0
    for seed in range(trials):
        out = drop_gaussians(g, r, seed)
        total += out.gaussians[0].opacity if len(out) else 0.0
    assert abs(total / trials - 0.5) <= 0.02 * 0.5


# --- losses --------------------------------------------------------------------------

def test_l1_losses(rng):
    a = rng.random((6, 5, 3))
    assert l1_rgb(a, a) == 0.0
    assert math.isclose(l1_rgb(a, a + 0.1), 0.1, rel_tol=1e-12)
    b = rng.random((6, 5, 3))
    assert math.isclose(l1_rgb(a, b), sum(abs(x - y) for x, y in zip(a.ravel(), b.ravel())) / a.size,
                        rel_tol=1e-12)
    d1 = DepthMap(rng.uniform(1, 3, (6, 5)), rng.random((6, 5)) > 0.3)
    d2 = DepthMap(rng.uniform(1, 3, (6, 5)), rng.random((6, 5)) > 0.3)
    mask = rng.random((6, 5)) > 0.2
    vals = [abs(d1.values[i, j] - d2.values[i, j]) for i in range(6) for j in range(5)
            if d1.valid[i, j] and d2.valid[i, j] and mask[i, j]]
    assert math.isclose(l1_depth(d1, d2, mask), sum(vals) / len(vals), rel_tol=1e-12)
    with pytest.raises(DomainError):
        l1_depth(d1, d2, np.zeros((6, 5), bool))
    with pytest.raises(DomainError):
        l1_rgb(a, a[:, :4])


def test_gaussian_json_roundtrip(tmp_path, rng):
    scene = random_scene(rng, 5)
    save_gaussians(tmp_path / "g.json", scene)
    back = load_gaussians(tmp_path / "g.json")
    assert back.to_dict() == scene.to_dict()
    (tmp_path / "bare.json").write_text('[{"mu": [0, 0, 1], "color": [1, 0, 0], "opacity": 0.5, "scale": [1, 1, 1]}]')
    bare = load_gaussians(tmp_path / "bare.json")
    assert len(bare) == 1 and np.array_equal(bare.background, [0, 0, 0])
    (tmp_path / "bad.json").write_text('[{"mu": [0, 0, 1]}]')
    with pytest.raises(DomainError):
        load_gaussians(tmp_path / "bad.json")
