import math

import numpy as np
import pytest

from lightdiffusion.envmap import EnvironmentMap, Lobe, ProceduralEnvSpec, gen_procedural_env
from lightdiffusion.errors import ValidationError
from lightdiffusion.model.training import untint
from lightdiffusion.renderer import (
    ImageBuffer,
    Occluder,
    SceneSpec,
    build_scene,
    light_weights,
    pixel_coordinates,
    random_scene_spec,
    render_diffused,
    render_env,
    render_olat,
    visibility,
)

from oracles import ray_rectangle, texel_dir

PI3 = (math.pi,) * 3


def lobe_env(direction, width=0.1, intensity=50.0, ambient=0.0, height=32):
    spec = ProceduralEnvSpec(lobes=(Lobe(direction, width, intensity, (1, 1, 1)),),
                             ambient=ambient, height=height, width=2 * height)
    return gen_procedural_env(spec, 0)


@pytest.fixture(scope="module")
def bust():
    return build_scene(SceneSpec(geometry="bust", albedo_pattern="two_tone"), 3)


# --- scenes ---------------------------------------------------------------------


def test_flat_sphere_has_constant_albedo():
    scene = build_scene(SceneSpec(albedo=(0.3, 0.6, 0.9)), 0)
    assert np.all(scene.albedo_texture == np.array([0.3, 0.6, 0.9]))
    img = render_env(scene, EnvironmentMap.constant((1, 1, 1), 8), (32, 32))
    fg = img.alpha > 0
    assert np.all(img.albedo_gt.rgb[fg] == np.array([0.3, 0.6, 0.9]))


def test_build_scene_deterministic(bust):
    again = build_scene(SceneSpec(geometry="bust", albedo_pattern="two_tone"), 3)
    assert np.array_equal(again.albedo_texture, bust.albedo_texture)
    assert np.array_equal(again.geometry.grid, bust.geometry.grid)
    other = build_scene(SceneSpec(geometry="bust", albedo_pattern="two_tone"), 4)
    assert not np.array_equal(other.geometry.grid, bust.geometry.grid)


def test_two_tone_skin_fraction():
    scene = build_scene(SceneSpec(albedo_pattern="two_tone", skin_fraction=0.4), 0)
    T = scene.skin_texture.shape[0]
    c = (np.arange(T) + 0.5) / T * 2 - 1
    x, y = np.meshgrid(c, c)
    disk = x * x + y * y < 1
    assert scene.skin_texture[disk].mean() == pytest.approx(0.4, abs=0.05)


@pytest.mark.parametrize("field,value", [
    ("geometry", "cube"), ("albedo_pattern", "plaid"), ("albedo", (1.5, 0, 0)),
    ("specular_exponent", 0.5), ("skin_fraction", 1.2), ("specular_strength", -1.0),
])
def test_scene_spec_validation(field, value):
    with pytest.raises(ValidationError):
        build_scene(SceneSpec(**{field: value}), 0)


def test_scene_spec_round_trip():
    spec = random_scene_spec(np.random.default_rng(0))
    assert SceneSpec.from_dict(spec.to_dict()) == spec
    occ = SceneSpec(occluder=Occluder((0, 0, 2), (0, 0, 1)))
    assert SceneSpec.from_dict(occ.to_dict()) == occ


def test_bust_normals_unit_and_features(bust):
    img = render_env(bust, EnvironmentMap.constant((1, 1, 1), 8), (48, 48))
    fg = img.alpha > 0
    np.testing.assert_allclose(np.linalg.norm(img.normals[fg], axis=-1), 1.0, atol=1e-6)
    assert not np.allclose(img.normals[fg][:, 2], img.normals[fg][:, 2].mean())


def test_bust_casts_self_shadows(bust):
    # a grazing light from the side must be blocked for some front-facing points (nose, brow)
    d = np.array([0.9, 0.0, 0.3])
    d /= np.linalg.norm(d)
    from lightdiffusion.renderer import _surface

    surf = _surface(bust, (64, 64))
    facing = surf.normals @ d > 0
    vis = visibility(bust, (64, 64), d[None])[:, 0]
    assert np.any(facing & ~vis)
    # visibility is binary and only ever removes facing points
    assert not np.any(vis & ~facing)


# --- render_olat -------------------------------------------------------------------


def test_olat_centre_pixel_analytic():
    scene = build_scene(SceneSpec(albedo=(0.5, 0.5, 0.5)), 0)
    img = render_olat(scene, (0, 0, 1), PI3, (33, 33))
    np.testing.assert_allclose(img.rgb[16, 16], 0.5, rtol=1e-12)


def test_olat_light_behind_is_black():
    scene = build_scene(SceneSpec(), 0)
    img = render_olat(scene, (0, 0, -1), PI3, (33, 33))
    assert np.all(img.rgb[16, 16] == 0)


def test_olat_rejects_non_unit_direction():
    with pytest.raises(ValidationError):
        render_olat(build_scene(SceneSpec(), 0), (0, 0, 2), PI3, (8, 8))


def test_occluder_shadow_matches_ray_oracle():
    occ = Occluder(center=(0.4, 0.0, 2.0), normal=(0, 0, 1), half_width=0.5, half_height=0.8)
    scene = build_scene(SceneSpec(occluder=occ), 0)
    res = (40, 40)
    d = np.array([0.0, 0.0, 1.0])
    img = render_olat(scene, d, PI3, res)
    x, y = pixel_coordinates(res)
    checked = 0
    for r, c in [(20, 24), (20, 28), (10, 26), (30, 26), (20, 10), (20, 19), (5, 25), (35, 15)]:
        px, py = x[r, c], y[r, c]
        if px * px + py * py >= 1:
            continue
        p = np.array([px, py, math.sqrt(1 - px * px - py * py)])
        blocked = ray_rectangle(p, d, occ.center, occ.normal, occ.up, occ.half_width, occ.half_height)
        if blocked:
            assert np.all(img.rgb[r, c] == 0)
        else:
            assert img.rgb[r, c, 0] > 0
        checked += 1
    assert checked >= 6
    assert (img.rgb[..., 0][img.alpha > 0] == 0).any()


# --- render_env ----------------------------------------------------------------------


def test_uniform_sky_lambertian_sphere():
    scene = build_scene(SceneSpec(albedo=(0.5, 0.5, 0.5)), 0)
    img = render_env(scene, EnvironmentMap.constant((1, 1, 1), 32), (128, 128)).image
    fg = img.alpha > 0
    np.testing.assert_allclose(img.rgb[fg], 0.5, rtol=0.02)


def test_env_linearity(bust):
    e1 = lobe_env((0.5, 0.5, 0.7))
    e2 = lobe_env((-0.6, 0.2, 0.7), width=0.4, intensity=3.0, ambient=0.2)
    a = render_env(bust, e1, (32, 32)).image.rgb
    b = render_env(bust, e2, (32, 32)).image.rgb
    ab = render_env(bust, e1 + e2, (32, 32)).image.rgb
    np.testing.assert_allclose(ab, a + b, atol=1e-6)


def test_env_render_is_weighted_olat_sum(bust):
    rng = np.random.default_rng(2)
    env = EnvironmentMap(rng.uniform(0, 1, (8, 16, 3)))
    full = render_env(bust, env, (24, 24), integration_height=None).image.rgb
    total = np.zeros_like(full)
    h, w = 8, 16
    for r in range(h):
        for c in range(w):
            d, th = texel_dir(r, c, h, w)
            weight = env.radiance[r, c] * math.sin(th) * (math.pi / h) * (2 * math.pi / w)
            total += render_olat(bust, d, weight, (24, 24)).rgb
    np.testing.assert_allclose(full, total, atol=1e-6)


def test_single_texel_env_equals_scaled_olat(bust):
    rad = np.zeros((8, 16, 3))
    rad[2, 5] = (2.0, 1.0, 0.5)
    env = EnvironmentMap(rad)
    d, th = texel_dir(2, 5, 8, 16)
    scale = math.sin(th) * (math.pi / 8) * (2 * math.pi / 16)
    a = render_env(bust, env, (24, 24), integration_height=None).image.rgb
    b = render_olat(bust, d, rad[2, 5] * scale, (24, 24)).rgb
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_light_weights_sum_to_irradiance_integral():
    env = EnvironmentMap.constant((1, 1, 1), 16)
    _, w = light_weights(env)
    assert w[:, 0].sum() == pytest.approx(4 * math.pi, rel=2e-3)


def test_alpha_independent_of_lighting(bust):
    a = render_env(bust, lobe_env((0, 1, 0)), (32, 32)).alpha
    b = render_env(bust, lobe_env((1, 0, 0.2)), (32, 32)).alpha
    assert np.array_equal(a, b)
    assert set(np.unique(a)) <= {0.0, 1.0}


def test_visibility_consistent_across_calls(bust):
    dirs = np.array([[0.8, 0.1, 0.59], [0.0, 0.6, 0.8], [-0.7, -0.2, 0.68]])
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    together = visibility(bust, (32, 32), dirs)
    for k in range(3):
        assert np.array_equal(visibility(bust, (32, 32), dirs[k:k + 1])[:, 0], together[:, k])


def test_render_deterministic(bust):
    env = lobe_env((0.2, 0.3, 0.9))
    fresh = build_scene(SceneSpec(geometry="bust", albedo_pattern="two_tone"), 3)
    assert np.array_equal(render_env(bust, env, (32, 32)).image.rgb, render_env(fresh, env, (32, 32)).image.rgb)


def test_untint_constant_env_recovers_albedo():
    scene = build_scene(SceneSpec(albedo_pattern="noise", albedo=(0.6, 0.45, 0.35)), 5)
    c = np.array([1.3, 0.9, 0.4])
    bundle = render_env(scene, EnvironmentMap.constant(c, 32), (64, 64))
    fg = bundle.alpha > 0
    rec = untint(bundle.image.rgb, c)
    np.testing.assert_allclose(rec[fg], bundle.albedo_gt.rgb[fg], rtol=0.02)


def test_image_buffer_validation():
    with pytest.raises(ValidationError):
        ImageBuffer(np.zeros((2, 2, 3)), np.full((2, 2), 1.5))
    with pytest.raises(ValidationError):
        ImageBuffer(-np.ones((2, 2, 3)), np.ones((2, 2)))


# --- render_diffused ---------------------------------------------------------------------


def test_diffused_constant_env_matches_render_env(bust):
    env = EnvironmentMap.constant((0.5, 0.7, 1.0), 32)
    a = render_env(bust, env, (32, 32)).image.rgb
    for n in (1.0, 16.0):
        np.testing.assert_allclose(render_diffused(bust, env, n, (32, 32)).rgb, a, rtol=1e-10)


def test_diffused_large_n_converges_to_original(bust):
    env = lobe_env((0.3, 0.4, 0.87), ambient=0.1)
    a = render_env(bust, env, (32, 32)).image.rgb
    np.testing.assert_allclose(render_diffused(bust, env, math.inf, (32, 32)).rgb, a)
    np.testing.assert_allclose(render_diffused(bust, env, 1e6, (32, 32)).rgb, a, rtol=1e-3, atol=1e-6)


def _penumbra_width(ratio_row):
    return int(np.sum((ratio_row > 0.1) & (ratio_row < 0.9)))


def test_diffused_penumbra_wider_than_original():
    occ = Occluder(center=(-1.0, 0.0, 2.0), normal=(0, 0, 1), half_width=1.0, half_height=3.0)
    shadowed = build_scene(SceneSpec(occluder=occ), 0)
    clear = build_scene(SceneSpec(), 0)
    env = lobe_env((0.0, 0.0, 1.0), width=0.05, intensity=400.0)
    res = (64, 64)
    row = 32
    widths = []
    for n in (math.inf, 1.0):
        a = render_diffused(shadowed, env, n, res).rgb[row, :, 1]
        b = render_diffused(clear, env, n, res).rgb[row, :, 1]
        ok = b > 1e-6
        widths.append(_penumbra_width(a[ok] / b[ok]))
    assert widths[1] > widths[0]


def test_diffused_energy_symmetric_lighting():
    # six equal lobes on the coordinate axes: blurring moves no net light
    # between the visible and hidden halves of the sphere
    axes = [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)]
    spec = ProceduralEnvSpec(lobes=tuple(Lobe(d, 0.1, 50.0, (1, 1, 1)) for d in axes), height=32, width=64)
    env = gen_procedural_env(spec, 0)
    scene = build_scene(SceneSpec(), 0)
    a = render_diffused(scene, env, 4096, (64, 64))
    b = render_diffused(scene, env, 1, (64, 64))
    fg = a.alpha > 0
    assert b.rgb[fg].mean() == pytest.approx(a.rgb[fg].mean(), rel=0.05)


def test_diffused_rejects_negative_n(bust):
    with pytest.raises(ValidationError):
        render_diffused(bust, EnvironmentMap.constant((1, 1, 1), 8), -1.0, (8, 8))
