import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lightdiffusion.envmap import (
    EnvironmentMap,
    Lobe,
    ProceduralEnvSpec,
    diffuse_convolve,
    diffusion_parameter,
    dominant_light_direction,
    downsample,
    exponent_for_gini,
    gen_procedural_env,
    gini,
    gini_coefficient,
    luminance,
    mean_radiance,
    random_env_spec,
    texel_directions,
    zero_cone,
)
from lightdiffusion.errors import (
    ClampWarning,
    DegenerateLightingError,
    UndefinedGiniError,
    ValidationError,
)

from oracles import convolve_texel, env_gini, pairwise_gini, texel_dir


def random_map(rng, h=16, w=32):
    return EnvironmentMap(rng.uniform(0, 1, (h, w, 3)) ** 3)


def procedural(seed, height=32):
    rng = np.random.default_rng(seed)
    return gen_procedural_env(random_env_spec(rng, height), seed)


# --- EnvironmentMap -----------------------------------------------------------


def test_map_rejects_negative_and_nonfinite():
    good = np.ones((4, 8, 3))
    for bad_value in (-1.0, np.nan, np.inf):
        rad = good.copy()
        rad[1, 2, 0] = bad_value
        with pytest.raises(ValidationError):
            EnvironmentMap(rad)


def test_map_size_limits():
    EnvironmentMap(np.ones((2, 4, 3)))
    EnvironmentMap(np.ones((2, 5, 3)))  # width need not be 2 * height
    with pytest.raises(ValidationError):
        EnvironmentMap(np.ones((1, 4, 3)))
    with pytest.raises(ValidationError):
        EnvironmentMap(np.ones((4, 3, 3)))


def test_radiance_is_read_only_copy():
    rad = np.ones((4, 8, 3))
    env = EnvironmentMap(rad)
    rad[0, 0, 0] = 5.0
    assert env.radiance[0, 0, 0] == 1.0
    with pytest.raises(ValueError):
        env.radiance[0, 0, 0] = 2.0


def test_texel_convention():
    d = texel_directions(4, 8)
    for r, c in [(0, 0), (3, 7), (2, 5)]:
        ref, _ = texel_dir(r, c, 4, 8)
        np.testing.assert_allclose(d[r, c], ref, atol=1e-15)
    # row 0 sits near the north pole (+y)
    assert d[0, 0, 1] > 0.9


# --- luminance ------------------------------------------------------------------


def test_luminance_examples():
    assert luminance((1, 1, 1)) == pytest.approx(1.0, abs=1e-15)
    assert luminance((0, 0, 0)) == 0.0
    assert luminance((1, 0, 0)) == pytest.approx(0.2126, abs=1e-15)


@pytest.mark.parametrize("bad", [(-0.1, 0, 0), (np.nan, 1, 1), (np.inf, 0, 0)])
def test_luminance_rejects_bad_input(bad):
    with pytest.raises(ValidationError):
        luminance(bad)


# --- gini -----------------------------------------------------------------------


def test_gini_matches_pairwise_on_random_maps():
    rng = np.random.default_rng(1)
    for _ in range(10):
        env = random_map(rng)
        ref = env_gini(env.radiance)
        assert gini(env) == pytest.approx(ref, rel=1e-9)


def test_gini_uniform_map_is_sin_profile_gini():
    env = EnvironmentMap.constant((0.7, 0.7, 0.7), 16, 32)
    g = gini(env)
    assert g > 0.1
    assert g == pytest.approx(env_gini(env.radiance), rel=1e-12)


def test_gini_single_impulse():
    rad = np.zeros((16, 32, 3))
    rad[5, 9] = (2.0, 1.0, 0.5)
    k = 16 * 32
    assert gini(EnvironmentMap(rad)) == (k - 1) / k


def test_gini_all_zero_is_undefined():
    with pytest.raises(UndefinedGiniError):
        gini(EnvironmentMap(np.zeros((4, 8, 3))))


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.integers(1, 40), elements=st.floats(0, 1e3)))
def test_gini_coefficient_property(x):
    if x.sum() <= 0:
        with pytest.raises(UndefinedGiniError):
            gini_coefficient(x)
        return
    g = gini_coefficient(x)
    assert 0.0 <= g <= 1.0
    assert g == pytest.approx(pairwise_gini(x), rel=1e-9, abs=1e-12)
    # scale invariance and permutation invariance
    assert gini_coefficient(3.5 * x) == pytest.approx(g, rel=1e-9, abs=1e-12)
    assert gini_coefficient(x[::-1]) == pytest.approx(g, rel=1e-12, abs=1e-15)


def test_gini_ties_and_zeros():
    assert gini_coefficient([0, 0, 1, 1]) == pytest.approx(pairwise_gini([0, 0, 1, 1]), rel=1e-12)
    assert gini_coefficient([2, 2, 2]) == 0.0


# --- mean radiance ----------------------------------------------------------------


def test_mean_radiance_constant():
    np.testing.assert_allclose(mean_radiance(EnvironmentMap.constant((0.2, 0.4, 0.8), 8)), (0.2, 0.4, 0.8), rtol=1e-14)


def test_mean_radiance_hemispheres():
    rad = np.zeros((16, 32, 3))
    rad[:8] = (1.0, 2.0, 3.0)
    rad[8:] = (3.0, 0.0, 1.0)
    np.testing.assert_allclose(mean_radiance(EnvironmentMap(rad)), (2.0, 1.0, 2.0), rtol=1e-3)


def test_mean_radiance_single_texel():
    h, w = 8, 16
    rad = np.zeros((h, w, 3))
    rad[2, 3] = (4.0, 2.0, 1.0)
    sins = [math.sin(math.pi * (r + 0.5) / h) for r in range(h)]
    expected = np.array([4.0, 2.0, 1.0]) * sins[2] / (w * sum(sins))
    np.testing.assert_allclose(mean_radiance(EnvironmentMap(rad)), expected, rtol=1e-12)


# --- diffuse_convolve ---------------------------------------------------------------


@pytest.mark.parametrize("n", [0.0, 1.0, 7.5, 64.0, 1000.0])
def test_convolve_constant_fixed_point(n):
    c = (0.3, 1.7, 0.05)
    out = diffuse_convolve(EnvironmentMap.constant(c, 8), n)
    np.testing.assert_allclose(out.radiance, np.broadcast_to(c, out.radiance.shape), rtol=1e-12)


def test_convolve_matches_loop_oracle():
    rng = np.random.default_rng(4)
    env = random_map(rng, 6, 12)
    for n in (0.0, 1.0, 5.0):
        out = diffuse_convolve(env, n, out_height=4, work_height=None)
        for r, c in [(0, 0), (1, 5), (3, 7)]:
            omega, _ = texel_dir(r, c, 4, 8)
            np.testing.assert_allclose(out.radiance[r, c], convolve_texel(env.radiance, n, omega), rtol=1e-10)


def test_convolve_single_texel_n1():
    h, w = 8, 16
    rad = np.zeros((h, w, 3))
    rad[3, 4] = 1.0
    env = EnvironmentMap(rad)
    out = diffuse_convolve(env, 1.0, work_height=None)
    d, th = texel_dir(3, 4, h, w)
    # at omega = d the kernel weight is 1
    den = sum(max(0.0, float(np.dot(d, texel_dir(r, c, h, w)[0]))) * math.sin(texel_dir(r, c, h, w)[1])
              for r in range(h) for c in range(w))
    assert out.radiance[3, 4, 0] == pytest.approx(math.sin(th) / den, rel=1e-12)
    # the texel 90 degrees of longitude away on the same ring is near perpendicular
    dots = texel_directions(h, w).reshape(-1, 3) @ d
    perp = int(np.argmin(np.abs(dots)))
    if abs(dots[perp]) < 1e-12:
        assert out.radiance.reshape(-1, 3)[perp, 0] == pytest.approx(0.0, abs=1e-15)
    # everything on the far hemisphere is exactly zero
    assert np.all(out.radiance.reshape(-1, 3)[dots <= 0] == 0.0)


def test_convolve_preserves_mean():
    rng = np.random.default_rng(7)
    for _ in range(5):
        env = random_map(rng, 32, 64)
        m = mean_radiance(env)
        for n in (1.0, 8.0, 64.0):
            np.testing.assert_allclose(mean_radiance(diffuse_convolve(env, n)), m, rtol=1e-3)


def test_convolve_gini_monotone_in_n_on_procedural_maps():
    for seed in range(4):
        env = procedural(seed)
        gs = [gini(diffuse_convolve(env, n)) for n in (1, 4, 16, 64, 256)]
        assert all(a <= b + 1e-3 for a, b in zip(gs, gs[1:])), gs


def test_iterated_n1_converges_on_noise_map():
    rng = np.random.default_rng(11)
    env = random_map(rng, 32, 64)
    m = mean_radiance(env)
    for _ in range(8):
        env = diffuse_convolve(env, 1.0)
    assert np.max(np.abs(env.radiance - m) / m) < 0.01


def test_convolve_rejects_negative_exponent():
    with pytest.raises(ValidationError):
        diffuse_convolve(EnvironmentMap.constant((1, 1, 1), 4), -0.5)
    with pytest.raises(ValidationError):
        diffuse_convolve(EnvironmentMap.constant((1, 1, 1), 4), 1.0, out_height=1)


def test_convolve_infinite_exponent_is_identity_at_native_size():
    env = procedural(3, 16)
    assert np.array_equal(diffuse_convolve(env, math.inf, work_height=None).radiance, env.radiance)


def test_convolve_output_shape_and_determinism():
    env = procedural(5)
    a = diffuse_convolve(env, 3.0, out_height=16)
    b = diffuse_convolve(env, 3.0, out_height=16)
    assert a.radiance.shape == (16, 32, 3)
    assert np.array_equal(a.radiance, b.radiance)


def test_downsample_preserves_mean():
    env = procedural(6, 32)
    small = downsample(env, 8)
    assert small.radiance.shape == (8, 16, 3)
    np.testing.assert_allclose(mean_radiance(small), mean_radiance(env), rtol=1e-12)


# --- diffusion parameter ------------------------------------------------------------


def test_diffusion_parameter_examples():
    assert diffusion_parameter(0.9, 0.3, 0.3) == 0.0
    assert diffusion_parameter(0.9, 0.3, 0.9) == 1.0
    assert diffusion_parameter(0.9, 0.3, 0.6) == pytest.approx(0.5, abs=1e-15)


def test_diffusion_parameter_errors_and_clamp():
    with pytest.raises(DegenerateLightingError):
        diffusion_parameter(0.3, 0.3, 0.3)
    with pytest.warns(ClampWarning):
        assert diffusion_parameter(0.9, 0.3, 0.95) == 1.0
    with pytest.warns(ClampWarning):
        assert diffusion_parameter(0.9, 0.3, 0.1) == 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        diffusion_parameter(0.9, 0.3, 0.5)


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 1), st.floats(0.01, 0.99), st.floats(0.0, 1.0))
def test_diffusion_parameter_is_affine(gd, span, u):
    gs = gd + span
    gt = gd + u * span
    assert diffusion_parameter(gs, gd, gt) == pytest.approx(u, abs=1e-9)


# --- dominant direction -------------------------------------------------------------


def test_dominant_single_texel_on_x_axis():
    # no texel centre sits exactly at phi = 0, so compare with the texel's own direction
    h, w = 16, 32
    rad = np.zeros((h, w, 3))
    rad[8, 0] = 5.0
    d = dominant_light_direction(EnvironmentMap(rad))
    ref, _ = texel_dir(8, 0, h, w)
    np.testing.assert_allclose(d, ref / np.linalg.norm(ref), atol=1e-6)


def test_dominant_exact_x_axis():
    # odd height puts row 7 on the equator; two texels straddle phi = 0 symmetrically
    h, w = 15, 32
    rad = np.zeros((h, w, 3))
    rad[7, 0] = 1.0
    rad[7, w - 1] = 1.0
    d = dominant_light_direction(EnvironmentMap(rad))
    np.testing.assert_allclose(d, (1.0, 0.0, 0.0), atol=1e-6)


def test_dominant_bisector_of_two_sources():
    h, w = 15, 64
    rad = np.zeros((h, w, 3))
    # texels straddling phi = 0 and phi = pi/2 symmetrically
    rad[7, [0, w - 1]] = 1.0
    rad[7, [w // 4 - 1, w // 4]] = 1.0
    d = dominant_light_direction(EnvironmentMap(rad))
    np.testing.assert_allclose(d, np.array([1.0, 0.0, 1.0]) / math.sqrt(2), atol=1e-6)


def test_dominant_uniform_map_unit_and_tie_break():
    env = EnvironmentMap.constant((1, 1, 1), 8)
    d = dominant_light_direction(env)
    assert np.linalg.norm(d) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(UndefinedGiniError):
        dominant_light_direction(EnvironmentMap(np.zeros((4, 8, 3))))


def test_zero_cone_removes_only_cone():
    env = EnvironmentMap.constant((1, 1, 1), 16)
    d = np.array([0.0, 1.0, 0.0])
    out = zero_cone(env, d, math.radians(20))
    dots = env.directions() @ d
    assert np.all(out.radiance[dots >= math.cos(math.radians(20))] == 0)
    assert np.all(out.radiance[dots < math.cos(math.radians(20))] == 1)


# --- procedural maps -------------------------------------------------------------------


def test_ambient_only_spec_is_constant():
    spec = ProceduralEnvSpec(ambient=0.4, ambient_color=(1.0, 0.5, 0.25), height=16, width=32)
    env = gen_procedural_env(spec, 3)
    np.testing.assert_allclose(env.radiance, np.broadcast_to((0.4, 0.2, 0.1), env.radiance.shape), rtol=1e-15)
    assert gini(env) == pytest.approx(gini(EnvironmentMap.constant((1, 1, 1), 16, 32)), rel=1e-12)


def test_tight_lobe_is_harsh():
    spec = ProceduralEnvSpec(lobes=(Lobe((0.3, 0.5, 0.8), 0.05, 100.0, (1, 1, 1)),), height=32, width=64)
    assert gini(gen_procedural_env(spec, 0)) > 0.9


def test_procedural_deterministic_and_seed_dependent():
    spec = random_env_spec(np.random.default_rng(2))
    a = gen_procedural_env(spec, 5).radiance
    assert np.array_equal(a, gen_procedural_env(spec, 5).radiance)
    if spec.noise > 0:
        assert not np.array_equal(a, gen_procedural_env(spec, 6).radiance)


def test_procedural_spec_round_trip():
    spec = random_env_spec(np.random.default_rng(9))
    assert ProceduralEnvSpec.from_dict(spec.to_dict()) == spec


@pytest.mark.parametrize("bad", [
    ProceduralEnvSpec(),
    ProceduralEnvSpec(lobes=(Lobe((0, 1, 0), 0.0, 1.0, (1, 1, 1)),)),
    ProceduralEnvSpec(lobes=(Lobe((0, 1, 0), 0.2, -1.0, (1, 1, 1)),)),
    ProceduralEnvSpec(lobes=tuple(Lobe((0, 1, 0), 0.2, 1.0, (1, 1, 1)) for _ in range(9))),
    ProceduralEnvSpec(ambient=-1.0),
])
def test_procedural_spec_validation(bad):
    with pytest.raises(ValidationError):
        gen_procedural_env(bad, 0)


# --- exponent bisection -----------------------------------------------------------------


def test_exponent_for_gini_inverts_gini():
    env = downsample(procedural(8), 16)

    def g_of(n):
        return gini(diffuse_convolve(env, n, out_height=env.height, work_height=None))

    g1, g_hi = g_of(1.0), g_of(4096.0)
    for frac in (0.2, 0.5, 0.8):
        target = g1 + frac * (g_hi - g1)
        n = exponent_for_gini(env, target)
        assert 1.0 < n < 4096.0
        assert g_of(n) == pytest.approx(target, abs=1e-6)
    assert exponent_for_gini(env, g1 - 0.01) == 1.0
    assert math.isinf(exponent_for_gini(env, g_hi + 0.01))
