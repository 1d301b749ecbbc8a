import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from matrender import materials as m
from matrender.materials import (
    FAMILIES,
    MaterialSpec,
    bsdf_eval,
    bsdf_pdf,
    bsdf_sample,
    directional_albedo,
    fresnel_conductor,
    fresnel_dielectric,
    ggx_d,
    smith_g,
    snell_refract,
)
from matrender.rng import RandomStream
from matrender.spectra import ComplexIor, IorTable, ior_at

from mc import direction, ggx_projected_integral, pdf_integral, projected_bsdf_integral


# ------------------------------------------------------------------ Fresnel


def test_fresnel_normal_incidence():
    assert abs(fresnel_dielectric(1.0, 1.0, 1.5) - 0.04) < 1e-12


@pytest.mark.parametrize("theta", [0, 20, 45, 70, 89])
def test_fresnel_matched_media(theta):
    assert fresnel_dielectric(math.cos(math.radians(theta)), 1.33, 1.33) < 1e-15


def test_fresnel_total_internal_reflection():
    critical = float(mpmath.degrees(mpmath.asin(mpmath.mpf(1) / mpmath.mpf("1.5"))))
    assert abs(critical - 41.8103) < 1e-4
    assert fresnel_dielectric(math.cos(math.radians(50)), 1.5, 1.0) == 1.0
    assert fresnel_dielectric(math.cos(math.radians(critical - 0.5)), 1.5, 1.0) < 1.0


def test_conductor_reduces_to_dielectric():
    ior = ComplexIor(1.5, 0.0)
    for c in np.linspace(0.0, 1.0, 100):
        assert abs(fresnel_conductor(c, ior) - fresnel_dielectric(c, 1.0, 1.5)) < 1e-12


def test_conductor_normal_incidence_closed_form():
    eta, k = mpmath.mpf("0.27"), mpmath.mpf("2.95")
    expected = float(((eta - 1) ** 2 + k**2) / ((eta + 1) ** 2 + k**2))
    assert abs(expected - 0.8953) < 1e-4
    assert abs(fresnel_conductor(1.0, ComplexIor(0.27, 2.95)) - expected) < 1e-12


def test_conductor_grazing_limit():
    for ior in (ComplexIor(0.27, 2.95), ComplexIor(1.4, 1.9), ComplexIor(0.05, 4.0)):
        assert abs(fresnel_conductor(1e-9, ior) - 1.0) < 1e-6
        assert fresnel_conductor(0.0, ior) == 1.0


def oracle_conductor(cos_i, eta, k):
    # exact complex-amplitude Fresnel at an air/conductor interface
    n = mpmath.mpc(eta, k)
    ci = mpmath.mpf(cos_i)
    si2 = 1 - ci**2
    ct = mpmath.sqrt(1 - si2 / n**2)
    rs = (ci - n * ct) / (ci + n * ct)
    rp = (n * ci - ct) / (n * ci + ct)
    return float((abs(rs) ** 2 + abs(rp) ** 2) / 2)


@pytest.mark.parametrize("eta,k", [(0.27, 2.95), (1.46, 1.93), (0.05, 4.2), (2.9, 3.3)])
@pytest.mark.parametrize("theta", [0, 25, 50, 75, 88])
def test_conductor_matches_complex_amplitude_oracle(eta, k, theta):
    c = math.cos(math.radians(theta))
    assert abs(fresnel_conductor(c, ComplexIor(eta, k)) - oracle_conductor(c, eta, k)) < 1e-10


@settings(max_examples=300, deadline=None)
@given(st.floats(0, 1), st.floats(0.05, 5), st.floats(0.05, 5), st.floats(0, 10))
def test_fresnel_range(c, e1, e2, k):
    assert 0.0 <= fresnel_dielectric(c, e1, e2) <= 1.0
    assert 0.0 <= fresnel_conductor(c, ComplexIor(e2, k)) <= 1.0


# -------------------------------------------------------------------- Snell


def test_snell_normal_incidence():
    assert np.array_equal(snell_refract([0, 0, 1], 1.0, 1.7), np.array([0.0, 0.0, -1.0]))


def test_snell_angle():
    wt = snell_refract(direction(30), 1.0, 1.5)
    theta_t = math.degrees(math.acos(-wt[2]))
    oracle = float(mpmath.degrees(mpmath.asin(mpmath.mpf("0.5") / mpmath.mpf("1.5"))))
    assert abs(theta_t - oracle) < 1e-4
    assert abs(theta_t - 19.4712) < 1e-4


def test_snell_tir():
    assert snell_refract(direction(50), 1.5, 1.0) is None


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 89), st.floats(0, 360), st.floats(1.0, 3.0), st.floats(1.0, 3.0))
def test_snell_round_trip(theta, phi, e1, e2):
    wi = direction(theta, phi)
    wt = snell_refract(wi, e1, e2)
    if wt is None:
        return
    back = snell_refract(-wt, e2, e1)
    assert back is not None
    assert np.allclose(back, -wi, atol=1e-9)
    assert abs(np.linalg.norm(wt) - 1) < 1e-12


# ------------------------------------------------------------ microfacets


@pytest.mark.parametrize("alpha", [0.05, 0.3, 0.9])
def test_ggx_at_normal(alpha):
    assert math.isclose(ggx_d([0, 0, 1], alpha), 1 / (math.pi * alpha**2), rel_tol=1e-12)


@pytest.mark.parametrize("theta", [0, 10, 45, 80])
def test_ggx_alpha_one_constant(theta):
    assert math.isclose(ggx_d(direction(theta), 1.0), 1 / math.pi, rel_tol=1e-12)


def test_ggx_lower_hemisphere_zero():
    assert ggx_d([0, 0.6, -0.8], 0.3) == 0.0


@pytest.mark.parametrize("alpha", [0.1, 0.3, 0.6])
def test_ggx_projected_area_normalised(alpha):
    assert abs(ggx_projected_integral(alpha, 1_000_000, 7) - 1.0) < 0.01


def test_smith_smooth_limit():
    z = [0, 0, 1]
    assert abs(smith_g(z, z, z, 1e-9) - 1.0) < 1e-6


def test_smith_monotone_in_alpha():
    wi, wo = direction(40), direction(65, 120)
    h = (wi + wo) / np.linalg.norm(wi + wo)
    vals = [smith_g(wi, wo, h, a) for a in np.arange(0.1, 0.91, 0.1)]
    assert all(b <= a for a, b in zip(vals, vals[1:]))


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 89.9), st.floats(0, 360), st.floats(0, 179.9), st.floats(0, 360), st.floats(0.01, 1))
def test_smith_range(t1, p1, t2, p2, alpha):
    wi, wo = direction(t1, p1), direction(t2, p2)
    s = wi + wo
    h = s / np.linalg.norm(s) if np.linalg.norm(s) > 1e-9 else np.array([0, 0, 1.0])
    assert 0.0 <= smith_g(wi, wo, h, alpha) <= 1.0


# -------------------------------------------------------------- materials


def test_material_validation(ior_db):
    with pytest.raises(ValueError):
        MaterialSpec("diffuse", diffuse_reflectance=0.9)
    with pytest.raises(ValueError):
        MaterialSpec("conductor", ior_db["conductor"]["gold"], alpha=0.2)
    with pytest.raises(ValueError):
        MaterialSpec("rough_conductor", ior_db["conductor"]["gold"])
    with pytest.raises(ValueError):
        MaterialSpec("plastic", ior_db["plastic"]["acrylic"])
    with pytest.raises(ValueError):
        MaterialSpec("dielectric", ior_db["conductor"]["gold"])
    with pytest.raises(ValueError):
        MaterialSpec("velvet")


def test_diffuse_eval(make_material):
    mat = make_material("diffuse", reflectance=0.5)
    for wi, wo in [(direction(10), direction(70, 30)), (direction(80, 90), direction(5))]:
        assert np.allclose(bsdf_eval(mat, wi, wo), 0.5 / math.pi, rtol=1e-15)


def test_smooth_conductor_eval_zero(make_material):
    mat = make_material("conductor")
    rng = np.random.default_rng(0)
    for _ in range(50):
        wi = direction(rng.uniform(0, 89), rng.uniform(0, 360))
        wo = direction(rng.uniform(0, 89), rng.uniform(0, 360))
        assert np.all(bsdf_eval(mat, wi, wo, 550.0) == 0.0)


def test_conductor_has_no_transmission(make_material):
    mat = make_material("rough_conductor")
    assert np.all(bsdf_eval(mat, direction(20), direction(160), 550) == 0)
    rng = RandomStream(12)
    for _ in range(2000):
        s = bsdf_sample(mat, direction(70), rng, 550)
        assert not s.is_transmission
        assert s.wo[2] > 0 or not s.weight.any()


def test_eval_rejects_non_unit(make_material):
    with pytest.raises(ValueError):
        bsdf_eval(make_material("diffuse"), [0, 0, 2], [0, 0, 1])


@pytest.mark.parametrize("family", ["rough_conductor", "diffuse"])
def test_reciprocity(make_material, family):
    mat = make_material(family, alpha=0.3)
    rng = np.random.default_rng(42)
    for _ in range(1000):
        wi = direction(np.degrees(np.arccos(rng.uniform(0.01, 1))), rng.uniform(0, 360))
        wo = direction(np.degrees(np.arccos(rng.uniform(0.01, 1))), rng.uniform(0, 360))
        a = bsdf_eval(mat, wi, wo, 600.0)
        b = bsdf_eval(mat, wo, wi, 600.0)
        assert np.allclose(a, b, rtol=1e-9, atol=0)


def test_sample_smooth_conductor_mirror(make_material):
    mat = make_material("conductor")
    wi = direction(45, 30)
    s = bsdf_sample(mat, wi, RandomStream(1), 620.0)
    assert s.is_delta and not s.is_transmission
    assert np.allclose(s.wo, [-wi[0], -wi[1], wi[2]], atol=1e-15)
    ior = ior_at(mat.ior, 620.0)
    assert np.allclose(s.weight, fresnel_conductor(wi[2], ior))


def test_sample_smooth_dielectric_reflect_fraction(ior_db):
    glass = IorTable("g", "dielectric", [589.29], [1.5], [0.0])
    mat = MaterialSpec("dielectric", glass)
    rng = RandomStream(5)
    n = 100_000
    refl = sum(not bsdf_sample(mat, [0, 0, 1.0], rng).is_transmission for _ in range(n))
    assert abs(refl / n - 0.04) < 0.003


def test_dielectric_transmitted_fraction_is_one_minus_f(ior_db):
    mat = MaterialSpec("dielectric", ior_db["dielectric"]["water"])
    wi = direction(60)
    f = fresnel_dielectric(wi[2], 1.0, mat.ior.representative().eta)
    _, reflected = directional_albedo(mat, wi, 200_000, RandomStream(9))
    frac_t = 1 - reflected / 200_000
    sigma = math.sqrt(f * (1 - f) / 200_000)
    assert abs(frac_t - (1 - f)) < 5 * sigma


def test_smooth_dielectric_refraction_weight(ior_db):
    mat = MaterialSpec("dielectric", ior_db["dielectric"]["bk7_glass"])
    eta = mat.ior.representative().eta
    rng = RandomStream(2)
    for _ in range(200):
        s = bsdf_sample(mat, direction(30), rng)
        if s.is_transmission:
            assert s.wo[2] < 0
            assert np.allclose(s.weight, 1 / eta**2)
            assert np.allclose(s.wo, snell_refract(direction(30), 1.0, eta))
        else:
            assert np.allclose(s.weight, 1.0)
    # from inside the medium the scale inverts and TIR appears
    s = bsdf_sample(mat, -direction(60), rng)
    assert not s.is_transmission and s.wo[2] < 0


def test_sample_diffuse(make_material):
    mat = make_material("diffuse", reflectance=0.37)
    rng = RandomStream(3)
    for _ in range(2000):
        s = bsdf_sample(mat, direction(35), rng)
        assert s.wo[2] > 0
        assert np.all(s.weight == 0.37)
        assert math.isclose(s.pdf, s.wo[2] / math.pi)


def test_pdf_diffuse(make_material):
    mat = make_material("diffuse")
    wo = direction(60, 10)
    assert math.isclose(bsdf_pdf(mat, direction(10), wo), wo[2] / math.pi)


def test_pdf_smooth_dielectric_zero(make_material):
    mat = make_material("dielectric")
    assert bsdf_pdf(mat, direction(10), direction(10, 180)) == 0.0
    assert bsdf_pdf(mat, direction(10), -direction(10)) == 0.0


@pytest.mark.parametrize("theta", [0, 30, 60])
def test_pdf_integrates_to_one(make_material, theta):
    mat = make_material("rough_conductor", alpha=0.3)
    total = pdf_integral(*mat.kernel_args, tuple(direction(theta)), 550.0, 2_000_000, 3)
    assert abs(total - 1.0) < 0.01


@pytest.mark.parametrize(
    "family,alpha,theta",
    [("rough_conductor", 0.3, 30), ("rough_dielectric", 0.4, 45), ("rough_plastic", 0.5, 20)],
)
def test_sample_eval_pdf_consistency(make_material, family, alpha, theta):
    mat = make_material(family, alpha=alpha)
    wi = direction(theta, 40)
    sampled, _ = directional_albedo(mat, wi, 400_000, RandomStream(17), 550.0)
    integral = projected_bsdf_integral(*mat.kernel_args, tuple(wi), 550.0, 4_000_000, 11)
    assert np.allclose(sampled, integral, rtol=0.02)


@pytest.mark.parametrize("family", ["rough_conductor", "rough_dielectric", "rough_plastic"])
def test_sample_pdf_matches_pdf_function(make_material, family):
    mat = make_material(family, alpha=0.35)
    rng = RandomStream(8)
    wi = direction(50, 10)
    checked = 0
    for _ in range(500):
        s = bsdf_sample(mat, wi, rng, 500.0)
        if not s.weight.any():
            continue
        assert math.isclose(s.pdf, bsdf_pdf(mat, wi, s.wo, 500.0), rel_tol=1e-9)
        f = bsdf_eval(mat, wi, s.wo, 500.0)
        assert np.allclose(s.weight, f * abs(s.wo[2]) / s.pdf, rtol=1e-9)
        assert s.is_transmission == (s.wo[2] < 0)
        checked += 1
    assert checked > 300


def test_rough_dielectric_from_inside(make_material):
    mat = make_material("rough_dielectric", alpha=0.3)
    wi = -direction(20, 70)
    rng = RandomStream(4)
    for _ in range(300):
        s = bsdf_sample(mat, wi, rng, 500.0)
        if not s.weight.any():
            continue
        assert math.isclose(s.pdf, bsdf_pdf(mat, wi, s.wo, 500.0), rel_tol=1e-9)
        f = bsdf_eval(mat, wi, s.wo, 500.0)
        assert np.allclose(s.weight, f * abs(s.wo[2]) / s.pdf, rtol=1e-9)


@pytest.mark.parametrize("family", FAMILIES)
def test_tangent_incidence_is_zero(make_material, family):
    mat = make_material(family)
    wi = [1.0, 0.0, 0.0]
    assert not bsdf_eval(mat, wi, direction(30), 550).any()
    assert bsdf_pdf(mat, wi, direction(30), 550) == 0.0
    s = bsdf_sample(mat, wi, RandomStream(0), 550)
    assert not s.weight.any() and s.pdf > 0


def test_plastic_pigment_tints_diffuse_only(make_material):
    mat = make_material("plastic", pigment=(0.8, 0.4, 0.1))
    f = bsdf_eval(mat, direction(20), direction(50, 90))
    assert f[0] > f[1] > f[2] > 0
    rng = RandomStream(6)
    for _ in range(500):
        s = bsdf_sample(mat, direction(20), rng)
        if s.is_delta:
            assert np.allclose(s.weight, 1.0)


def test_internal_diffuse_reflectance_identity():
    # 1 - Fdr_ext = eta^2 (1 - Fdr_int), checked with an independent quadrature
    for eta in (1.33, 1.5, 2.4):
        ext = float(mpmath.quad(lambda mu: 2 * mu * fresnel_dielectric(float(mu), 1.0, eta), [0, 1]))
        assert math.isclose(1 - ext, eta**2 * (1 - m.internal_diffuse_reflectance(eta)), rel_tol=1e-6)


@pytest.mark.parametrize("family", FAMILIES)
def test_furnace_quick(make_material, family):
    mat = make_material(family, alpha=0.3, reflectance=0.85, pigment=(1.0, 1.0, 1.0))
    for theta in (0, 45, 80):
        albedo, _ = directional_albedo(mat, direction(theta), 20_000, RandomStream(1, theta), 550.0)
        assert albedo.max() <= 1.02
