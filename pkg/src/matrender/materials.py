"""Scattering models for the seven material families.

All directions live in a local shading frame whose normal is +z. The
numba kernels (underscore-prefixed or taking packed parameter arrays) are
shared with the integrator; the public wrappers accept numpy vectors and
``MaterialSpec`` objects.

Path tracing runs from the camera, so ``wi`` is the direction towards the
viewer and ``wo`` the sampled direction light arrives from. Refraction
weights therefore carry the radiance scale ``(eta_wi / eta_wo)**2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from numba import njit
from scipy.integrate import quad

from . import vecmath as vm
from .rng import RandomStream, next_float
from .spectra import ComplexIor, IorTable, interp_table

INV_PI = 1.0 / math.pi

FAMILIES = (
    "diffuse",
    "conductor",
    "dielectric",
    "plastic",
    "rough_conductor",
    "rough_dielectric",
    "rough_plastic",
)
DIFFUSE, CONDUCTOR, DIELECTRIC, PLASTIC, ROUGH_CONDUCTOR, ROUGH_DIELECTRIC, ROUGH_PLASTIC = range(7)
ROUGH_FAMILIES = ("rough_conductor", "rough_dielectric", "rough_plastic")
IOR_FAMILY = {
    "conductor": "conductor",
    "rough_conductor": "conductor",
    "dielectric": "dielectric",
    "rough_dielectric": "dielectric",
    "plastic": "plastic",
    "rough_plastic": "plastic",
}

DIFFUSE_RANGE = (0.15, 0.85)
ALPHA_RANGE = (0.1, 0.5)
PIGMENT_RANGE = (0.2, 0.8)

# packed parameter layout shared with the integrator
P_FAMILY, P_ALPHA, P_REFL, P_PIG_R, P_PIG_G, P_PIG_B, P_ETA, P_FDR = range(8)
N_PARAMS = 8

_jit = njit(cache=True, nogil=True)


# ---------------------------------------------------------------- Fresnel


@_jit
def fresnel_dielectric(cos_theta_i, eta_i, eta_t):
    """Unpolarised Fresnel reflectance; exactly 1 under total internal reflection."""
    ci = min(max(cos_theta_i, 0.0), 1.0)
    sin_t = eta_i / eta_t * math.sqrt(max(0.0, 1.0 - ci * ci))
    if sin_t >= 1.0:
        return 1.0
    ct = math.sqrt(max(0.0, 1.0 - sin_t * sin_t))
    r_par = (eta_t * ci - eta_i * ct) / (eta_t * ci + eta_i * ct)
    r_perp = (eta_i * ci - eta_t * ct) / (eta_i * ci + eta_t * ct)
    return 0.5 * (r_par * r_par + r_perp * r_perp)


@_jit
def _fresnel_conductor(cos_theta_i, eta, k):
    c = min(max(cos_theta_i, 0.0), 1.0)
    c2 = c * c
    s2 = 1.0 - c2
    t0 = eta * eta - k * k - s2
    a2b2 = math.sqrt(t0 * t0 + 4.0 * eta * eta * k * k)
    a = math.sqrt(max(0.0, 0.5 * (a2b2 + t0)))
    num_s = a2b2 - 2.0 * a * c + c2
    den_s = a2b2 + 2.0 * a * c + c2
    if den_s <= 0.0:
        return 1.0
    r_s = num_s / den_s
    num_p = c2 * a2b2 - 2.0 * a * c * s2 + s2 * s2
    den_p = c2 * a2b2 + 2.0 * a * c * s2 + s2 * s2
    r_p = r_s if den_p <= 0.0 else r_s * num_p / den_p
    return min(max(0.5 * (r_s + r_p), 0.0), 1.0)


def fresnel_conductor(cos_theta_i: float, ior: ComplexIor) -> float:
    """Reflectance of an air/conductor interface with complex index eta + ik."""
    return _fresnel_conductor(float(cos_theta_i), float(ior.eta), float(ior.k))


# ------------------------------------------------------------- refraction


@_jit
def _refract(w, n, eta_ratio):
    # w and n on the same side; eta_ratio = eta_incident / eta_transmitted
    c = vm.dot(w, n)
    sin2_t = eta_ratio * eta_ratio * max(0.0, 1.0 - c * c)
    if sin2_t >= 1.0:
        return False, (0.0, 0.0, 0.0)
    ct = math.sqrt(1.0 - sin2_t)
    f = eta_ratio * c - ct
    return True, (
        -eta_ratio * w[0] + f * n[0],
        -eta_ratio * w[1] + f * n[1],
        -eta_ratio * w[2] + f * n[2],
    )


def snell_refract(wi, eta_i: float, eta_t: float):
    """Refracted direction below the surface, or ``None`` on total internal reflection."""
    w = vm.as_tuple(wi)
    if w[2] <= 0:
        raise ValueError("wi must point into the upper hemisphere (wi.z > 0)")
    ok, wt = _refract(w, (0.0, 0.0, 1.0), eta_i / eta_t)
    return np.array(wt) if ok else None


# ------------------------------------------------------------- microfacets


@_jit
def _ggx_d(cos_h, alpha):
    if cos_h <= 0.0:
        return 0.0
    a2 = alpha * alpha
    d = cos_h * cos_h * (a2 - 1.0) + 1.0
    return a2 / (math.pi * d * d)


def ggx_d(wh, alpha: float) -> float:
    """GGX (Trowbridge-Reitz) normal distribution at half vector ``wh``."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    return _ggx_d(vm.as_tuple(wh)[2], float(alpha))


@_jit
def _smith_lambda(cos_v, alpha):
    c2 = cos_v * cos_v
    if c2 >= 1.0:
        return 0.0
    if c2 == 0.0:
        return math.inf
    tan2 = (1.0 - c2) / c2
    return 0.5 * (-1.0 + math.sqrt(1.0 + alpha * alpha * tan2))


@_jit
def _smith_g1(v, h, alpha):
    if vm.dot(v, h) * v[2] <= 0.0:
        return 0.0
    return 1.0 / (1.0 + _smith_lambda(v[2], alpha))


@_jit
def _smith_g(wi, wo, h, alpha):
    return _smith_g1(wi, h, alpha) * _smith_g1(wo, h, alpha)


def smith_g(wi, wo, wh, alpha: float) -> float:
    """Separable Smith shadowing-masking for GGX."""
    return _smith_g(vm.as_tuple(wi), vm.as_tuple(wo), vm.as_tuple(wh), float(alpha))


@_jit
def _sample_vndf(wi, alpha, u1, u2):
    # visible normals of GGX for wi.z > 0 (Heitz 2018)
    vh = vm.normalize((alpha * wi[0], alpha * wi[1], wi[2]))
    lensq = vh[0] * vh[0] + vh[1] * vh[1]
    if lensq > 0.0:
        inv = 1.0 / math.sqrt(lensq)
        t1 = (-vh[1] * inv, vh[0] * inv, 0.0)
    else:
        t1 = (1.0, 0.0, 0.0)
    t2 = vm.cross(vh, t1)
    r = math.sqrt(u1)
    phi = 2.0 * math.pi * u2
    p1 = r * math.cos(phi)
    p2 = r * math.sin(phi)
    s = 0.5 * (1.0 + vh[2])
    p2 = (1.0 - s) * math.sqrt(max(0.0, 1.0 - p1 * p1)) + s * p2
    p3 = math.sqrt(max(0.0, 1.0 - p1 * p1 - p2 * p2))
    nh = (
        p1 * t1[0] + p2 * t2[0] + p3 * vh[0],
        p1 * t1[1] + p2 * t2[1] + p3 * vh[1],
        p1 * t1[2] + p2 * t2[2] + p3 * vh[2],
    )
    return vm.normalize((alpha * nh[0], alpha * nh[1], max(1e-12, nh[2])))


@_jit
def _vndf_pdf(wi, h, alpha):
    # density of h under _sample_vndf, for wi.z > 0
    wh = vm.dot(wi, h)
    if wh <= 0.0 or wi[2] <= 0.0:
        return 0.0
    g1 = 1.0 / (1.0 + _smith_lambda(wi[2], alpha))
    return g1 * wh * _ggx_d(h[2], alpha) / wi[2]


@_jit
def _cosine_hemisphere(u1, u2):
    r = math.sqrt(u1)
    phi = 2.0 * math.pi * u2
    return (r * math.cos(phi), r * math.sin(phi), math.sqrt(max(0.0, 1.0 - u1)))


# ------------------------------------------------------------------- BSDFs

_ZERO3 = (0.0, 0.0, 0.0)


@_jit
def _conductor_ior(lam, eta_tab, k_tab, wavelength):
    return interp_table(lam, eta_tab, wavelength), interp_table(lam, k_tab, wavelength)


@_jit
def _flip(w, s):
    return (w[0], w[1], w[2] * s)


@_jit
def _plastic_diffuse(p, wi_z, wo_z):
    # two-layer diffuse term; wi_z, wo_z > 0
    eta = p[P_ETA]
    fi = fresnel_dielectric(wi_z, 1.0, eta)
    fo = fresnel_dielectric(wo_z, 1.0, eta)
    scale = (1.0 - fi) * (1.0 - fo) * INV_PI / (eta * eta)
    fdr = p[P_FDR]
    r = p[P_PIG_R] / (1.0 - p[P_PIG_R] * fdr)
    g = p[P_PIG_G] / (1.0 - p[P_PIG_G] * fdr)
    b = p[P_PIG_B] / (1.0 - p[P_PIG_B] * fdr)
    return (scale * r, scale * g, scale * b)


@_jit
def _rough_reflection(wi, wo, alpha, f):
    # GGX reflection lobe value for wi.z, wo.z > 0 given Fresnel f
    h = vm.normalize(vm.add(wi, wo))
    d = _ggx_d(h[2], alpha)
    g = _smith_g(wi, wo, h, alpha)
    return f * g * d / (4.0 * wi[2] * wo[2])


@_jit
def _dielectric_indices(p, wi_z):
    if wi_z > 0.0:
        return 1.0, p[P_ETA]
    return p[P_ETA], 1.0


@_jit
def bsdf_eval_kernel(p, lam, eta_tab, k_tab, wi, wo, wavelength):
    fam = int(p[P_FAMILY])
    if wi[2] == 0.0 or wo[2] == 0.0:
        return _ZERO3
    if fam == DIFFUSE:
        if wi[2] < 0.0 or wo[2] < 0.0:
            return _ZERO3
        v = p[P_REFL] * INV_PI
        return (v, v, v)
    if fam == CONDUCTOR or fam == DIELECTRIC:
        return _ZERO3
    if fam == PLASTIC:
        if wi[2] < 0.0 or wo[2] < 0.0:
            return _ZERO3
        return _plastic_diffuse(p, wi[2], wo[2])
    alpha = p[P_ALPHA]
    if fam == ROUGH_CONDUCTOR:
        if wi[2] < 0.0 or wo[2] < 0.0:
            return _ZERO3
        eta, k = _conductor_ior(lam, eta_tab, k_tab, wavelength)
        h = vm.normalize(vm.add(wi, wo))
        v = _rough_reflection(wi, wo, alpha, _fresnel_conductor(vm.dot(wi, h), eta, k))
        return (v, v, v)
    if fam == ROUGH_PLASTIC:
        if wi[2] < 0.0 or wo[2] < 0.0:
            return _ZERO3
        h = vm.normalize(vm.add(wi, wo))
        spec = _rough_reflection(wi, wo, alpha, fresnel_dielectric(vm.dot(wi, h), 1.0, p[P_ETA]))
        diff = _plastic_diffuse(p, wi[2], wo[2])
        return (spec + diff[0], spec + diff[1], spec + diff[2])
    # rough dielectric: mirror into the wi-side frame
    s = 1.0 if wi[2] > 0.0 else -1.0
    ei, et = _dielectric_indices(p, wi[2])
    a = _flip(wi, s)
    b = _flip(wo, s)
    if b[2] > 0.0:
        h = vm.normalize(vm.add(a, b))
        f = fresnel_dielectric(vm.dot(a, h), ei, et)
        v = _rough_reflection(a, b, alpha, f)
        return (v, v, v)
    h = vm.normalize((-(ei * a[0] + et * b[0]), -(ei * a[1] + et * b[1]), -(ei * a[2] + et * b[2])))
    if h[2] < 0.0:
        h = vm.neg(h)
    ah = vm.dot(a, h)
    bh = vm.dot(b, h)
    if ah <= 0.0 or bh >= 0.0:
        return _ZERO3
    f = fresnel_dielectric(ah, ei, et)
    denom = ei * ah + et * bh
    denom *= denom
    if denom <= 0.0:
        return _ZERO3
    d = _ggx_d(h[2], alpha)
    g = _smith_g(a, b, h, alpha)
    v = abs(ah * bh) / (a[2] * abs(b[2])) * ei * ei * (1.0 - f) * g * d / denom
    return (v, v, v)


@_jit
def _reflection_pdf(wi, wo, alpha):
    h = vm.add(wi, wo)
    if h[2] <= 0.0:
        return 0.0
    h = vm.normalize(h)
    wih = vm.dot(wi, h)
    if wih <= 0.0:
        return 0.0
    return _vndf_pdf(wi, h, alpha) / (4.0 * wih)


@_jit
def bsdf_pdf_kernel(p, lam, eta_tab, k_tab, wi, wo, wavelength):
    fam = int(p[P_FAMILY])
    if wi[2] == 0.0 or wo[2] == 0.0:
        return 0.0
    if fam == CONDUCTOR or fam == DIELECTRIC:
        return 0.0
    if fam == DIFFUSE:
        if wi[2] < 0.0 or wo[2] < 0.0:
            return 0.0
        return wo[2] * INV_PI
    if fam == PLASTIC:
        if wi[2] < 0.0 or wo[2] < 0.0:
            return 0.0
        fi = fresnel_dielectric(wi[2], 1.0, p[P_ETA])
        return (1.0 - fi) * wo[2] * INV_PI
    alpha = p[P_ALPHA]
    # reflection lobes keep their density below the horizon: the sampler
    # produces those directions (with zero weight), so the pdf stays normalised
    if fam == ROUGH_CONDUCTOR:
        if wi[2] < 0.0:
            return 0.0
        return _reflection_pdf(wi, wo, alpha)
    if fam == ROUGH_PLASTIC:
        if wi[2] < 0.0:
            return 0.0
        fi = fresnel_dielectric(wi[2], 1.0, p[P_ETA])
        diff = (1.0 - fi) * wo[2] * INV_PI if wo[2] > 0.0 else 0.0
        return fi * _reflection_pdf(wi, wo, alpha) + diff
    s = 1.0 if wi[2] > 0.0 else -1.0
    ei, et = _dielectric_indices(p, wi[2])
    a = _flip(wi, s)
    b = _flip(wo, s)
    if b[2] > 0.0:
        h = vm.normalize(vm.add(a, b))
        ah = vm.dot(a, h)
        f = fresnel_dielectric(ah, ei, et)
        return f * _vndf_pdf(a, h, alpha) / (4.0 * ah)
    h = vm.normalize((-(ei * a[0] + et * b[0]), -(ei * a[1] + et * b[1]), -(ei * a[2] + et * b[2])))
    if h[2] < 0.0:
        h = vm.neg(h)
    ah = vm.dot(a, h)
    bh = vm.dot(b, h)
    if ah <= 0.0 or bh >= 0.0:
        return 0.0
    f = fresnel_dielectric(ah, ei, et)
    denom = ei * ah + et * bh
    denom *= denom
    if denom <= 0.0:
        return 0.0
    return (1.0 - f) * _vndf_pdf(a, h, alpha) * et * et * abs(bh) / denom


@_jit
def _zero_sample():
    return (0.0, 0.0, 1.0), _ZERO3, 1.0, False, False


@_jit
def bsdf_sample_kernel(p, lam, eta_tab, k_tab, wi, wavelength, state):
    """Returns (wo, rgb weight, pdf, is_delta, is_transmission)."""
    fam = int(p[P_FAMILY])
    if wi[2] == 0.0:
        return _zero_sample()
    opaque = fam != DIELECTRIC and fam != ROUGH_DIELECTRIC
    if opaque and wi[2] < 0.0:
        return _zero_sample()
    u1 = next_float(state)
    u2 = next_float(state)
    u3 = next_float(state)
    mirror = (-wi[0], -wi[1], wi[2])

    if fam == DIFFUSE:
        wo = _cosine_hemisphere(u1, u2)
        if wo[2] <= 0.0:
            return _zero_sample()
        v = p[P_REFL]
        return wo, (v, v, v), wo[2] * INV_PI, False, False

    if fam == CONDUCTOR:
        eta, k = _conductor_ior(lam, eta_tab, k_tab, wavelength)
        f = _fresnel_conductor(wi[2], eta, k)
        return mirror, (f, f, f), 1.0, True, False

    if fam == DIELECTRIC:
        ei, et = _dielectric_indices(p, wi[2])
        s = 1.0 if wi[2] > 0.0 else -1.0
        f = fresnel_dielectric(abs(wi[2]), ei, et)
        if u1 < f:
            return mirror, (1.0, 1.0, 1.0), 1.0, True, False
        ok, wt = _refract(wi, (0.0, 0.0, s), ei / et)
        if not ok:
            return mirror, (1.0, 1.0, 1.0), 1.0, True, False
        scale = (ei / et) * (ei / et)
        return wt, (scale, scale, scale), 1.0, True, True

    if fam == PLASTIC:
        fi = fresnel_dielectric(wi[2], 1.0, p[P_ETA])
        if u1 < fi:
            return mirror, (1.0, 1.0, 1.0), 1.0, True, False
        wo = _cosine_hemisphere(u2, u3)
        if wo[2] <= 0.0:
            return _zero_sample()
        pdf = (1.0 - fi) * wo[2] * INV_PI
        f = _plastic_diffuse(p, wi[2], wo[2])
        c = wo[2] / pdf
        return wo, (f[0] * c, f[1] * c, f[2] * c), pdf, False, False

    alpha = p[P_ALPHA]
    if fam == ROUGH_CONDUCTOR:
        h = _sample_vndf(wi, alpha, u1, u2)
        wo = vm.reflect(wi, h)
        wih = vm.dot(wi, h)
        pdf = _vndf_pdf(wi, h, alpha) / (4.0 * wih)
        if wo[2] <= 0.0 or not pdf > 0.0:
            return wo, _ZERO3, pdf if pdf > 0.0 else 1.0, False, False
        eta, k = _conductor_ior(lam, eta_tab, k_tab, wavelength)
        v = _fresnel_conductor(wih, eta, k) * _smith_g1(wo, h, alpha)
        return wo, (v, v, v), pdf, False, False

    if fam == ROUGH_PLASTIC:
        fi = fresnel_dielectric(wi[2], 1.0, p[P_ETA])
        if u3 < fi:
            h = _sample_vndf(wi, alpha, u1, u2)
            wo = vm.reflect(wi, h)
        else:
            wo = _cosine_hemisphere(u1, u2)
        pdf = bsdf_pdf_kernel(p, lam, eta_tab, k_tab, wi, wo, wavelength)
        if wo[2] <= 0.0 or not pdf > 0.0:
            return wo, _ZERO3, pdf if pdf > 0.0 else 1.0, False, False
        f = bsdf_eval_kernel(p, lam, eta_tab, k_tab, wi, wo, wavelength)
        c = wo[2] / pdf
        return wo, (f[0] * c, f[1] * c, f[2] * c), pdf, False, False

    # rough dielectric
    s = 1.0 if wi[2] > 0.0 else -1.0
    ei, et = _dielectric_indices(p, wi[2])
    a = _flip(wi, s)
    h = _sample_vndf(a, alpha, u1, u2)
    ah = vm.dot(a, h)
    f = fresnel_dielectric(ah, ei, et)
    if u3 < f:
        b = vm.reflect(a, h)
        if b[2] <= 0.0:
            return _zero_sample()
        v = _smith_g1(b, h, alpha)
        pdf = f * _vndf_pdf(a, h, alpha) / (4.0 * ah)
        return _flip(b, s), (v, v, v), pdf, False, False
    ok, b = _refract(a, h, ei / et)
    if not ok or b[2] >= 0.0:
        return _zero_sample()
    bh = vm.dot(b, h)
    denom = ei * ah + et * bh
    denom *= denom
    pdf = (1.0 - f) * _vndf_pdf(a, h, alpha) * et * et * abs(bh) / denom
    if not pdf > 0.0:
        return _zero_sample()
    v = (ei / et) * (ei / et) * _smith_g1(b, h, alpha)
    return _flip(b, s), (v, v, v), pdf, False, True


# ---------------------------------------------------------- material specs


def internal_diffuse_reflectance(eta: float) -> float:
    """Cosine-weighted hemispherical average of Fresnel reflectance from inside
    a medium of index ``eta`` towards air."""
    val, _ = quad(lambda mu: 2.0 * mu * fresnel_dielectric(mu, eta, 1.0), 0.0, 1.0,
                  points=[math.sqrt(max(0.0, 1.0 - 1.0 / eta**2))] if eta > 1 else None,
                  epsabs=1e-12, epsrel=1e-10, limit=200)
    return val


@dataclass(frozen=True)
class MaterialSpec:
    family: str
    ior: IorTable | None = None
    alpha: float | None = None
    diffuse_reflectance: float | None = None
    pigment_albedo: tuple[float, float, float] | None = None

    def __post_init__(self):
        fam = self.family
        if fam not in FAMILIES:
            raise ValueError(f"unknown material family {fam!r}")
        if fam == "diffuse":
            if self.ior is not None:
                raise ValueError("diffuse materials take no IOR table")
            r = self.diffuse_reflectance
            if r is None or not (DIFFUSE_RANGE[0] <= r <= DIFFUSE_RANGE[1]):
                raise ValueError("diffuse_reflectance must lie in [0.15, 0.85]")
        else:
            if self.ior is None:
                raise ValueError(f"{fam} needs an IOR table")
            if self.ior.family != IOR_FAMILY[fam]:
                raise ValueError(f"{fam} needs a {IOR_FAMILY[fam]} IOR table, got {self.ior.family}")
            if self.diffuse_reflectance is not None:
                raise ValueError("diffuse_reflectance only applies to diffuse materials")
        if fam in ROUGH_FAMILIES:
            if self.alpha is None or not (0.0 < self.alpha <= 1.0):
                raise ValueError("rough families need alpha in (0, 1]")
        elif self.alpha is not None:
            raise ValueError("alpha only applies to rough families")
        if fam in ("plastic", "rough_plastic"):
            pig = self.pigment_albedo
            if pig is None or len(pig) != 3 or not all(0.0 <= c <= 1.0 for c in pig):
                raise ValueError("plastics need pigment_albedo in [0, 1]^3")
            object.__setattr__(self, "pigment_albedo", tuple(float(c) for c in pig))
        elif self.pigment_albedo is not None:
            raise ValueError("pigment_albedo only applies to plastics")

    @property
    def code(self) -> int:
        return FAMILIES.index(self.family)

    @cached_property
    def kernel_args(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """(params, wavelengths, eta, k) arrays consumed by the kernels."""
        p = np.zeros(N_PARAMS)
        p[P_FAMILY] = self.code
        p[P_ALPHA] = self.alpha or 0.0
        p[P_REFL] = self.diffuse_reflectance or 0.0
        if self.pigment_albedo is not None:
            p[P_PIG_R:P_PIG_B + 1] = self.pigment_albedo
        if self.ior is None:
            lam, eta, k = np.array([550.0]), np.array([1.0]), np.array([0.0])
        else:
            lam = np.array(self.ior.wavelengths)
            eta = np.array(self.ior.eta)
            k = np.array(self.ior.k)
            if self.ior.family != "conductor":
                p[P_ETA] = self.ior.representative().eta
                if self.family in ("plastic", "rough_plastic"):
                    p[P_FDR] = internal_diffuse_reflectance(p[P_ETA])
        return p, lam, eta, k

    @property
    def spectral(self) -> bool:
        """True when the response varies with wavelength (conductors only)."""
        return self.family in ("conductor", "rough_conductor")

    def to_dict(self) -> dict:
        d = {"family": self.family}
        if self.ior is not None:
            d["material_id"] = self.ior.material_id
            d["ior_family"] = self.ior.family
        if self.alpha is not None:
            d["alpha"] = self.alpha
        if self.diffuse_reflectance is not None:
            d["diffuse_reflectance"] = self.diffuse_reflectance
        if self.pigment_albedo is not None:
            d["pigment_albedo"] = list(self.pigment_albedo)
        return d


@dataclass(frozen=True)
class BsdfSample:
    wo: np.ndarray
    weight: np.ndarray
    pdf: float
    is_delta: bool
    is_transmission: bool


def _unit(w, name: str) -> tuple:
    t = vm.as_tuple(w)
    if abs(math.sqrt(t[0] ** 2 + t[1] ** 2 + t[2] ** 2) - 1.0) > 1e-6:
        raise ValueError(f"{name} must be a unit vector")
    return t


def bsdf_eval(mat: MaterialSpec, wi, wo, wavelength_nm: float = 589.29) -> np.ndarray:
    """BSDF value per rgb channel; achromatic families return equal channels."""
    a, b = _unit(wi, "wi"), _unit(wo, "wo")
    return np.array(bsdf_eval_kernel(*mat.kernel_args, a, b, float(wavelength_nm)))


def bsdf_pdf(mat: MaterialSpec, wi, wo, wavelength_nm: float = 589.29) -> float:
    a, b = _unit(wi, "wi"), _unit(wo, "wo")
    return bsdf_pdf_kernel(*mat.kernel_args, a, b, float(wavelength_nm))


def bsdf_sample(mat: MaterialSpec, wi, rng: RandomStream, wavelength_nm: float = 589.29) -> BsdfSample:
    a = _unit(wi, "wi")
    wo, w, pdf, delta, trans = bsdf_sample_kernel(*mat.kernel_args, a, float(wavelength_nm), rng.state)
    return BsdfSample(np.array(wo), np.array(w), pdf, bool(delta), bool(trans))


@_jit
def _albedo_kernel(p, lam, eta_tab, k_tab, wi, wavelength, n, state):
    acc = np.zeros(3)
    reflected = 0
    for _ in range(n):
        wo, w, pdf, delta, trans = bsdf_sample_kernel(p, lam, eta_tab, k_tab, wi, wavelength, state)
        acc[0] += w[0]
        acc[1] += w[1]
        acc[2] += w[2]
        if w[0] + w[1] + w[2] > 0.0 and not trans:
            reflected += 1
    return acc / n, reflected


def directional_albedo(mat: MaterialSpec, wi, n: int, rng: RandomStream,
                       wavelength_nm: float = 589.29) -> tuple[np.ndarray, int]:
    """Mean sampled weight over ``n`` draws, and how many draws reflected."""
    a = _unit(wi, "wi")
    return _albedo_kernel(*mat.kernel_args, a, float(wavelength_nm), int(n), rng.state)
