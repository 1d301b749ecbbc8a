"""Spectral data: measured complex IOR tables, wavelength sampling and colour.

IOR tables are CSV files with ``wavelength_nm, eta, k`` rows and ``#``
comments. A material database is a directory laid out as
``<root>/<family>/<material_id>.csv`` with family one of ``conductor``,
``dielectric`` or ``plastic``. A small database ships in ``data/ior``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from numba import njit
from scipy.integrate import trapezoid

from .rng import RandomStream, next_float

LAMBDA_MIN = 380.0
LAMBDA_MAX = 780.0
REPRESENTATIVE_WAVELENGTH = 589.29

IOR_FAMILIES = ("conductor", "dielectric", "plastic")

# Bradford cone response matrix and the two white points it adapts between.
_BRADFORD = np.array(
    [[0.8951, 0.2664, -0.1614], [-0.7502, 1.7135, 0.0367], [0.0389, -0.0685, 1.0296]]
)
_WHITE_E = np.array([1.0, 1.0, 1.0])
_WHITE_D65 = np.array([0.95047, 1.0, 1.08883])
_XYZ_TO_SRGB = np.array(
    [[3.2406, -1.5372, -0.4986], [-0.9689, 1.8758, 0.0415], [0.0557, -0.2040, 1.0570]]
)


class IorFormatError(ValueError):
    pass


@dataclass(frozen=True)
class ComplexIor:
    eta: float
    k: float = 0.0

    def __post_init__(self):
        if not (self.eta > 0 and math.isfinite(self.eta)):
            raise ValueError(f"eta must be positive and finite, got {self.eta}")
        if not (self.k >= 0 and math.isfinite(self.k)):
            raise ValueError(f"k must be non-negative and finite, got {self.k}")

    @property
    def absorbing(self) -> bool:
        return self.k > 0


@dataclass(frozen=True)
class IorTable:
    """Wavelength-sorted (eta, k) samples for one material."""

    material_id: str
    family: str
    wavelengths: np.ndarray
    eta: np.ndarray
    k: np.ndarray
    source: str = field(default="", compare=False)

    def __post_init__(self):
        if self.family not in IOR_FAMILIES:
            raise IorFormatError(f"unknown family {self.family!r}")
        lam = np.asarray(self.wavelengths, dtype=np.float64)
        eta = np.asarray(self.eta, dtype=np.float64)
        k = np.asarray(self.k, dtype=np.float64)
        if not (lam.ndim == eta.ndim == k.ndim == 1 and len(lam) == len(eta) == len(k)):
            raise IorFormatError("wavelength, eta and k columns must have equal length")
        if len(lam) == 0:
            raise IorFormatError("empty IOR table")
        if np.any(np.diff(lam) <= 0):
            raise IorFormatError("unsorted wavelengths")
        if lam[0] < LAMBDA_MIN or lam[-1] > LAMBDA_MAX:
            raise IorFormatError(
                f"wavelengths must lie in [{LAMBDA_MIN:g}, {LAMBDA_MAX:g}] nm"
            )
        if np.any(~np.isfinite(eta)) or np.any(eta <= 0):
            raise IorFormatError("eta must be positive")
        if np.any(~np.isfinite(k)) or np.any(k < 0):
            raise IorFormatError("negative k")
        if self.family == "conductor":
            if len(lam) < 2 or lam[0] != LAMBDA_MIN or lam[-1] != LAMBDA_MAX:
                raise IorFormatError("conductor tables must cover 380-780 nm")
        for name, arr in (("wavelengths", lam), ("eta", eta), ("k", k)):
            arr = arr.copy()
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    def __len__(self) -> int:
        return len(self.wavelengths)

    @property
    def samples(self) -> list[tuple[float, ComplexIor]]:
        return [
            (float(w), ComplexIor(float(e), float(kk)))
            for w, e, kk in zip(self.wavelengths, self.eta, self.k)
        ]

    def representative(self) -> ComplexIor:
        """IOR at 589.29 nm, the single value used for dielectrics and plastics."""
        if len(self) == 1:
            return self.samples[0][1]
        return ior_at(self, REPRESENTATIVE_WAVELENGTH)


@dataclass(frozen=True)
class SpectralPower:
    wavelengths: np.ndarray
    power: np.ndarray

    def __post_init__(self):
        lam = np.asarray(self.wavelengths, dtype=np.float64)
        p = np.asarray(self.power, dtype=np.float64)
        if lam.shape != p.shape or lam.ndim != 1:
            raise ValueError("wavelengths and power must be 1-D arrays of equal length")
        if len(lam) and (lam.min() < LAMBDA_MIN or lam.max() > LAMBDA_MAX):
            raise ValueError("wavelengths must lie in [380, 780] nm")
        if np.any(np.diff(lam) <= 0):
            raise ValueError("wavelengths must be strictly increasing")
        if np.any(p < 0):
            raise ValueError("spectral power must be non-negative")
        object.__setattr__(self, "wavelengths", lam)
        object.__setattr__(self, "power", p)

    @classmethod
    def from_pairs(cls, values: Iterable[tuple[float, float]]) -> "SpectralPower":
        values = sorted(values)
        if not values:
            return cls(np.zeros(0), np.zeros(0))
        lam, p = zip(*values)
        return cls(np.array(lam), np.array(p))


def _infer_family(path: Path, k: np.ndarray) -> str:
    if path.parent.name in IOR_FAMILIES:
        return path.parent.name
    return "conductor" if np.any(k > 0) else "dielectric"


def load_ior_table(path, family: str | None = None) -> IorTable:
    """Parse an IOR CSV file into a validated table.

    The family comes from ``family`` when given, otherwise from the parent
    directory name, otherwise from the data (any absorption means conductor).
    """
    path = Path(path)
    rows = []
    comments = []
    with open(path, newline="") as fh:
        for lineno, line in enumerate(fh, 1):
            text = line.strip()
            if not text:
                continue
            if text.startswith("#"):
                comments.append(text.lstrip("# "))
                continue
            fields = next(csv.reader([text]))
            if len(fields) != 3:
                raise IorFormatError(f"{path}:{lineno}: expected 3 columns, got {len(fields)}")
            try:
                rows.append(tuple(float(f) for f in fields))
            except ValueError as exc:
                raise IorFormatError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise IorFormatError(f"{path}: no data rows")
    data = np.array(rows, dtype=np.float64)
    fam = family or _infer_family(path, data[:, 2])
    return IorTable(
        material_id=path.stem,
        family=fam,
        wavelengths=data[:, 0],
        eta=data[:, 1],
        k=data[:, 2],
        source=comments[0] if comments else "",
    )


def bundled_ior_dir() -> Path:
    return Path(str(resources.files("matrender") / "data" / "ior"))


def load_material_db(root=None) -> dict[str, list[IorTable]]:
    """Load every ``<family>/<id>.csv`` table under ``root`` (bundled db by default)."""
    root = Path(root) if root is not None else bundled_ior_dir()
    db: dict[str, list[IorTable]] = {}
    for fam in IOR_FAMILIES:
        files = sorted((root / fam).glob("*.csv"))
        db[fam] = [load_ior_table(f, family=fam) for f in files]
    return db


@njit(cache=True, nogil=True)
def interp_table(xs, ys, x):
    # exact at nodes; constant for single-sample tables
    n = xs.shape[0]
    if n == 1 or x <= xs[0]:
        return ys[0]
    if x >= xs[n - 1]:
        return ys[n - 1]
    hi = np.searchsorted(xs, x)
    if xs[hi] == x:
        return ys[hi]
    lo = hi - 1
    t = (x - xs[lo]) / (xs[hi] - xs[lo])
    return ys[lo] + t * (ys[hi] - ys[lo])


def ior_at(table: IorTable, wavelength_nm: float) -> ComplexIor:
    if not (LAMBDA_MIN <= wavelength_nm <= LAMBDA_MAX):
        raise ValueError(f"wavelength {wavelength_nm} nm outside [380, 780]")
    eta = interp_table(table.wavelengths, table.eta, float(wavelength_nm))
    k = interp_table(table.wavelengths, table.k, float(wavelength_nm))
    return ComplexIor(float(eta), float(k))


@njit(cache=True, nogil=True)
def stratified_wavelength(index, count, u):
    return LAMBDA_MIN + (LAMBDA_MAX - LAMBDA_MIN) * (index + u) / count


def sample_wavelengths(rng: RandomStream, n: int) -> np.ndarray:
    """One uniform wavelength per equal-width stratum of [380, 780)."""
    if n < 1:
        raise ValueError("need at least one wavelength sample")
    out = np.empty(n)
    for i in range(n):
        out[i] = stratified_wavelength(i, n, next_float(rng.state))
    return out


def _load_cmf() -> np.ndarray:
    text = (resources.files("matrender") / "data" / "cie1931_2deg_5nm.csv").read_text()
    rows = [
        [float(v) for v in line.split(",")]
        for line in text.splitlines()
        if line.strip() and not line.startswith("#")
    ]
    arr = np.array(rows)
    arr.flags.writeable = False
    return arr


CMF = _load_cmf()
CMF_WAVELENGTHS = CMF[:, 0]
# Y integral of the equal-energy spectrum; normalises XYZ so that E has Y = 1.
Y_EQUAL_ENERGY = float(trapezoid(CMF[:, 2], CMF_WAVELENGTHS))


def _xyz_to_rgb_matrix() -> np.ndarray:
    # sRGB primaries are D65-referred; adapt from the equal-energy white first
    src = _BRADFORD @ _WHITE_E
    dst = _BRADFORD @ _WHITE_D65
    cat = np.linalg.inv(_BRADFORD) @ np.diag(dst / src) @ _BRADFORD
    return _XYZ_TO_SRGB @ cat


XYZ_TO_RGB = _xyz_to_rgb_matrix()


def cmf_at(wavelengths) -> np.ndarray:
    """CIE 1931 (x̄, ȳ, z̄), linearly interpolated, shape (n, 3)."""
    lam = np.atleast_1d(np.asarray(wavelengths, dtype=np.float64))
    return np.stack([np.interp(lam, CMF_WAVELENGTHS, CMF[:, c]) for c in (1, 2, 3)], axis=1)


def spectrum_to_xyz(spd: SpectralPower) -> np.ndarray:
    if len(spd.wavelengths) == 0:
        return np.zeros(3)
    weighted = cmf_at(spd.wavelengths) * spd.power[:, None]
    if len(spd.wavelengths) == 1:
        # a lone sample is treated as a spike carrying its power
        return weighted[0] / Y_EQUAL_ENERGY
    return trapezoid(weighted, spd.wavelengths, axis=0) / Y_EQUAL_ENERGY


def spectrum_to_rgb(spd: SpectralPower) -> np.ndarray:
    """Linear sRGB of a spectrum; an equal-energy spectrum maps to white."""
    return XYZ_TO_RGB @ spectrum_to_xyz(spd)


def rgb_weight_table() -> tuple[np.ndarray, np.ndarray]:
    """Per-wavelength rgb response for single-wavelength path estimates.

    Returns ``(wavelengths, weights)`` with ``weights`` of shape (n, 3),
    normalised so each channel averages to exactly 1 over [380, 780] under
    linear interpolation. A path carrying spectral throughput ``T(λ)`` at a
    uniformly drawn ``λ`` then estimates the rgb tint ``E[T·w]``.
    """
    w = CMF[:, 1:4] @ XYZ_TO_RGB.T
    mean = trapezoid(w, CMF_WAVELENGTHS, axis=0) / (LAMBDA_MAX - LAMBDA_MIN)
    return CMF_WAVELENGTHS.copy(), np.ascontiguousarray(w / mean)


def validate_ior_dir(root) -> list[str]:
    """Return a list of problems found under a material database directory."""
    root = Path(root)
    problems = []
    files: Sequence[Path] = sorted(root.glob("*/*.csv"))
    if not files:
        problems.append(f"{root}: no <family>/<id>.csv files")
    for f in files:
        if f.parent.name not in IOR_FAMILIES:
            problems.append(f"{f}: unknown family directory {f.parent.name!r}")
            continue
        try:
            load_ior_table(f, family=f.parent.name)
        except (IorFormatError, OSError) as exc:
            problems.append(f"{f}: {exc}")
    return problems
