"""Periodic spectral representation for fifth-order dispersive waves.

A real field on the torus [0, L) is stored either as M uniform samples or
as M Fourier coefficients with the convention

    u(x_j) = sum_k  c_k exp(i xi_k x_j),      xi_k = 2 pi k / L,

with mode numbers k = 0, 1, ..., M/2-1, -M/2, ..., -1 (FFT order) and the
forward normalisation c_k = (1/M) sum_j u(x_j) exp(-i xi_k x_j).  Under
this convention Parseval reads  ||u||_{L^2}^2 = L sum_k |c_k|^2.

Solver states are mean-zero (c_0 = 0) and keep the unpaired mode k = -M/2
at zero, since an odd derivative of a lone half-mode has no conjugate
partner and would break realness.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from .errors import NonHermitianInputError, ResourceLimitError, UnknownFormatVersionError

HERMITIAN_TOL = 1e-12


@dataclass(frozen=True)
class GridSpec:
    """Uniform periodic grid carrying the dispersion parameters.

    num_modes: retained Fourier modes M (even, >= 4)
    length: spatial period L
    lam: scaling parameter lambda >= 1 entering the dispersion law
    beta: third-order coefficient, one of -1, 0, 1
    """

    num_modes: int
    length: float
    lam: float = 1.0
    beta: int = 1

    def __post_init__(self):
        if self.num_modes < 4 or self.num_modes % 2 != 0:
            raise ValueError(f"num_modes must be even and >= 4, got {self.num_modes}")
        if not self.length > 0:
            raise ValueError(f"length must be positive, got {self.length}")
        if not self.lam >= 1.0:
            raise ValueError(f"lam must be >= 1, got {self.lam}")
        if self.beta not in (-1, 0, 1):
            raise ValueError(f"beta must be -1, 0 or 1, got {self.beta}")

    @property
    def dx(self) -> float:
        return self.length / self.num_modes


@lru_cache(maxsize=256)
def _mode_numbers(m: int) -> np.ndarray:
    k = np.fft.fftfreq(m, d=1.0 / m).astype(np.int64)
    k.setflags(write=False)
    return k


def mode_numbers(grid: GridSpec) -> np.ndarray:
    """Integer mode numbers in FFT order: 0, 1, ..., M/2-1, -M/2, ..., -1."""
    return _mode_numbers(grid.num_modes)


def frequencies(grid: GridSpec) -> np.ndarray:
    """Physical frequencies xi_k = 2 pi k / L in FFT order."""
    return mode_numbers(grid) * (2.0 * np.pi / grid.length)


def grid_points(grid: GridSpec) -> np.ndarray:
    return np.arange(grid.num_modes) * grid.dx


def retained_mask(grid: GridSpec) -> np.ndarray:
    """Dynamically active modes: 1 <= |k| <= M/2 - 1.

    Mode 0 is pinned by the mean-zero convention and the half-mode -M/2
    stays empty, so the same symmetric set drives solver and quadratures.
    """
    k = mode_numbers(grid)
    return (k != 0) & (np.abs(k) <= grid.num_modes // 2 - 1)


@dataclass(frozen=True)
class RealField:
    """Real samples on the uniform grid x_j = j L / M."""

    samples: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "samples", np.asarray(self.samples, dtype=np.float64))
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("RealField samples must be finite")


@dataclass(frozen=True)
class SpectralField:
    """Fourier coefficients of a real field, plus its grid and snapshot time."""

    coeffs: np.ndarray
    grid: GridSpec
    time_tag: float = 0.0

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=np.complex128)
        if c.shape != (self.grid.num_modes,):
            raise ValueError(
                f"coefficient array of length {c.shape} does not match grid M={self.grid.num_modes}"
            )
        object.__setattr__(self, "coeffs", c)

    def copy_with(self, coeffs=None, time_tag=None) -> "SpectralField":
        return SpectralField(
            coeffs=self.coeffs.copy() if coeffs is None else coeffs,
            grid=self.grid,
            time_tag=self.time_tag if time_tag is None else time_tag,
        )


def hermitian_defect(u: SpectralField) -> float:
    """Max deviation from c(-k) = conj(c(k)); the half-mode must be real."""
    c = u.coeffs
    mirrored = np.conj(c[(-np.arange(len(c))) % len(c)])
    return float(np.max(np.abs(c - mirrored)))


def check_hermitian(u: SpectralField, tol: float = 1e-9) -> None:
    defect = hermitian_defect(u)
    scale = max(1.0, float(np.max(np.abs(u.coeffs))))
    if defect > tol * scale:
        raise NonHermitianInputError(f"Hermitian defect {defect:.3e} exceeds tolerance")


def forward_transform(f: RealField, grid: GridSpec, time_tag: float = 0.0) -> SpectralField:
    """Fourier coefficients c_k = (1/M) sum_j f(x_j) exp(-i xi_k x_j)."""
    if len(f.samples) != grid.num_modes:
        raise ValueError(
            f"field length {len(f.samples)} does not match grid M={grid.num_modes}"
        )
    coeffs = np.fft.fft(f.samples) / grid.num_modes
    return SpectralField(coeffs=coeffs, grid=grid, time_tag=time_tag)


def inverse_transform(u: SpectralField) -> RealField:
    """Samples of the real field; rejects visibly non-Hermitian input."""
    values = np.fft.ifft(u.coeffs) * u.grid.num_modes
    scale = max(1.0, float(np.max(np.abs(values))))
    imag = float(np.max(np.abs(values.imag)))
    if imag > 1e-9 * scale:
        raise NonHermitianInputError(
            f"inverse transform produced imaginary residue {imag:.3e}"
        )
    return RealField(samples=values.real)


def dispersion_symbol(xi, lam: float = 1.0, beta: int = 1):
    """Dispersion law xi^5 + beta lam^-2 xi^3 of the rescaled equation."""
    xi = np.asarray(xi, dtype=np.float64)
    out = xi**5 + beta * lam ** (-2.0) * xi**3
    return out if out.ndim else float(out)


def semigroup_phase(grid: GridSpec, t: float) -> np.ndarray:
    return np.exp(1j * dispersion_symbol(frequencies(grid), grid.lam, grid.beta) * t)


def semigroup_apply(u: SpectralField, t: float) -> SpectralField:
    """Exact linear flow: multiply each coefficient by exp(i p(xi_k) t)."""
    return SpectralField(
        coeffs=u.coeffs * semigroup_phase(u.grid, t),
        grid=u.grid,
        time_tag=u.time_tag + t,
    )


def sobolev_norm(u: SpectralField, s: float) -> float:
    """H^s norm (L sum_k <xi_k>^{2s} |c_k|^2)^{1/2} with <x> = sqrt(1+x^2)."""
    xi = frequencies(u.grid)
    weights = (1.0 + xi**2) ** s
    return float(np.sqrt(u.grid.length * np.sum(weights * np.abs(u.coeffs) ** 2)))


def project_state(u: SpectralField) -> SpectralField:
    """Zero the mean and the unpaired half-mode; solver states live here."""
    c = u.coeffs.copy()
    c[0] = 0.0
    c[u.grid.num_modes // 2] = 0.0
    return u.copy_with(coeffs=c)


def scale_field(u0: SpectralField, lam: float, max_modes: int = 1 << 22) -> SpectralField:
    """Rescale u0 -> lam^-4 u0(x/lam) onto a torus of period lam * L.

    The mode count grows with lam so the physical resolution is kept (or
    refined when lam*M is not an even integer, in which case the next even
    count is used).  Coefficients obey the exact change-of-variables rule
    c'_k = lam^-4 c_k at frequency xi_k / lam.
    """
    if lam < 1.0:
        raise ValueError(f"lam must be >= 1, got {lam}")
    g = u0.grid
    if lam == 1.0:
        return u0.copy_with()
    m_exact = lam * g.num_modes
    m_new = int(np.ceil(m_exact - 1e-9))
    if m_new % 2 == 1:
        m_new += 1
    if m_new > max_modes:
        raise ResourceLimitError(
            f"rescaled mode count {m_new} exceeds the cap {max_modes}"
        )
    new_grid = GridSpec(num_modes=m_new, length=lam * g.length, lam=g.lam, beta=g.beta)
    coeffs = np.zeros(m_new, dtype=np.complex128)
    half = g.num_modes // 2
    scale = lam ** (-4.0)
    coeffs[: half] = scale * u0.coeffs[: half]
    coeffs[m_new - half:] = scale * u0.coeffs[g.num_modes - half:]
    return SpectralField(coeffs=coeffs, grid=new_grid, time_tag=u0.time_tag)


# ---------------------------------------------------------------------------
# Snapshot binary format ("KWSF"), little-endian.

_KWSF_MAGIC = b"KWSF"
_KWSF_VERSION = 1
_KWSF_HEADER = struct.Struct("<4sIQddbd")


def write_snapshot(u: SpectralField, fh) -> None:
    g = u.grid
    fh.write(
        _KWSF_HEADER.pack(
            _KWSF_MAGIC, _KWSF_VERSION, g.num_modes, g.length, g.lam, g.beta, u.time_tag
        )
    )
    data = np.empty(2 * g.num_modes, dtype="<f8")
    data[0::2] = u.coeffs.real
    data[1::2] = u.coeffs.imag
    fh.write(data.tobytes())


def read_snapshot(fh) -> SpectralField:
    raw = fh.read(_KWSF_HEADER.size)
    if len(raw) != _KWSF_HEADER.size:
        raise ValueError("truncated snapshot header")
    magic, version, m, length, lam, beta, time_tag = _KWSF_HEADER.unpack(raw)
    if magic != _KWSF_MAGIC:
        raise ValueError(f"bad snapshot magic {magic!r}")
    if version != _KWSF_VERSION:
        raise UnknownFormatVersionError(f"unknown snapshot version {version}")
    body = fh.read(16 * m)
    if len(body) != 16 * m:
        raise ValueError("truncated snapshot body")
    flat = np.frombuffer(body, dtype="<f8")
    coeffs = flat[0::2] + 1j * flat[1::2]
    grid = GridSpec(num_modes=int(m), length=length, lam=lam, beta=int(beta))
    return SpectralField(coeffs=coeffs, grid=grid, time_tag=time_tag)


def save_snapshot(u: SpectralField, path) -> None:
    with open(path, "wb") as fh:
        write_snapshot(u, fh)


def load_snapshot(path) -> SpectralField:
    with open(path, "rb") as fh:
        return read_snapshot(fh)
