"""Discrete space-time Fourier analysis on the (tau, xi) lattice.

Two representations share one set of norm routines:

* SpaceTimeField: a dense M_t x M coefficient array from the windowed
  time transform of a trajectory.  Good for moderate lattices where the
  dispersion curve tau = p(xi) fits inside the tau window.
* ModeCloud: a sparse list of lattice cells (xi, tau, amplitude) with
  exact integer tau bookkeeping.  This is the scalable path for dyadic
  ratio experiments, where fields live near a characteristic whose height
  grows like the fifth power of frequency.

Every norm reduces to sums over cells of weighted root masses
|a| sqrt(T_w L), so both paths agree wherever both are usable.  The
composite norms split the lattice into the low-frequency region, the
small-modulation region near the characteristic, and the far region, and
weight each piece with its own exponents.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Union

import numpy as np

from .errors import UnknownFormatVersionError
from .solver import Trajectory
from .spectral import GridSpec, dispersion_symbol, frequencies

# Fixed composite-norm exponents.
S2_DEFAULT = 25.0 / 168.0
B2_DEFAULT = 79.0 / 168.0
B1_DEFAULT = 19.0 / 42.0

D1, D2, D3 = 1, 2, 3

NORM_KINDS = ("x", "x21", "y", "z", "w")


@dataclass(frozen=True)
class NormSpec:
    kind: str
    s: float = 0.0
    b: float = 0.5
    s2: float = S2_DEFAULT
    b2: float = B2_DEFAULT
    b1: float = B1_DEFAULT

    def __post_init__(self):
        if self.kind not in NORM_KINDS:
            raise ValueError(f"unsupported norm kind {self.kind!r}")
        if self.kind in ("x", "x21") and not 0.0 < self.b <= 1.0:
            raise ValueError("b must lie in (0, 1]")


def modulation(tau, xi, lam: float = 1.0, beta: int = 1):
    """Distance tau - p(xi) from the characteristic surface."""
    tau = np.asarray(tau, dtype=np.float64)
    out = tau - dispersion_symbol(xi, lam, beta)
    return out if np.ndim(out) else float(out)


def region_classify(tau, xi, lam: float = 1.0, beta: int = 1):
    """Label lattice points D3 (|xi| <= 1), D2 (large modulation) or D1.

    Ties go to D1 on the modulation boundary and to D3 at |xi| = 1, so the
    classification is total and deterministic.
    """
    tau = np.asarray(tau, dtype=np.float64)
    xi_arr = np.asarray(xi, dtype=np.float64)
    absxi = np.abs(xi_arr)
    mu = np.abs(tau - dispersion_symbol(xi_arr, lam, beta))
    threshold = (31.0 / 32.0) * absxi**5 + (7.0 / 8.0) * beta * lam ** (-2.0) * absxi**3
    labels = np.where(absxi <= 1.0, D3, np.where(mu > threshold, D2, D1))
    if np.ndim(labels) == 0:
        return int(labels)
    return labels.astype(np.int8)


def region_name(code: int) -> str:
    return {D1: "D1", D2: "D2", D3: "D3"}[int(code)]


# ---------------------------------------------------------------------------
# Dense representation


@dataclass(frozen=True)
class SpaceTimeField:
    """Dense coefficients u~(tau_j, xi_k) on the (tau, xi) lattice.

    tau_j = 2 pi j / t_window in FFT order along axis 0, xi_k along axis 1
    as in the spatial grid.  Coefficients follow the same convention as
    SpectralField: u(t, x) = sum u~ exp(i(tau t + xi x)).
    """

    grid: GridSpec
    t_window: float
    coeffs: np.ndarray
    taper: str = "none"

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=np.complex128)
        if c.ndim != 2 or c.shape[1] != self.grid.num_modes:
            raise ValueError("coefficient array must be (M_t, M)")
        if not np.all(np.isfinite(c.view(np.float64))):
            raise ValueError("space-time coefficients must be finite")
        if self.taper not in ("none", "hann"):
            raise ValueError(f"unknown taper {self.taper!r}")
        object.__setattr__(self, "coeffs", c)

    @property
    def num_times(self) -> int:
        return self.coeffs.shape[0]

    def tau_values(self) -> np.ndarray:
        mt = self.num_times
        return np.fft.fftfreq(mt, d=1.0 / mt) * (2.0 * np.pi / self.t_window)

    def xi_values(self) -> np.ndarray:
        return frequencies(self.grid)

    def physical_samples(self) -> np.ndarray:
        """u(t_n, x_j) on the sample grid (complex in general)."""
        mt, m = self.coeffs.shape
        return np.fft.ifft2(self.coeffs) * (mt * m)


def spacetime_transform(traj: Trajectory, taper: str = "hann") -> SpaceTimeField:
    """Windowed discrete time transform of a uniformly sampled trajectory.

    The snapshot sequence is treated as one period of length n h, tapered,
    and transformed per spatial mode.  With taper "none" this is unitary;
    the hann taper trades exactness for leakage control and the result is
    an upper-bound style stand-in for the restriction norm.
    """
    times = traj.times
    if len(times) < 2:
        raise ValueError("need at least two snapshots")
    h = times[1] - times[0]
    if not np.allclose(np.diff(times), h, rtol=1e-9, atol=1e-12):
        raise ValueError("trajectory is not uniformly sampled")
    mt = len(times)
    snap_matrix = np.stack([s.coeffs for s in traj.snapshots], axis=0)
    if taper == "hann":
        window = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(mt) / mt)
    elif taper == "none":
        window = np.ones(mt)
    else:
        raise ValueError(f"unknown taper {taper!r}")
    coeffs = np.fft.fft(snap_matrix * window[:, None], axis=0) / mt
    return SpaceTimeField(grid=traj.grid, t_window=mt * h, coeffs=coeffs, taper=taper)


def spacetime_l2(f: SpaceTimeField) -> float:
    """L^2(t, x) norm over the window via Parseval."""
    return float(
        np.sqrt(f.t_window * f.grid.length * np.sum(np.abs(f.coeffs) ** 2))
    )


def spacetime_hermitian_defect(f: SpaceTimeField) -> float:
    c = f.coeffs
    mt, m = c.shape
    mirrored = np.conj(c[(-np.arange(mt)) % mt][:, (-np.arange(m)) % m])
    return float(np.max(np.abs(c - mirrored)))


# ---------------------------------------------------------------------------
# Sparse representation


@dataclass(frozen=True)
class ModeCloud:
    """Sparse lattice cells (xi_index, tau_index, amplitude).

    Frequencies are xi_index * dxi and tau_index * dtau with exact int64
    indices, so convolution sums never lose lattice alignment even when
    tau sits at the fifth power of a large frequency.
    """

    dxi: float
    dtau: float
    xi_idx: np.ndarray
    tau_idx: np.ndarray
    amp: np.ndarray
    lam: float = 1.0
    beta: int = 1

    def __post_init__(self):
        xi = np.asarray(self.xi_idx, dtype=np.int64)
        tau = np.asarray(self.tau_idx, dtype=np.int64)
        amp = np.asarray(self.amp, dtype=np.complex128)
        if not (xi.shape == tau.shape == amp.shape) or xi.ndim != 1:
            raise ValueError("cloud arrays must be one-dimensional and aligned")
        object.__setattr__(self, "xi_idx", xi)
        object.__setattr__(self, "tau_idx", tau)
        object.__setattr__(self, "amp", amp)

    def __len__(self):
        return len(self.amp)

    def xi_values(self) -> np.ndarray:
        return self.xi_idx * self.dxi

    def tau_values(self) -> np.ndarray:
        return self.tau_idx.astype(np.float64) * self.dtau

    @property
    def t_window(self) -> float:
        return 2.0 * np.pi / self.dtau

    @property
    def space_period(self) -> float:
        return 2.0 * np.pi / self.dxi

    def deduplicated(self) -> "ModeCloud":
        order = np.lexsort((self.tau_idx, self.xi_idx))
        xi, tau, amp = self.xi_idx[order], self.tau_idx[order], self.amp[order]
        new = np.ones(len(xi), dtype=bool)
        if len(xi) > 1:
            new[1:] = (np.diff(xi) != 0) | (np.diff(tau) != 0)
        starts = np.flatnonzero(new)
        summed = np.add.reduceat(amp, starts) if len(starts) else amp[:0]
        return ModeCloud(
            self.dxi, self.dtau, xi[starts], tau[starts], summed, self.lam, self.beta
        )

    def compatible(self, other: "ModeCloud") -> bool:
        return (
            np.isclose(self.dxi, other.dxi)
            and np.isclose(self.dtau, other.dtau)
            and self.lam == other.lam
            and self.beta == other.beta
        )


def cloud_convolve(u: ModeCloud, v: ModeCloud, max_pairs: int = 50_000_000) -> ModeCloud:
    """Exact coefficient convolution of two sparse fields."""
    if not u.compatible(v):
        raise ValueError("lattice mismatch between clouds")
    n_pairs = len(u) * len(v)
    if n_pairs > max_pairs:
        raise ValueError(f"convolution would touch {n_pairs} pairs")
    xi = (u.xi_idx[:, None] + v.xi_idx[None, :]).ravel()
    tau = (u.tau_idx[:, None] + v.tau_idx[None, :]).ravel()
    amp = (u.amp[:, None] * v.amp[None, :]).ravel()
    return ModeCloud(u.dxi, u.dtau, xi, tau, amp, u.lam, u.beta).deduplicated()


def cloud_l2(u: ModeCloud) -> float:
    return float(
        np.sqrt(u.t_window * u.space_period * np.sum(np.abs(u.amp) ** 2))
    )


# ---------------------------------------------------------------------------
# Cells: the common currency of all norms


def _cells_of(obj) -> tuple:
    """(xi, mu, rootmass, dtau, lam, beta) arrays for either representation."""
    if isinstance(obj, SpaceTimeField):
        g = obj.grid
        tau = obj.tau_values()[:, None]
        xi = obj.xi_values()[None, :]
        mask = obj.coeffs != 0
        xi_b = np.broadcast_to(xi, obj.coeffs.shape)[mask]
        mu = (tau - dispersion_symbol(xi, g.lam, g.beta))
        mu_b = np.broadcast_to(mu, obj.coeffs.shape)[mask]
        rootmass = np.abs(obj.coeffs[mask]) * np.sqrt(obj.t_window * g.length)
        dtau = 2.0 * np.pi / obj.t_window
        return xi_b, mu_b, rootmass, dtau, g.lam, g.beta
    if isinstance(obj, ModeCloud):
        xi = obj.xi_values()
        mu = obj.tau_values() - dispersion_symbol(xi, obj.lam, obj.beta)
        rootmass = np.abs(obj.amp) * np.sqrt(obj.t_window * obj.space_period)
        return xi, mu, rootmass, obj.dtau, obj.lam, obj.beta
    raise TypeError(f"cannot extract cells from {type(obj)!r}")


def _bracket(x):
    return np.sqrt(1.0 + np.asarray(x, dtype=np.float64) ** 2)


def _x_norm(xi, mu, rootmass, s, b):
    w = _bracket(xi) ** s * _bracket(mu) ** b
    return float(np.sqrt(np.sum((w * rootmass) ** 2)))


def _x21_norm(xi, mu, rootmass, s, b):
    if len(xi) == 0:
        return 0.0
    w = _bracket(xi) ** s * _bracket(mu) ** b
    sq = (w * rootmass) ** 2
    j = np.floor(np.log2(_bracket(xi))).astype(np.int64)
    k = np.floor(np.log2(_bracket(mu))).astype(np.int64)
    jmax, kmax = int(j.max()), int(k.max())
    table = np.zeros((jmax + 1, kmax + 1))
    np.add.at(table, (j, k), sq)
    blocks = np.sqrt(table)
    return float(np.sqrt(np.sum(blocks.sum(axis=1) ** 2)))


def _y_norm(xi, mu, rootmass, s, dtau):
    if len(xi) == 0:
        return 0.0
    order = np.argsort(xi, kind="stable")
    xs, ms = xi[order], rootmass[order]
    new = np.ones(len(xs), dtype=bool)
    if len(xs) > 1:
        new[1:] = np.diff(xs) != 0
    starts = np.flatnonzero(new)
    col_sums = np.add.reduceat(ms, starts)
    col_xi = xs[starts]
    col_vals = _bracket(col_xi) ** s * np.sqrt(dtau) * col_sums
    return float(np.sqrt(np.sum(col_vals**2)))


def norm(obj, spec: NormSpec) -> float:
    """Evaluate one of the lattice norms on a dense field or a cloud.

    x    weighted little-l2 with weights <xi>^s <tau-p>^b
    x21  dyadic-block refinement, l2 over frequency shells, l1 over
         modulation shells
    y    l2 over frequency columns of the column l1 in tau
    z    x21(s,1/2) near the characteristic plus x21(s+1,3/10) elsewhere
         plus y
    w    x21(s,1/2) on D1 + x21(s+s2,b2) on D2 + x21(s,b1) on D3 + y
    """
    xi, mu, rootmass, dtau, lam, beta = _cells_of(obj)
    s = spec.s
    if spec.kind == "x":
        return _x_norm(xi, mu, rootmass, s, spec.b)
    if spec.kind == "x21":
        return _x21_norm(xi, mu, rootmass, s, spec.b)
    if spec.kind == "y":
        return _y_norm(xi, mu, rootmass, s, dtau)
    labels = region_classify(mu + dispersion_symbol(xi, lam, beta), xi, lam, beta)
    if spec.kind == "z":
        d1 = labels == D1
        rest = ~d1
        return (
            _x21_norm(xi[d1], mu[d1], rootmass[d1], s, 0.5)
            + _x21_norm(xi[rest], mu[rest], rootmass[rest], s + 1.0, 0.3)
            + _y_norm(xi, mu, rootmass, s, dtau)
        )
    if spec.kind == "w":
        d1 = labels == D1
        d2 = labels == D2
        d3 = labels == D3
        return (
            _x21_norm(xi[d1], mu[d1], rootmass[d1], s, 0.5)
            + _x21_norm(xi[d2], mu[d2], rootmass[d2], s + spec.s2, spec.b2)
            + _x21_norm(xi[d3], mu[d3], rootmass[d3], s, spec.b1)
            + _y_norm(xi, mu, rootmass, s, dtau)
        )
    raise ValueError(f"unsupported norm kind {spec.kind!r}")


# ---------------------------------------------------------------------------
# Mixed space-time Lebesgue norms


def mixed_norm(f: SpaceTimeField, p_space: float, q_time: float, order: str = "space_outer") -> float:
    """Discrete L_x^p L_t^q (space outer) or L_t^q L_x^p norm of the window.

    Periodic rectangle weights in x; trapezoidal weights in t coincide
    with rectangle weights because the window is one full period.
    """
    if order not in ("space_outer", "time_outer"):
        raise ValueError(f"unknown order {order!r}")
    for p in (p_space, q_time):
        if not (p >= 1):
            raise ValueError("exponents must be >= 1 (np.inf allowed)")
    u = np.abs(f.physical_samples())  # shape (M_t, M)
    dt = f.t_window / f.num_times
    dx = f.grid.length / f.grid.num_modes

    def reduce_axis(a, p, w, axis):
        if np.isinf(p):
            return np.max(a, axis=axis)
        return (np.sum(a**p, axis=axis) * w) ** (1.0 / p)

    if order == "space_outer":
        inner = reduce_axis(u, q_time, dt, axis=0)
        return float(reduce_axis(inner, p_space, dx, axis=0))
    inner = reduce_axis(u, p_space, dx, axis=1)
    return float(reduce_axis(inner, q_time, dt, axis=0))


# ---------------------------------------------------------------------------
# The bilinear operator


def _pad_ffts(c: np.ndarray) -> np.ndarray:
    mt, m = c.shape
    out = np.zeros((2 * mt, 2 * m), dtype=np.complex128)
    ht, hm = mt // 2, m // 2
    out[:ht, :hm] = c[:ht, :hm]
    out[:ht, 2 * m - hm:] = c[:ht, m - hm:]
    out[2 * mt - ht:, :hm] = c[mt - ht:, :hm]
    out[2 * mt - ht:, 2 * m - hm:] = c[mt - ht:, m - hm:]
    return out


def convolve_fields(u: SpaceTimeField, v: SpaceTimeField) -> SpaceTimeField:
    """Zero-padded coefficient convolution; output on the doubled lattice."""
    if u.grid != v.grid or not np.isclose(u.t_window, v.t_window):
        raise ValueError("lattice mismatch between fields")
    if u.coeffs.shape != v.coeffs.shape:
        raise ValueError("lattice mismatch between fields")
    mt, m = u.coeffs.shape
    up, vp = _pad_ffts(u.coeffs), _pad_ffts(v.coeffs)
    prod = np.fft.fft2(np.fft.ifft2(up) * np.fft.ifft2(vp)) * (4 * mt * m)
    big_grid = GridSpec(2 * m, u.grid.length, u.grid.lam, u.grid.beta)
    return SpaceTimeField(grid=big_grid, t_window=u.t_window, coeffs=prod, taper="none")


def convolve_fields_direct(u: SpaceTimeField, v: SpaceTimeField) -> SpaceTimeField:
    """O((M_t M)^2) reference convolution used as an oracle at small sizes."""
    if u.grid != v.grid or not np.isclose(u.t_window, v.t_window):
        raise ValueError("lattice mismatch between fields")
    mt, m = u.coeffs.shape
    out = np.zeros((2 * mt, 2 * m), dtype=np.complex128)
    ju = np.fft.fftfreq(mt, d=1.0 / mt).astype(np.int64)
    ku = np.fft.fftfreq(m, d=1.0 / m).astype(np.int64)
    jo = np.fft.fftfreq(2 * mt, d=1.0 / (2 * mt)).astype(np.int64)
    ko = np.fft.fftfreq(2 * m, d=1.0 / (2 * m)).astype(np.int64)
    jpos = {int(val): idx for idx, val in enumerate(jo)}
    kpos = {int(val): idx for idx, val in enumerate(ko)}
    for j1, tj1 in enumerate(ju):
        for k1, tk1 in enumerate(ku):
            a = u.coeffs[j1, k1]
            if a == 0:
                continue
            for j2, tj2 in enumerate(ju):
                for k2, tk2 in enumerate(ku):
                    b = v.coeffs[j2, k2]
                    if b == 0:
                        continue
                    out[jpos[int(tj1 + tj2)], kpos[int(tk1 + tk2)]] += a * b
    big_grid = GridSpec(2 * m, u.grid.length, u.grid.lam, u.grid.beta)
    return SpaceTimeField(grid=big_grid, t_window=u.t_window, coeffs=out, taper="none")


def _apply_duhamel_weight_dense(w: SpaceTimeField) -> SpaceTimeField:
    g = w.grid
    tau = w.tau_values()[:, None]
    xi = w.xi_values()[None, :]
    mu = tau - dispersion_symbol(xi, g.lam, g.beta)
    weighted = w.coeffs * (1j * xi) / _bracket(mu)
    return SpaceTimeField(grid=g, t_window=w.t_window, coeffs=weighted, taper=w.taper)


def _apply_duhamel_weight_cloud(w: ModeCloud) -> ModeCloud:
    xi = w.xi_values()
    mu = w.tau_values() - dispersion_symbol(xi, w.lam, w.beta)
    return ModeCloud(
        w.dxi, w.dtau, w.xi_idx, w.tau_idx, w.amp * (1j * xi) / _bracket(mu),
        w.lam, w.beta,
    )


def bilinear_output(u, v):
    """Convolution of the pair, weighted by i xi <tau - p>^{-1}."""
    if isinstance(u, SpaceTimeField):
        return _apply_duhamel_weight_dense(convolve_fields(u, v))
    if isinstance(u, ModeCloud):
        return _apply_duhamel_weight_cloud(cloud_convolve(u, v))
    raise TypeError(f"unsupported field type {type(u)!r}")


def bilinear_lhs(u, v, s: float, spec: Optional[NormSpec] = None) -> float:
    """Composite-norm size of the quadratic interaction of u and v."""
    out = bilinear_output(u, v)
    w_spec = spec or NormSpec(kind="w", s=s)
    if spec is not None and spec.s != s:
        w_spec = NormSpec(kind=spec.kind, s=s, b=spec.b, s2=spec.s2, b2=spec.b2, b1=spec.b1)
    return norm(out, w_spec)


def algebraic_relation_gap(xi: float, xi1: float, lam: float = 1.0, beta: int = 1) -> tuple:
    """Lower bound forced on the largest modulation, and the exact gap.

    Returns (bound, characteristic_value) where the bound is
    (5/6) |xi xi1 (xi - xi1) (xi^2 + xi1^2 + (xi-xi1)^2 + (6/5) beta lam^-2)|
    and the characteristic value is |p(xi) - p(xi1) - p(xi - xi1)|, the
    modulation forced when both inputs sit exactly on the characteristic.
    """
    xi2 = xi - xi1
    quad = xi**2 + xi1**2 + xi2**2 + 1.2 * beta * lam ** (-2.0)
    bound = (5.0 / 6.0) * abs(xi * xi1 * xi2 * quad)
    char = abs(
        dispersion_symbol(xi, lam, beta)
        - dispersion_symbol(xi1, lam, beta)
        - dispersion_symbol(xi2, lam, beta)
    )
    return float(bound), float(char)


# ---------------------------------------------------------------------------
# Dense field container format ("KWST")

_KWST_MAGIC = b"KWST"
_KWST_VERSION = 1
_KWST_HEADER = struct.Struct("<4sIQQddbdB")
_TAPER_CODES = {"none": 0, "hann": 1}
_TAPER_NAMES = {v: k for k, v in _TAPER_CODES.items()}


def save_spacetime(f: SpaceTimeField, path) -> None:
    g = f.grid
    with open(path, "wb") as fh:
        fh.write(
            _KWST_HEADER.pack(
                _KWST_MAGIC,
                _KWST_VERSION,
                f.num_times,
                g.num_modes,
                g.length,
                g.lam,
                g.beta,
                f.t_window,
                _TAPER_CODES[f.taper],
            )
        )
        flat = np.empty(2 * f.coeffs.size, dtype="<f8")
        flat[0::2] = f.coeffs.real.ravel()
        flat[1::2] = f.coeffs.imag.ravel()
        fh.write(flat.tobytes())


def load_spacetime(path) -> SpaceTimeField:
    with open(path, "rb") as fh:
        raw = fh.read(_KWST_HEADER.size)
        if len(raw) != _KWST_HEADER.size:
            raise ValueError("truncated space-time header")
        magic, version, mt, m, length, lam, beta, t_window, taper = _KWST_HEADER.unpack(raw)
        if magic != _KWST_MAGIC:
            raise ValueError(f"bad space-time magic {magic!r}")
        if version != _KWST_VERSION:
            raise UnknownFormatVersionError(f"unknown space-time version {version}")
        body = fh.read(16 * mt * m)
        if len(body) != 16 * mt * m:
            raise ValueError("truncated space-time body")
    flat = np.frombuffer(body, dtype="<f8")
    coeffs = (flat[0::2] + 1j * flat[1::2]).reshape(int(mt), int(m))
    grid = GridSpec(int(m), length, lam, int(beta))
    return SpaceTimeField(
        grid=grid, t_window=t_window, coeffs=coeffs, taper=_TAPER_NAMES[int(taper)]
    )
