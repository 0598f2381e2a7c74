"""Time integration of the rescaled fifth-order equation

    u_t - u_xxxxx + beta lam^-2 u_xxx + (u^2)_x = 0

on a periodic grid.  The linear phase is applied exactly through the
semigroup, the quadratic term is advanced with classical RK4 on the
integrating-factor transformed variable, so disabling the nonlinearity
reduces a step to the exact linear flow.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .errors import BlowUpError, UnknownFormatVersionError
from .spectral import (
    GridSpec,
    SpectralField,
    dispersion_symbol,
    frequencies,
    inverse_transform,
    mode_numbers,
    project_state,
    read_snapshot,
    retained_mask,
    semigroup_phase,
    sobolev_norm,
    write_snapshot,
)

DEALIAS_MODES = ("galerkin_consistent", "two_thirds", "none")


@dataclass(frozen=True)
class SolverConfig:
    dt: float
    t_end: float
    dealias_mode: str = "galerkin_consistent"
    nonlinearity_enabled: bool = True
    integrator: str = "integrating_factor_rk4"

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.t_end < self.dt:
            raise ValueError("t_end must be at least one step")
        if self.dealias_mode not in DEALIAS_MODES:
            raise ValueError(f"unknown dealias_mode {self.dealias_mode!r}")
        if self.integrator != "integrating_factor_rk4":
            raise ValueError(f"unknown integrator {self.integrator!r}")


@dataclass(frozen=True)
class Trajectory:
    grid: GridSpec
    times: np.ndarray
    snapshots: tuple
    dealias_mode: str = "galerkin_consistent"
    nonlinearity_enabled: bool = True

    def __post_init__(self):
        t = np.asarray(self.times, dtype=np.float64)
        if len(t) != len(self.snapshots):
            raise ValueError("times and snapshots disagree in length")
        if len(t) > 1 and not np.all(np.diff(t) > 0):
            raise ValueError("times must be strictly increasing")
        object.__setattr__(self, "times", t)

    def __len__(self):
        return len(self.snapshots)


def _product_coeffs_padded(a: np.ndarray, b: np.ndarray, m: int) -> np.ndarray:
    """Alias-free coefficient convolution via zero padding to 2M points."""
    mp = 2 * m
    half = m // 2
    ap = np.zeros(mp, dtype=np.complex128)
    bp = np.zeros(mp, dtype=np.complex128)
    ap[:half] = a[:half]
    ap[mp - half:] = a[m - half:]
    bp[:half] = b[:half]
    bp[mp - half:] = b[m - half:]
    prod = np.fft.fft(np.fft.ifft(ap) * np.fft.ifft(bp)) * mp
    out = np.zeros(m, dtype=np.complex128)
    out[:half] = prod[:half]
    out[m - half:] = prod[mp - half:]
    return out


def nonlinearity(u: SpectralField, mode: str = "galerkin_consistent") -> SpectralField:
    """Coefficients of (u^2)_x under the requested truncation.

    galerkin_consistent keeps exactly the convolution pairs whose sum mode
    is retained (the projection of the product of retained fields), which
    is what the modified-energy quadratures assume.  two_thirds zeroes the
    top third of modes before and after squaring.
    """
    g = u.grid
    m = g.num_modes
    xi = frequencies(g)
    if mode == "galerkin_consistent":
        prod = _product_coeffs_padded(u.coeffs, u.coeffs, m)
        out = 1j * xi * prod
        out[~retained_mask(g)] = 0.0
    elif mode == "two_thirds":
        keep = np.abs(mode_numbers(g)) < m / 3.0
        c = np.where(keep, u.coeffs, 0.0)
        prod = np.fft.fft(np.fft.ifft(c) ** 2) * m
        out = 1j * xi * np.where(keep, prod, 0.0)
    elif mode == "none":
        prod = np.fft.fft(np.fft.ifft(u.coeffs) ** 2) * m
        out = 1j * xi * prod
    else:
        raise ValueError(f"unknown dealias mode {mode!r}")
    return u.copy_with(coeffs=out)


def _rhs_nonlinear(coeffs: np.ndarray, grid: GridSpec, mode: str) -> np.ndarray:
    # quadratic term moved to the right-hand side: du/dt = i p u - (u^2)_x
    return -nonlinearity(SpectralField(coeffs, grid), mode).coeffs


def advance(
    u: SpectralField,
    dt: float,
    dealias_mode: str = "galerkin_consistent",
    nonlinearity_enabled: bool = True,
) -> SpectralField:
    """One integrating-factor RK4 step of size dt (either sign)."""
    from .spectral import semigroup_apply

    g = u.grid
    if not nonlinearity_enabled:
        return semigroup_apply(u, dt)
    e_half = semigroup_phase(g, dt / 2.0)
    e_full = e_half * e_half
    c = u.coeffs
    k1 = _rhs_nonlinear(c, g, dealias_mode)
    k2 = _rhs_nonlinear(e_half * (c + 0.5 * dt * k1), g, dealias_mode)
    k3 = _rhs_nonlinear(e_half * c + 0.5 * dt * k2, g, dealias_mode)
    k4 = _rhs_nonlinear(e_full * c + dt * e_half * k3, g, dealias_mode)
    out = e_full * c + (dt / 6.0) * (e_full * k1 + 2.0 * e_half * (k2 + k3) + k4)
    if not np.all(np.isfinite(out.view(np.float64))):
        raise BlowUpError(
            f"non-finite coefficients after step at t={u.time_tag:.6g}",
            time=u.time_tag,
            max_abs=float(np.nanmax(np.abs(out))),
        )
    return SpectralField(out, g, u.time_tag + dt)


def step(u: SpectralField, cfg: SolverConfig) -> SpectralField:
    """Advance one solver step under the given configuration."""
    return advance(u, cfg.dt, cfg.dealias_mode, cfg.nonlinearity_enabled)


def simulate(u0: SpectralField, cfg: SolverConfig, snapshot_stride: int = 1) -> Trajectory:
    """Integrate from 0 to t_end, recording every snapshot_stride-th state.

    The first snapshot is u0 itself (projected to the mean-zero state
    space); times are multiples of dt.
    """
    if snapshot_stride < 1:
        raise ValueError("snapshot_stride must be positive")
    if not np.all(np.isfinite(u0.coeffs.view(np.float64))):
        raise BlowUpError("initial data is not finite", time=0.0)
    state = project_state(u0).copy_with(time_tag=0.0)
    n_steps = int(round(cfg.t_end / cfg.dt))
    if abs(n_steps * cfg.dt - cfg.t_end) > 1e-9 * max(1.0, cfg.t_end):
        n_steps = int(np.ceil(cfg.t_end / cfg.dt - 1e-12))
    times = [0.0]
    snaps = [state]
    for n in range(1, n_steps + 1):
        state = step(state, cfg)
        state = state.copy_with(time_tag=n * cfg.dt)
        if n % snapshot_stride == 0 or n == n_steps:
            times.append(n * cfg.dt)
            snaps.append(state)
    return Trajectory(
        grid=u0.grid,
        times=np.asarray(times),
        snapshots=tuple(snaps),
        dealias_mode=cfg.dealias_mode,
        nonlinearity_enabled=cfg.nonlinearity_enabled,
    )


def conserved_l2(u: SpectralField) -> float:
    """The quadratic invariant ||u||_{L^2}^2."""
    return sobolev_norm(u, 0.0) ** 2


def stable_dt(grid: GridSpec, c_stab: float = 1.0) -> float:
    """Heuristic step bound c_stab / max|p(xi_k)| for the nonlinear remainder."""
    p = dispersion_symbol(frequencies(grid), grid.lam, grid.beta)
    peak = float(np.max(np.abs(p)))
    return c_stab / peak if peak > 0 else c_stab


def traveling_wave(
    c: float,
    grid: GridSpec,
    speed_range: tuple = (0.02, 5.0),
    max_iter: int = 500,
    residual_tol: float = 1e-11,
) -> SpectralField:
    """Mean-zero solitary profile of speed c by stabilised fixed-point iteration.

    Solves (c + xi^4 + lam^-2 xi^2) phi_hat = (phi^2)_hat on the nonzero
    modes, the once-integrated traveling-wave equation.  Requires beta = 1,
    the regime with solitary waves.
    """
    if grid.beta != 1:
        raise ValueError("traveling waves are generated for beta = 1 only")
    if not speed_range[0] <= c <= speed_range[1]:
        raise ValueError(f"speed {c} outside admissible range {speed_range}")
    m = grid.num_modes
    xi = frequencies(grid)
    symbol = c + xi**4 + grid.lam ** (-2.0) * xi**2
    active = retained_mask(grid)
    x = np.arange(m) * grid.dx
    # even bump centred on a grid point so iteration preserves the symmetry
    width = grid.length / 16.0
    guess = np.exp(-(((x - grid.length / 2.0) / width) ** 2))
    phi = np.fft.fft(guess) / m
    phi[~active] = 0.0

    def quad(coeffs):
        out = _product_coeffs_padded(coeffs, coeffs, m)
        out[~active] = 0.0
        return out

    def l2_residual(coeffs):
        return float(
            np.sqrt(grid.length * np.sum(np.abs(symbol * coeffs - quad(coeffs)) ** 2))
        )

    # Stabilised fixed-point stage.  The map contracts to the profile but the
    # fixed point is weakly repelling in round-off, so keep the best iterate
    # and stop once progress stalls.
    best, best_res = phi.copy(), l2_residual(phi)
    stalled = 0
    for _ in range(max_iter):
        q = quad(phi)
        num = np.real(np.sum(symbol * phi * np.conj(phi)))
        den = np.real(np.sum(q * np.conj(phi)))
        if abs(den) < 1e-300 or not np.isfinite(den):
            raise RuntimeError("traveling-wave iteration degenerated")
        s_factor = num / den
        phi = np.where(active, s_factor**2 * q / symbol, 0.0)
        residual = l2_residual(phi)
        if not np.isfinite(residual):
            raise RuntimeError("traveling-wave iteration blew up")
        if residual < best_res:
            best, best_res = phi.copy(), residual
            stalled = 0
        else:
            stalled += 1
        if best_res < 1e-7 or stalled >= 8:
            break
    else:
        if best_res > 1e-4:
            raise RuntimeError(
                f"traveling-wave iteration did not converge; residual {best_res:.3e}"
            )
    phi = best

    # Newton polish: solve (symbol - 2 conv(phi, .)) delta = residual directly
    # on the active modes; quadratic convergence down to round-off.
    act_idx = np.flatnonzero(active)
    k_act = mode_numbers(grid)[act_idx]
    diff = np.subtract.outer(k_act, k_act)
    in_range = np.abs(diff) <= m // 2 - 1
    for _ in range(8):
        f_val = symbol * phi - quad(phi)
        res = l2_residual(phi)
        if res < residual_tol:
            break
        conv_mat = np.where(in_range, phi[diff % m], 0.0)
        jac = np.diag(symbol[act_idx]) - 2.0 * conv_mat
        delta = np.linalg.solve(jac, f_val[act_idx])
        phi = phi.copy()
        phi[act_idx] -= delta
    if l2_residual(phi) > max(residual_tol, 10 * best_res):
        raise RuntimeError("traveling-wave Newton polish failed")
    return SpectralField(phi, grid, 0.0)


def traveling_wave_residual(phi: SpectralField, c: float) -> float:
    """L^2 residual of -c phi' - phi^(5) + lam^-2 phi''' + (phi^2)_x."""
    g = phi.grid
    xi = frequencies(g)
    lin = 1j * (-c * xi - xi**5 - g.lam ** (-2.0) * xi**3) * phi.coeffs
    quad = nonlinearity(phi, "galerkin_consistent").coeffs
    return float(np.sqrt(g.length * np.sum(np.abs(lin + quad) ** 2)))


def align_shift(reference: SpectralField, moved: SpectralField) -> float:
    """Sub-grid shift delta maximising the overlap of moved(x - delta) with reference."""
    g = reference.grid
    xi = frequencies(g)
    corr = np.conj(reference.coeffs) * moved.coeffs

    def mismatch(delta):
        return -np.real(np.sum(corr * np.exp(-1j * xi * delta)))

    # coarse scan then golden-section refinement
    deltas = np.linspace(0.0, g.length, 4 * g.num_modes, endpoint=False)
    vals = -np.real(corr[None, :] @ np.exp(-1j * np.outer(deltas, xi)).T).ravel()
    best = deltas[int(np.argmin(vals))]
    a, b = best - g.dx, best + g.dx
    gr = (np.sqrt(5.0) - 1.0) / 2.0
    c1, c2 = b - gr * (b - a), a + gr * (b - a)
    f1, f2 = mismatch(c1), mismatch(c2)
    for _ in range(80):
        if f1 < f2:
            b, c2, f2 = c2, c1, f1
            c1 = b - gr * (b - a)
            f1 = mismatch(c1)
        else:
            a, c1, f1 = c1, c2, f2
            c2 = a + gr * (b - a)
            f2 = mismatch(c2)
    return float((a + b) / 2.0)


def shifted(u: SpectralField, delta: float) -> SpectralField:
    """Translate the field by delta: u(x - delta)."""
    return u.copy_with(coeffs=u.coeffs * np.exp(-1j * frequencies(u.grid) * delta))


# ---------------------------------------------------------------------------
# Trajectory container format ("KWTR"): header plus snapshot records.

_KWTR_MAGIC = b"KWTR"
_KWTR_VERSION = 1
_KWTR_HEADER = struct.Struct("<4sIQ")


def save_trajectory(traj: Trajectory, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_KWTR_HEADER.pack(_KWTR_MAGIC, _KWTR_VERSION, len(traj)))
        for snap in traj.snapshots:
            write_snapshot(snap, fh)


def load_trajectory(path) -> Trajectory:
    with open(path, "rb") as fh:
        raw = fh.read(_KWTR_HEADER.size)
        if len(raw) != _KWTR_HEADER.size:
            raise ValueError("truncated trajectory header")
        magic, version, count = _KWTR_HEADER.unpack(raw)
        if magic != _KWTR_MAGIC:
            raise ValueError(f"bad trajectory magic {magic!r}")
        if version != _KWTR_VERSION:
            raise UnknownFormatVersionError(f"unknown trajectory version {version}")
        snaps = tuple(read_snapshot(fh) for _ in range(count))
    times = np.asarray([s.time_tag for s in snaps])
    return Trajectory(grid=snaps[0].grid, times=times, snapshots=snaps)


def conserved_trace(traj: Trajectory):
    """Rows (t, l2, h2) for the conserved-quantity CSV."""
    rows = []
    for t, snap in zip(traj.times, traj.snapshots):
        rows.append((float(t), conserved_l2(snap), sobolev_norm(snap, 2.0) ** 2))
    return rows
