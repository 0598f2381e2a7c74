"""Modified-energy hierarchy for rough-data growth experiments.

The smoothing operator I acts as a Fourier multiplier m(xi) equal to one
below a threshold frequency and decaying like |xi|^s N^{-s} above twice
the threshold.  The quadratic energy ||I u||_{L^2}^2 is not conserved;
adding multilinear correction terms built from the cubic and quartic
symbols below cancels the leading oscillations, and the time derivative
of each corrected energy is again a multilinear functional:

    d/dt E2 = L3(M3),    d/dt E3 = L4(M4),    d/dt E4 = L5(M5),

where Lk sums a symbol against k coefficient factors over zero-sum mode
tuples.  All identities here are exact for the Galerkin-truncated system
as long as every internal pair-sum frequency obeys the same retained-mode
cutoff as the solver's convolution, which is how the quadratures are run.
"""

from __future__ import annotations

import itertools
import math
import os
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import (
    InfeasibleScheduleError,
    NearResonance,
    ResourceLimitError,
    TruncationMismatchError,
)
from .solver import Trajectory
from .spectral import (
    GridSpec,
    SpectralField,
    frequencies,
    mode_numbers,
    retained_mask,
    sobolev_norm,
)

DEFAULT_EPS_DEN = 1e-9


def _mode_cap() -> int:
    return int(os.environ.get("KWLAB_MAX_MODES", "32"))


# ---------------------------------------------------------------------------
# Smoothing multiplier


@dataclass(frozen=True)
class IMultiplier:
    """Even, non-increasing weight: 1 up to N, |xi|^s N^-s beyond 2N.

    On (N, 2N) the two branches are blended with a C^1 smoothstep in
    log-frequency, so the weight stays monotone and endpoint-exact.
    """

    n_threshold: float
    s: float
    blend: str = "smoothstep_c1"

    def __post_init__(self):
        if not self.n_threshold >= 1.0:
            raise ValueError("threshold frequency must be >= 1")
        if not self.s <= 0.0:
            raise ValueError("order s must be <= 0")
        if self.blend != "smoothstep_c1":
            raise ValueError(f"unknown blend {self.blend!r}")


def m_eval(xi, im: IMultiplier):
    """Multiplier value m(xi), vectorised over xi."""
    xi = np.abs(np.asarray(xi, dtype=np.float64))
    scalar = xi.ndim == 0
    xi = np.atleast_1d(xi)
    out = np.ones_like(xi)
    n = im.n_threshold
    if im.s != 0.0:
        high = xi >= 2.0 * n
        if np.any(high):
            out[high] = np.power(xi[high] / n, im.s)
        mid = (xi > n) & ~high
        if np.any(mid):
            t = np.log2(xi[mid] / n)
            w = 3.0 * t**2 - 2.0 * t**3
            out[mid] = np.power(xi[mid] / n, im.s * w)
    return float(out[0]) if scalar else out


def apply_I(u: SpectralField, im: IMultiplier) -> SpectralField:
    """Multiply each coefficient by m(xi_k); keeps Hermitian symmetry."""
    return u.copy_with(coeffs=u.coeffs * m_eval(frequencies(u.grid), im))


# ---------------------------------------------------------------------------
# Multiplier symbols and symmetrisation


@dataclass(frozen=True)
class MultiplierSymbol:
    """Evaluatable function on frequency k-tuples with zero sum.

    The evaluator receives k broadcastable frequency arrays and returns a
    complex array; it must be finite away from the resonance set.
    """

    arity: int
    evaluator: Callable
    name: str = ""

    def __post_init__(self):
        if not 2 <= self.arity <= 5:
            raise ValueError("arity must lie in 2..5")

    def __call__(self, *xi):
        if len(xi) != self.arity:
            raise ValueError(f"expected {self.arity} arguments, got {len(xi)}")
        return self.evaluator(*xi)


def symmetrize(symbol: MultiplierSymbol) -> MultiplierSymbol:
    """Average over all argument permutations."""
    k = symbol.arity
    perms = list(itertools.permutations(range(k)))

    def sym_eval(*xi):
        acc = None
        for perm in perms:
            val = symbol.evaluator(*(xi[p] for p in perm))
            acc = val if acc is None else acc + val
        return acc / len(perms)

    return MultiplierSymbol(arity=k, evaluator=sym_eval, name=f"sym({symbol.name})")


# ---------------------------------------------------------------------------
# Zero-sum tuple enumeration on the retained grid modes


def _retained_modes(grid: GridSpec) -> np.ndarray:
    return mode_numbers(grid)[retained_mask(grid)]


def zero_sum_tuples(grid: GridSpec, k: int) -> np.ndarray:
    """All ordered k-tuples of retained mode numbers summing to zero.

    Returns an integer array of shape (k, T).  The k = 5 enumeration is
    O(M^4) and is refused above the KWLAB_MAX_MODES cap (default 32).
    """
    if k == 5 and grid.num_modes > _mode_cap():
        raise ResourceLimitError(
            f"5-tuple enumeration needs num_modes <= {_mode_cap()}, got {grid.num_modes}"
        )
    r = _retained_modes(grid)
    half = grid.num_modes // 2 - 1
    if k == 2:
        return np.vstack([r, -r])
    if k == 3:
        a, b = np.meshgrid(r, r, indexing="ij")
        a, b = a.ravel(), b.ravel()
        c = -a - b
        keep = (np.abs(c) <= half) & (c != 0)
        return np.vstack([a[keep], b[keep], c[keep]])
    if k == 4:
        a, b, c = np.meshgrid(r, r, r, indexing="ij")
        a, b, c = a.ravel(), b.ravel(), c.ravel()
        d = -a - b - c
        keep = (np.abs(d) <= half) & (d != 0)
        return np.vstack([a[keep], b[keep], c[keep], d[keep]])
    if k == 5:
        chunks = []
        bb, cc, dd = np.meshgrid(r, r, r, indexing="ij")
        bb, cc, dd = bb.ravel(), cc.ravel(), dd.ravel()
        for a in r:
            e = -a - bb - cc - dd
            keep = (np.abs(e) <= half) & (e != 0)
            block = np.vstack(
                [np.full(int(keep.sum()), a), bb[keep], cc[keep], dd[keep], e[keep]]
            )
            chunks.append(block)
        return np.concatenate(chunks, axis=1)
    raise ValueError(f"unsupported tuple order {k}")


def lambda_k(
    symbol: MultiplierSymbol,
    fields: Sequence[SpectralField],
    tuples: Optional[np.ndarray] = None,
) -> complex:
    """Multilinear functional: L-weighted sum of M(xi) prod_l c_l(xi_l).

    The sum runs over ordered zero-sum tuples of retained grid modes, so
    it matches the solver's Galerkin truncation by construction.
    """
    k = symbol.arity
    if len(fields) != k:
        raise ValueError(f"symbol arity {k} but {len(fields)} fields supplied")
    grid = fields[0].grid
    for f in fields[1:]:
        if f.grid != grid:
            raise ValueError("all fields must share one grid")
    if tuples is None:
        tuples = zero_sum_tuples(grid, k)
    if tuples.size == 0:
        return 0.0 + 0.0j
    dxi = 2.0 * np.pi / grid.length
    xi = tuples * dxi
    values = symbol(*xi)
    m = grid.num_modes
    prod = np.ones(tuples.shape[1], dtype=np.complex128)
    for row, f in zip(tuples, fields):
        prod *= f.coeffs[row % m]
    return complex(grid.length * np.sum(values * prod))


def lambda5_monte_carlo(
    symbol_values: Callable,
    u: SpectralField,
    n_samples: int,
    seed: int,
) -> tuple:
    """Unbiased sampled estimate of the quintic functional on large grids.

    Draws (k1..k4) uniformly from the retained modes, closes the tuple,
    and keeps draws whose closing mode is retained.  Returns the estimate
    and its standard error.
    """
    grid = u.grid
    r = _retained_modes(grid)
    half = grid.num_modes // 2 - 1
    rng = np.random.Generator(np.random.PCG64(seed))
    idx = rng.integers(0, len(r), size=(4, n_samples))
    k14 = r[idx]
    k5 = -k14.sum(axis=0)
    keep = (np.abs(k5) <= half) & (k5 != 0)
    tuples = np.vstack([k14, k5])
    dxi = 2.0 * np.pi / grid.length
    vals = np.zeros(n_samples, dtype=np.complex128)
    if np.any(keep):
        xi = tuples[:, keep] * dxi
        sv = symbol_values(*xi)
        prod = np.ones(int(keep.sum()), dtype=np.complex128)
        m = grid.num_modes
        for row in tuples[:, keep]:
            prod *= u.coeffs[row % m]
        vals[keep] = sv * prod
    weight = grid.length * float(len(r)) ** 4
    samples = vals * weight
    est = complex(np.mean(samples))
    stderr = float(np.std(samples.real) / math.sqrt(n_samples))
    return est, stderr


# ---------------------------------------------------------------------------
# Resonance denominators and the correction symbols


def resonance_denominator(xi_tuple, lam: float, beta: int):
    """i (sum xi^5 + beta lam^-2 sum xi^3) on a zero-sum tuple."""
    xs = [np.asarray(x, dtype=np.float64) for x in xi_tuple]
    s5 = sum(x**5 for x in xs)
    s3 = sum(x**3 for x in xs)
    out = 1j * (s5 + beta * lam ** (-2.0) * s3)
    return out if np.ndim(out) else complex(out)


@dataclass
class ResonanceTelemetry:
    """Count of tuples excluded by the resonance guard."""

    excluded: int = 0

    def add(self, n: int):
        self.excluded += int(n)


def m3_values(x1, x2, x3, im: IMultiplier):
    """Cubic energy-flux symbol -2i [m(xi_1) m(xi_23) xi_23]_sym."""
    total = None
    for a, bc in ((x1, (x2, x3)), (x2, (x1, x3)), (x3, (x1, x2))):
        pair = bc[0] + bc[1]
        term = m_eval(a, im) * m_eval(pair, im) * pair
        total = term if total is None else total + term
    return -2j * total / 3.0


def sigma3_values(
    x1,
    x2,
    x3,
    im: IMultiplier,
    lam: float,
    beta: int,
    eps_den: float = DEFAULT_EPS_DEN,
    telemetry: Optional[ResonanceTelemetry] = None,
):
    """Cubic correction symbol -M3 / denominator, zero on guarded tuples."""
    den = resonance_denominator((x1, x2, x3), lam, beta)
    den = np.asarray(den)
    guarded = np.abs(den) < eps_den
    if telemetry is not None and np.any(guarded):
        telemetry.add(np.count_nonzero(guarded))
    safe = np.where(guarded, 1.0, den)
    vals = -m3_values(x1, x2, x3, im) / safe
    return np.where(guarded, 0.0, vals)


def sigma3(xi_tuple, im: IMultiplier, lam: float, beta: int, eps_den: float = DEFAULT_EPS_DEN):
    """Scalar cubic correction; raises NearResonance inside the guard band."""
    den = resonance_denominator(xi_tuple, lam, beta)
    if abs(den) < eps_den:
        raise NearResonance(
            f"denominator {abs(den):.3e} below guard {eps_den:.1e}", tuple_=tuple(xi_tuple)
        )
    x1, x2, x3 = (np.float64(x) for x in xi_tuple)
    return complex(-m3_values(x1, x2, x3, im) / den)


def _pair_indicator(pair_xi, pair_cutoff, dxi):
    """1 where a pair-sum frequency is a retained grid mode, else 0."""
    if pair_cutoff is None:
        return np.ones_like(np.asarray(pair_xi, dtype=np.float64))
    mag = np.abs(pair_xi)
    return ((mag <= pair_cutoff + 0.25 * dxi) & (mag > 0.25 * dxi)).astype(np.float64)


_PAIRS4 = [(c, d) for c in range(4) for d in range(c + 1, 4)]
_PAIRS5 = [(c, d) for c in range(5) for d in range(c + 1, 5)]


def m4_values(
    x1,
    x2,
    x3,
    x4,
    im: IMultiplier,
    lam: float,
    beta: int,
    eps_den: float = DEFAULT_EPS_DEN,
    pair_cutoff: Optional[float] = None,
    telemetry: Optional[ResonanceTelemetry] = None,
    dxi: float = 1.0,
):
    """Quartic symbol -3i [sigma3(xi_1, xi_2, xi_34) xi_34]_sym.

    With pair_cutoff set, pair sums outside the retained band contribute
    nothing; that is the truncation-consistent variant whose quadrature
    reproduces the time derivative of the cubic-corrected energy exactly.
    """
    xs = (x1, x2, x3, x4)
    total = None
    for c, d in _PAIRS4:
        a, b = (i for i in range(4) if i != c and i != d)
        pair = xs[c] + xs[d]
        chi = _pair_indicator(pair, pair_cutoff, dxi)
        term = (
            sigma3_values(xs[a], xs[b], pair, im, lam, beta, eps_den, telemetry)
            * pair
            * chi
        )
        total = term if total is None else total + term
    return -3j * total / 6.0


def sigma4_values(
    x1,
    x2,
    x3,
    x4,
    im: IMultiplier,
    lam: float,
    beta: int,
    eps_den: float = DEFAULT_EPS_DEN,
    pair_cutoff: Optional[float] = None,
    telemetry: Optional[ResonanceTelemetry] = None,
    dxi: float = 1.0,
):
    """Quartic correction -M4 / denominator, zero on guarded tuples."""
    den = np.asarray(resonance_denominator((x1, x2, x3, x4), lam, beta))
    guarded = np.abs(den) < eps_den
    if telemetry is not None and np.any(guarded):
        telemetry.add(np.count_nonzero(guarded))
    safe = np.where(guarded, 1.0, den)
    m4 = m4_values(x1, x2, x3, x4, im, lam, beta, eps_den, pair_cutoff, telemetry, dxi)
    return np.where(guarded, 0.0, -m4 / safe)


def sigma4(xi_tuple, im: IMultiplier, lam: float, beta: int, eps_den: float = DEFAULT_EPS_DEN):
    """Scalar quartic correction; raises NearResonance in the guard band."""
    den = resonance_denominator(xi_tuple, lam, beta)
    if abs(den) < eps_den:
        raise NearResonance(
            f"denominator {abs(den):.3e} below guard {eps_den:.1e}", tuple_=tuple(xi_tuple)
        )
    xs = tuple(np.float64(x) for x in xi_tuple)
    val = sigma4_values(*xs, im=im, lam=lam, beta=beta, eps_den=eps_den)
    return complex(val)


def m5_values(
    x1,
    x2,
    x3,
    x4,
    x5,
    im: IMultiplier,
    lam: float,
    beta: int,
    eps_den: float = DEFAULT_EPS_DEN,
    pair_cutoff: Optional[float] = None,
    telemetry: Optional[ResonanceTelemetry] = None,
    dxi: float = 1.0,
):
    """Quintic symbol -4i [sigma4(xi_1, xi_2, xi_3, xi_45) xi_45]_sym."""
    xs = (x1, x2, x3, x4, x5)
    total = None
    for c, d in _PAIRS5:
        rest = [i for i in range(5) if i != c and i != d]
        pair = xs[c] + xs[d]
        chi = _pair_indicator(pair, pair_cutoff, dxi)
        term = (
            sigma4_values(
                xs[rest[0]], xs[rest[1]], xs[rest[2]], pair,
                im, lam, beta, eps_den, pair_cutoff, telemetry, dxi,
            )
            * pair
            * chi
        )
        total = term if total is None else total + term
    return -4j * total / 10.0


def _m5_values_fast(xs, im, lam, beta, eps_den, pair_cutoff, telemetry, dxi):
    # Unsymmetrised variant: summing over all ordered tuples with identical
    # fields makes explicit symmetrisation redundant (checked in tests).
    pair = xs[3] + xs[4]
    chi = _pair_indicator(pair, pair_cutoff, dxi)
    return (
        -4j
        * sigma4_values(
            xs[0], xs[1], xs[2], pair, im, lam, beta, eps_den, pair_cutoff, telemetry, dxi
        )
        * pair
        * chi
    )


def m3_symbol(im: IMultiplier) -> MultiplierSymbol:
    return MultiplierSymbol(3, lambda a, b, c: m3_values(a, b, c, im), name="M3")


def m4_symbol(im: IMultiplier, lam: float, beta: int, pair_cutoff=None, dxi=1.0) -> MultiplierSymbol:
    return MultiplierSymbol(
        4,
        lambda a, b, c, d: m4_values(
            a, b, c, d, im, lam, beta, pair_cutoff=pair_cutoff, dxi=dxi
        ),
        name="M4",
    )


def m5_symbol(im: IMultiplier, lam: float, beta: int, pair_cutoff=None, dxi=1.0) -> MultiplierSymbol:
    return MultiplierSymbol(
        5,
        lambda a, b, c, d, e: m5_values(
            a, b, c, d, e, im, lam, beta, pair_cutoff=pair_cutoff, dxi=dxi
        ),
        name="M5",
    )


# ---------------------------------------------------------------------------
# Sampled bound checks for the correction symbols


def _log_uniform_zero_sum(rng, k, n, lo=0.05, hi=256.0):
    mags = np.exp(rng.uniform(np.log(lo), np.log(hi), size=(n, k - 1)))
    signs = rng.choice([-1.0, 1.0], size=(n, k - 1))
    head = mags * signs
    return np.hstack([head, -head.sum(axis=1, keepdims=True)])


def m3_bound_check(im: IMultiplier, n_samples: int, seed: int) -> dict:
    """Sampled constant in |M3| <= C |xi_3| m^2(xi_3), smallest frequency last.

    Returns the max and mean ratio over random zero-sum triples plus the
    sample count; tuples where the reference side is at round-off are
    excluded and counted.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    t = _log_uniform_zero_sum(rng, 3, n_samples)
    vals = np.abs(m3_values(t[:, 0], t[:, 1], t[:, 2], im))
    small = np.min(np.abs(t), axis=1)
    reference = small * m_eval(small, im) ** 2
    big = np.max(np.abs(t), axis=1)
    usable = reference > 1e-12 * big
    ratio = vals[usable] / reference[usable]
    return {
        "max_ratio": float(ratio.max()),
        "mean_ratio": float(ratio.mean()),
        "count": int(usable.sum()),
        "excluded": int(n_samples - usable.sum()),
    }


def m4_bound_check(
    im: IMultiplier,
    lam: float,
    beta: int,
    n_samples: int,
    seed: int,
) -> dict:
    """Sampled constant in the quartic-symbol upper bound

        |M4| <= C |den| m^2(xi*) / ((N+|xi_1|)^2 (N+|xi_2|)^2 (N+|xi_3|)^3 (N+|xi_4|))

    with magnitudes sorted descending and xi* the smallest of |xi_4| and
    the three pair-sum magnitudes.  Near-resonant tuples (denominator
    small relative to the tuple's own fifth-power scale) and tuples whose
    bound sits at round-off are excluded and counted: there both sides
    vanish identically and the quotient is numerical noise.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    t = _log_uniform_zero_sum(rng, 4, n_samples)
    big = np.max(np.abs(t), axis=1)
    den = np.abs(resonance_denominator((t[:, 0], t[:, 1], t[:, 2], t[:, 3]), lam, beta))
    nonres = den > 1e-9 * np.maximum(1.0, big**5)
    vals = np.abs(
        m4_values(t[:, 0], t[:, 1], t[:, 2], t[:, 3], im, lam, beta)
    )
    mags = np.sort(np.abs(t), axis=1)[:, ::-1]
    pair_mags = np.stack(
        [
            np.abs(t[:, 0] + t[:, 1]),
            np.abs(t[:, 0] + t[:, 2]),
            np.abs(t[:, 0] + t[:, 3]),
        ]
    )
    xi_star = np.minimum(mags[:, 3], pair_mags.min(axis=0))
    n = im.n_threshold
    reference = (
        den
        * m_eval(xi_star, im) ** 2
        / ((n + mags[:, 0]) ** 2 * (n + mags[:, 1]) ** 2 * (n + mags[:, 2]) ** 3 * (n + mags[:, 3]))
    )
    usable = nonres & (reference > 1e-11 * np.maximum(1.0, big))
    ratio = vals[usable] / reference[usable]
    return {
        "max_ratio": float(ratio.max()),
        "mean_ratio": float(ratio.mean()),
        "count": int(usable.sum()),
        "excluded": int(n_samples - usable.sum()),
    }


# ---------------------------------------------------------------------------
# Modified energies


class EnergyEvaluator:
    """Caches tuple sets and symbol values for one (grid, multiplier) pair.

    Correction and flux symbols depend only on the tuple frequencies, so
    they are computed once and reused across snapshots.  Internal pair
    sums are restricted to the retained band (matching the solver) unless
    galerkin_consistent=False.
    """

    def __init__(
        self,
        grid: GridSpec,
        im: IMultiplier,
        eps_den: float = DEFAULT_EPS_DEN,
        galerkin_consistent: bool = True,
        max_order: int = 4,
    ):
        self.grid = grid
        self.im = im
        self.eps_den = eps_den
        self.telemetry = ResonanceTelemetry()
        dxi = 2.0 * np.pi / grid.length
        self.dxi = dxi
        cutoff = (grid.num_modes // 2 - 1) * dxi if galerkin_consistent else None
        self.pair_cutoff = cutoff
        self._m_sq = m_eval(frequencies(grid), im) ** 2

        self.t3 = zero_sum_tuples(grid, 3)
        xi3 = self.t3 * dxi
        self.sigma3_vals = sigma3_values(
            xi3[0], xi3[1], xi3[2], im, grid.lam, grid.beta, eps_den, self.telemetry
        )
        self.m3_vals = m3_values(xi3[0], xi3[1], xi3[2], im)

        self.t4 = zero_sum_tuples(grid, 4)
        xi4 = self.t4 * dxi
        self.sigma4_vals = sigma4_values(
            xi4[0], xi4[1], xi4[2], xi4[3],
            im, grid.lam, grid.beta, eps_den, cutoff, self.telemetry, dxi,
        )
        self.m4_vals = m4_values(
            xi4[0], xi4[1], xi4[2], xi4[3],
            im, grid.lam, grid.beta, eps_den, cutoff, self.telemetry, dxi,
        )

        self.t5 = None
        self.m5_vals = None
        if max_order >= 4 and grid.num_modes <= _mode_cap():
            self.t5 = zero_sum_tuples(grid, 5)
            xi5 = self.t5 * dxi
            self.m5_vals = _m5_values_fast(
                (xi5[0], xi5[1], xi5[2], xi5[3], xi5[4]),
                im, grid.lam, grid.beta, eps_den, cutoff, self.telemetry, dxi,
            )

    def _contract(self, tuples: np.ndarray, values: np.ndarray, u: SpectralField) -> complex:
        m = self.grid.num_modes
        prod = np.ones(tuples.shape[1], dtype=np.complex128)
        for row in tuples:
            prod *= u.coeffs[row % m]
        return complex(self.grid.length * np.sum(values * prod))

    def e2(self, u: SpectralField) -> float:
        return float(
            self.grid.length * np.sum(self._m_sq * np.abs(u.coeffs) ** 2)
        )

    def correction3(self, u: SpectralField) -> float:
        return self._contract(self.t3, self.sigma3_vals, u).real

    def correction4(self, u: SpectralField) -> float:
        return self._contract(self.t4, self.sigma4_vals, u).real

    def e3(self, u: SpectralField) -> float:
        return self.e2(u) + self.correction3(u)

    def e4(self, u: SpectralField) -> float:
        return self.e3(u) + self.correction4(u)

    def forcing(self, u: SpectralField, order: int) -> float:
        """Exact time derivative of the order-th energy for the truncated flow."""
        if order == 2:
            return self._contract(self.t3, self.m3_vals, u).real
        if order == 3:
            return self._contract(self.t4, self.m4_vals, u).real
        if order == 4:
            if self.m5_vals is None:
                raise ResourceLimitError(
                    "quintic forcing needs the 5-tuple table; grid exceeds the cap"
                )
            return self._contract(self.t5, self.m5_vals, u).real
        raise ValueError("order must be 2, 3 or 4")


def e2(u: SpectralField, im: IMultiplier) -> float:
    """Smoothed quadratic energy ||I u||_{L^2}^2."""
    msq = m_eval(frequencies(u.grid), im) ** 2
    return float(u.grid.length * np.sum(msq * np.abs(u.coeffs) ** 2))


def e3(u: SpectralField, im: IMultiplier, eps_den: float = DEFAULT_EPS_DEN,
       telemetry: Optional[ResonanceTelemetry] = None) -> float:
    ev = EnergyEvaluator(u.grid, im, eps_den, max_order=3)
    out = ev.e3(u)
    if telemetry is not None:
        telemetry.add(ev.telemetry.excluded)
    return out


def e4(u: SpectralField, im: IMultiplier, eps_den: float = DEFAULT_EPS_DEN,
       telemetry: Optional[ResonanceTelemetry] = None) -> float:
    ev = EnergyEvaluator(u.grid, im, eps_den, max_order=3)
    out = ev.e4(u)
    if telemetry is not None:
        telemetry.add(ev.telemetry.excluded)
    return out


# ---------------------------------------------------------------------------
# Derivative-identity residuals and drift experiments


@dataclass
class ResidualSeries:
    times: np.ndarray
    residuals: np.ndarray
    scale: float
    order: int
    excluded: int = 0

    @property
    def max_residual(self) -> float:
        return float(np.max(self.residuals)) if len(self.residuals) else 0.0


def derivative_identity_residual(
    traj: Trajectory,
    im: IMultiplier,
    order: int,
    eps_den: float = DEFAULT_EPS_DEN,
    evaluator: Optional[EnergyEvaluator] = None,
) -> ResidualSeries:
    """Centered-difference check of d/dt E^(order) against its flux functional.

    Snapshot spacing must be uniform.  For linear runs the flux is zero
    and the residual just measures the energy drift.
    """
    if traj.dealias_mode != "galerkin_consistent":
        raise TruncationMismatchError(
            f"trajectory was produced with dealias_mode={traj.dealias_mode!r}; "
            "the quadrature cutoff assumes galerkin_consistent"
        )
    times = traj.times
    if len(times) < 3:
        raise ValueError("need at least three snapshots for centered differences")
    h = times[1] - times[0]
    if not np.allclose(np.diff(times), h, rtol=1e-9, atol=1e-12):
        raise ValueError("snapshots are not uniformly spaced")
    ev = evaluator or EnergyEvaluator(traj.grid, im, eps_den, max_order=order)
    energy_of = {2: ev.e2, 3: ev.e3, 4: ev.e4}[order]
    energies = np.array([energy_of(s) for s in traj.snapshots])
    interior = range(1, len(times) - 1)
    if traj.nonlinearity_enabled:
        flux = np.array([ev.forcing(traj.snapshots[i], order) for i in interior])
        scale = float(np.max(np.abs(flux))) if len(flux) else 1.0
        if scale == 0.0:
            scale = max(abs(energies[0]), 1.0)
    else:
        flux = np.zeros(len(times) - 2)
        scale = max(abs(energies[0]), 1.0)
    cdiff = (energies[2:] - energies[:-2]) / (2.0 * h)
    residuals = np.abs(cdiff - flux) / scale
    return ResidualSeries(
        times=times[1:-1],
        residuals=residuals,
        scale=scale,
        order=order,
        excluded=ev.telemetry.excluded,
    )


@dataclass
class EnergyReport:
    """Energy time series and drifts for one threshold frequency."""

    n_threshold: float
    s: float
    times: np.ndarray
    e2_series: np.ndarray
    e3_series: np.ndarray
    e4_series: np.ndarray
    excluded: int
    grid: GridSpec

    @property
    def drift2(self) -> float:
        return float(np.max(np.abs(self.e2_series - self.e2_series[0])))

    @property
    def drift4(self) -> float:
        return float(np.max(np.abs(self.e4_series - self.e4_series[0])))


@dataclass
class DriftExperimentResult:
    reports: list
    slope_e2: float
    slope_e4: float

    @property
    def n_values(self):
        return [r.n_threshold for r in self.reports]


def energy_series(traj: Trajectory, im: IMultiplier, eps_den: float = DEFAULT_EPS_DEN) -> EnergyReport:
    ev = EnergyEvaluator(traj.grid, im, eps_den, max_order=3)
    e2s, e3s, e4s = [], [], []
    for snap in traj.snapshots:
        base = ev.e2(snap)
        c3 = ev.correction3(snap)
        c4 = ev.correction4(snap)
        e2s.append(base)
        e3s.append(base + c3)
        e4s.append(base + c3 + c4)
    return EnergyReport(
        n_threshold=im.n_threshold,
        s=im.s,
        times=traj.times.copy(),
        e2_series=np.asarray(e2s),
        e3_series=np.asarray(e3s),
        e4_series=np.asarray(e4s),
        excluded=ev.telemetry.excluded,
        grid=traj.grid,
    )


def drift_experiment(
    traj: Trajectory,
    n_values: Sequence[float],
    s: float,
    eps_den: float = DEFAULT_EPS_DEN,
) -> DriftExperimentResult:
    """Drifts of E2 and E4 across a threshold sweep, with fitted slopes.

    The same trajectory is re-measured for every threshold; slopes are the
    least-squares fits of log drift against log N.
    """
    if not (-38.0 / 21.0 - 1e-12 <= s < 0.0):
        raise ValueError("s must lie in [-38/21, 0)")
    xi_max = (traj.grid.num_modes // 2 - 1) * 2.0 * np.pi / traj.grid.length
    for n in n_values:
        if 2.0 * n >= xi_max:
            raise ValueError(
                f"threshold {n} is under-resolved: 2N must stay below {xi_max:.3g}"
            )
    reports = [energy_series(traj, IMultiplier(n, s), eps_den) for n in n_values]
    logn = np.log([r.n_threshold for r in reports])
    slope2 = float(np.polyfit(logn, np.log([max(r.drift2, 1e-300) for r in reports]), 1)[0])
    slope4 = float(np.polyfit(logn, np.log([max(r.drift4, 1e-300) for r in reports]), 1)[0])
    return DriftExperimentResult(reports=reports, slope_e2=slope2, slope_e4=slope4)


# ---------------------------------------------------------------------------
# Global-iteration bookkeeping


@dataclass(frozen=True)
class GwpSchedule:
    s: float
    horizon: float
    eps0: float
    lam: float
    n_threshold: float
    iteration_count: int
    sup_norm_bound: float
    growth_exponent_nested: float
    growth_exponent_product: float
    growth_bound_nested: float
    growth_bound_product: float


def gwp_schedule(
    s: float,
    horizon: float,
    eps0: float,
    c1: float = 1.0,
    c2: float = 1.0,
    max_dyadic: int = 60,
) -> GwpSchedule:
    """Smallest (lambda, N) with lam^{-s-7/2} N^{-s} = eps0 and lam^5 T <= N^{-5s}.

    N runs over powers of two.  The growth exponent of the horizon is
    reported under both readings of the composite fraction, 7/(5(2s+5))
    (the one consistent with this schedule algebra) and (7/5)(2s+5).
    """
    if not (-38.0 / 21.0 - 1e-12 <= s < 0.0):
        raise InfeasibleScheduleError("s must lie in [-38/21, 0)")
    if not horizon > 0:
        raise InfeasibleScheduleError("horizon must be positive")
    if not 0.0 < eps0 < 1.0:
        raise InfeasibleScheduleError("eps0 must lie in (0, 1)")
    exponent = -1.0 / (s + 3.5)
    for j in range(0, max_dyadic + 1):
        n = float(2**j)
        lam = (eps0 * n**s) ** exponent
        if lam < 1.0:
            lam = 1.0
        if lam**5 * horizon <= n ** (-5.0 * s) * (1.0 + 1e-12):
            iterations = int(math.ceil(lam**5 * horizon))
            sup_bound = eps0 * c1 * c2 * lam ** (-s) * n ** (-s)
            exp_nested = 7.0 / (5.0 * (2.0 * s + 5.0))
            exp_product = (7.0 / 5.0) * (2.0 * s + 5.0)
            return GwpSchedule(
                s=s,
                horizon=horizon,
                eps0=eps0,
                lam=lam,
                n_threshold=n,
                iteration_count=max(iterations, 1),
                sup_norm_bound=sup_bound,
                growth_exponent_nested=exp_nested,
                growth_exponent_product=exp_product,
                growth_bound_nested=horizon**exp_nested,
                growth_bound_product=horizon**exp_product,
            )
    raise InfeasibleScheduleError(
        f"no dyadic threshold up to 2^{max_dyadic} satisfies the horizon relation"
    )
